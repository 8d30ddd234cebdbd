use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::words;
use crate::error::{Error, Result};
use crate::eval::word_error_count;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub text: Vec<String>,
    /// First-pass negative log likelihood; lower is more likely.
    pub first_pass_score: f64,
    pub word_errors: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub utt_id: String,
    pub reference: Vec<String>,
    pub hypotheses: Vec<Hypothesis>,
}

impl NBestList {
    /// Builds a list and fills in every hypothesis' word error count.
    pub fn new(utt_id: String, reference: Vec<String>, hyps: Vec<(Vec<String>, f64)>) -> Self {
        let hypotheses = hyps
            .into_iter()
            .map(|(text, score)| Hypothesis {
                word_errors: Some(word_error_count(&text, &reference)),
                text,
                first_pass_score: score,
            })
            .collect();
        Self {
            utt_id,
            reference,
            hypotheses,
        }
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn errors(&self, i: usize) -> u32 {
        let h = &self.hypotheses[i];
        h.word_errors
            .unwrap_or_else(|| word_error_count(&h.text, &self.reference))
    }

    /// Keeps the first `n` hypotheses.
    pub fn truncated(&self, n: usize) -> NBestList {
        NBestList {
            utt_id: self.utt_id.clone(),
            reference: self.reference.clone(),
            hypotheses: self.hypotheses.iter().take(n.max(1)).cloned().collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    utt_id: String,
    #[serde(rename = "ref")]
    reference: String,
    hyps: Vec<HypRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HypRecord {
    text: String,
    score: f64,
}

pub fn load_nbest(path: impl AsRef<Path>) -> Result<Vec<NBestList>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_nbest(file, path)
}

/// Parses JSON Lines N-best records. `origin` is only used in error messages.
pub fn read_nbest(reader: impl Read, origin: &Path) -> Result<Vec<NBestList>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| err(lineno, e.to_string()))?;
        if rec.hyps.is_empty() {
            return Err(err(lineno, "`hyps` must contain at least one hypothesis".into()));
        }
        if let Some(h) = rec.hyps.iter().find(|h| !h.score.is_finite()) {
            return Err(err(lineno, format!("non-finite score {}", h.score)));
        }
        if !seen.insert(rec.utt_id.clone()) {
            return Err(err(lineno, format!("duplicate utterance id `{}`", rec.utt_id)));
        }
        let hyps = rec.hyps.into_iter().map(|h| (words(&h.text), h.score)).collect();
        out.push(NBestList::new(rec.utt_id, words(&rec.reference), hyps));
    }
    Ok(out)
}

pub fn write_nbest(mut writer: impl Write, data: &[NBestList]) -> Result<()> {
    for list in data {
        let rec = Record {
            utt_id: list.utt_id.clone(),
            reference: list.reference.join(" "),
            hyps: list
                .hypotheses
                .iter()
                .map(|h| HypRecord {
                    text: h.text.join(" "),
                    score: h.first_pass_score,
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
