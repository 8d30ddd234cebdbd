use super::nbest::NBestList;
use super::vocab::{encode_hypothesis, Vocabulary, PAD};
use crate::error::{Error, Result};

/// Token ids of `n_seq` sequences padded with `[PAD]` to a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub ids: Vec<usize>,
    /// `false` at padded positions.
    pub key_valid: Vec<bool>,
    pub n_seq: usize,
    pub seq_len: usize,
}

impl EncodedBatch {
    pub fn collate(seqs: &[Vec<usize>]) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let seq_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * seq_len);
        let mut key_valid = Vec::with_capacity(seqs.len() * seq_len);
        for s in seqs {
            ids.extend_from_slice(s);
            key_valid.extend(std::iter::repeat_n(true, s.len()));
            ids.extend(std::iter::repeat_n(PAD, seq_len - s.len()));
            key_valid.extend(std::iter::repeat_n(false, seq_len - s.len()));
        }
        Ok(Self {
            ids,
            key_valid,
            n_seq: seqs.len(),
            seq_len,
        })
    }

    /// Row index of each sequence's first (`[CLS]`) position.
    pub fn cls_rows(&self) -> Vec<usize> {
        (0..self.n_seq).map(|b| b * self.seq_len).collect()
    }
}

/// All hypotheses of several utterances, flattened, with the per-utterance
/// boundaries needed by the MWER loss.
#[derive(Debug, Clone)]
pub struct HypothesisBatch {
    pub encoded: EncodedBatch,
    pub first_pass: Vec<f64>,
    pub errors: Vec<u32>,
    /// `offsets[u]..offsets[u+1]` are the hypotheses of utterance `u`.
    pub offsets: Vec<usize>,
}

impl HypothesisBatch {
    pub fn build(vocab: &Vocabulary, lists: &[&NBestList], nbest: usize, max_len: usize) -> Result<Self> {
        let mut seqs = Vec::new();
        let mut first_pass = Vec::new();
        let mut errors = Vec::new();
        let mut offsets = vec![0];
        for list in lists {
            if list.is_empty() {
                return Err(Error::Empty("n-best list"));
            }
            for (i, h) in list.hypotheses.iter().take(nbest.max(1)).enumerate() {
                seqs.push(encode_hypothesis(vocab, &h.text, max_len));
                first_pass.push(h.first_pass_score);
                errors.push(list.errors(i));
            }
            offsets.push(seqs.len());
        }
        Ok(Self {
            encoded: EncodedBatch::collate(&seqs)?,
            first_pass,
            errors,
            offsets,
        })
    }

    pub fn num_utterances(&self) -> usize {
        self.offsets.len() - 1
    }
}
