use serde::{Deserialize, Serialize};

use crate::data::NBestList;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescoreParams {
    /// Weight of the second-pass score.
    pub beta: f64,
}

pub fn combine_scores(first_pass: f64, second_pass: f64, p: RescoreParams) -> f64 {
    first_pass + p.beta * second_pass
}

/// Index of the lowest score; the lowest index wins ties.
pub fn select_best(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = i;
        }
    }
    best
}

/// Levenshtein distance over words with unit costs.
pub fn word_error_count<A: AsRef<str>, B: AsRef<str>>(hyp: &[A], reference: &[B]) -> u32 {
    if hyp.is_empty() {
        return reference.len() as u32;
    }
    let mut prev: Vec<u32> = (0..=hyp.len() as u32).collect();
    let mut cur = vec![0u32; hyp.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i as u32 + 1;
        for (j, h) in hyp.iter().enumerate() {
            let sub = prev[j] + u32::from(h.as_ref() != r.as_ref());
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hyp.len()]
}

/// Rescored 1-best index for each list. `second_pass[u]` may cover only a
/// prefix of list `u`; hypotheses beyond it are not candidates.
pub fn select_all(data: &[NBestList], second_pass: &[Vec<f64>], p: RescoreParams) -> Vec<usize> {
    data.iter()
        .zip(second_pass)
        .map(|(list, lm)| {
            let combined: Vec<f64> = list
                .hypotheses
                .iter()
                .zip(lm)
                .map(|(h, &s)| combine_scores(h.first_pass_score, s, p))
                .collect();
            select_best(&combined)
        })
        .collect()
}

pub fn oracle_selection(data: &[NBestList]) -> Vec<usize> {
    data.iter()
        .map(|l| {
            let errs: Vec<f64> = (0..l.len()).map(|i| l.errors(i) as f64).collect();
            select_best(&errs)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub errors: u64,
    pub words: u64,
    pub wer: f64,
    /// `(errors, reference words)` per utterance.
    pub per_utterance: Vec<(u32, u32)>,
}

pub fn corpus_wer(selections: &[usize], data: &[NBestList]) -> Result<WerBreakdown> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if selections.len() != data.len() {
        return Err(Error::shape("corpus_wer", &[selections.len()], &[data.len()]));
    }
    let per_utterance: Vec<(u32, u32)> = data
        .iter()
        .zip(selections)
        .map(|(l, &i)| (l.errors(i), l.reference.len() as u32))
        .collect();
    let errors: u64 = per_utterance.iter().map(|p| p.0 as u64).sum();
    let words: u64 = per_utterance.iter().map(|p| p.1 as u64).sum();
    if words == 0 {
        return Err(Error::Empty("reference words"));
    }
    Ok(WerBreakdown {
        errors,
        words,
        wer: errors as f64 / words as f64,
        per_utterance,
    })
}

pub fn sweep_beta_scores(dev: &[NBestList], second_pass: &[Vec<f64>], grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Empty("beta grid"));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut best = (grid[0], u64::MAX);
    for &beta in &grid {
        let picks = select_all(dev, second_pass, RescoreParams { beta });
        let errors = corpus_wer(&picks, dev)?.errors;
        if errors < best.1 {
            best = (beta, errors);
        }
    }
    Ok(best.0)
}
