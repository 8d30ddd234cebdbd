//! Score combination, 1-best selection, word error counting and reports.

mod report;
mod wer;

pub use report::{werr, DomainResult, EvalReport};
pub use wer::{
    combine_scores, corpus_wer, oracle_selection, select_all, select_best, sweep_beta_scores, word_error_count,
    RescoreParams, WerBreakdown,
};

use crate::data::NBestList;
use crate::encoder::ScoringModel;
use crate::error::Result;

/// Second-pass scores for every hypothesis (up to `nbest`) of every list.
pub fn second_pass_scores(model: &ScoringModel, data: &[NBestList], nbest: usize) -> Result<Vec<Vec<f64>>> {
    model.score_lists(data, nbest)
}

/// Rescores with `beta` and returns the corpus WER breakdown.
pub fn evaluate(model: &ScoringModel, data: &[NBestList], beta: f64, nbest: usize) -> Result<WerBreakdown> {
    let lm = second_pass_scores(model, data, nbest)?;
    let picks = select_all(data, &lm, RescoreParams { beta });
    corpus_wer(&picks, data)
}

/// Picks the `beta` from `grid` with the lowest dev WER; ties go to the
/// smaller value.
pub fn sweep_beta(model: &ScoringModel, dev: &[NBestList], grid: &[f64], nbest: usize) -> Result<f64> {
    let lm = second_pass_scores(model, dev, nbest)?;
    sweep_beta_scores(dev, &lm, grid)
}
