//! Discriminative MWER loss and the correlation-based regularizer.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Combined scores of several utterances' hypotheses, flattened.
#[derive(Debug, Clone, Copy)]
pub struct MwerBatch<'a> {
    /// `[n]` differentiable combined scores, lower is more likely.
    pub scores: Var,
    pub errors: &'a [u32],
    /// `offsets[u]..offsets[u+1]` index the hypotheses of utterance `u`.
    pub offsets: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub lambda: f64,
    /// Lower bound on every column variance before normalizing.
    pub var_floor: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            var_floor: 1e-8,
        }
    }
}

impl RegularizerConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }
}

/// Expected word errors relative to the list mean, averaged over
/// utterances: `mean_u Σ_i P_i (ε_i − ε̄_u)` with `P = softmax(−s)` per
/// utterance.
pub fn mwer_loss(tape: &mut Tape, batch: MwerBatch<'_>) -> Result<Var> {
    let n = tape.value(batch.scores).numel();
    if batch.errors.len() != n {
        return Err(Error::shape("mwer_loss", &[n], &[batch.errors.len()]));
    }
    let probs = tape.segment_softmax_neg(batch.scores, batch.offsets.to_vec())?;
    let utts = (batch.offsets.len() - 1) as f64;
    let mut weights = vec![0.0; n];
    for w in batch.offsets.windows(2) {
        let seg = &batch.errors[w[0]..w[1]];
        let mean = seg.iter().map(|&e| e as f64).sum::<f64>() / seg.len() as f64;
        for i in w[0]..w[1] {
            weights[i] = (batch.errors[i] as f64 - mean) / utts;
        }
    }
    let shape = tape.value(batch.scores).shape().to_vec();
    let weights = tape.constant(Tensor::new(shape, weights)?);
    let terms = tape.mul(probs, weights)?;
    Ok(tape.sum(terms))
}

/// Frobenius distance between the Pearson correlation matrix of the
/// columns of `cls` (`[n × d]`, one row per sample) and the identity.
pub fn correlation_loss(tape: &mut Tape, cls: Var, cfg: &RegularizerConfig) -> Result<Var> {
    let (n, d) = match *tape.value(cls).shape() {
        [n, d] => (n, d),
        ref s => return Err(Error::shape("correlation_loss", s, &[0, 0])),
    };
    if n < 2 {
        return Err(Error::Contract("correlation needs at least two samples"));
    }
    let mean = tape.mean_rows(cls)?;
    let neg_mean = tape.scale(mean, -1.0);
    let centered = tape.add_row(cls, neg_mean)?;
    let ct = tape.transpose(centered)?;
    let gram = tape.matmul(ct, centered)?;
    let cov = tape.scale(gram, 1.0 / n as f64);
    let var = tape.diag(cov)?;
    let floored = tape.clamp_min(var, cfg.var_floor);
    let inv_std = tape.powf(floored, -0.5);
    let col = tape.reshape(inv_std, vec![d, 1])?;
    let row = tape.reshape(inv_std, vec![1, d])?;
    let norm = tape.matmul(col, row)?;
    let corr = tape.mul(cov, norm)?;
    let eye = tape.constant(Tensor::identity(d));
    let diff = tape.sub(corr, eye)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    Ok(tape.sqrt(total))
}

/// `L_MWER + λ·L_cor`. With `λ = 0` the MWER node itself is returned. The
/// regularizer depends on `cls` only, so parameters downstream of the
/// `[CLS]` state (the scoring head) receive no gradient from it.
pub fn combined_loss(tape: &mut Tape, batch: MwerBatch<'_>, cls: Var, cfg: &RegularizerConfig) -> Result<Var> {
    let mwer = mwer_loss(tape, batch)?;
    if cfg.lambda == 0.0 {
        return Ok(mwer);
    }
    let cor = correlation_loss(tape, cls, cfg)?;
    let weighted = tape.scale(cor, cfg.lambda);
    tape.add(mwer, weighted)
}

/// Value-only MWER loss over plain scores.
pub fn mwer_loss_value(scores: &[f64], errors: &[u32], offsets: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::vector(scores.to_vec()));
    let loss = mwer_loss(
        &mut tape,
        MwerBatch {
            scores: s,
            errors,
            offsets,
        },
    )?;
    Ok(tape.value(loss).item())
}

/// Value-only correlation loss of an `[n × d]` matrix.
pub fn correlation_loss_value(cls: &Tensor, cfg: &RegularizerConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(cls.clone());
    let loss = correlation_loss(&mut tape, x, cfg)?;
    Ok(tape.value(loss).item())
}
