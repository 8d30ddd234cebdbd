use super::adapter::ADAPTER_SITES;
use super::Target;
use crate::encoder::{ParamRole, ScoringModel};

/// Trainable over total parameter count, adaptation parameters included.
pub fn trainable_fraction(model: &ScoringModel) -> f64 {
    model.params.trainable_count() as f64 / model.params.total_count() as f64
}

/// Bias vectors of the encoder body (layer-norm shifts included).
pub fn bias_param_count(model: &ScoringModel) -> usize {
    model
        .params
        .iter()
        .filter(|p| p.role == ParamRole::Bias)
        .map(|p| p.tensor.numel())
        .sum()
}

/// Multiply-accumulate count of one forward pass over a single sequence of
/// `seq_len` tokens, given the structures currently attached.
pub fn forward_flops(model: &ScoringModel, seq_len: usize) -> u64 {
    let c = &model.config;
    let (t, d, ff) = (seq_len as u64, c.d_model as u64, c.d_ff as u64);
    let mut total = 0u64;
    for l in 0..c.layers {
        total += 4 * t * d * d; // q, k, v, o
        total += 2 * t * t * d; // scores and weighted sum
        total += 2 * t * d * ff;
        for target in Target::ALL {
            let prefix = target.prefix(l);
            if let (Some(a), Some(b)) = (
                model.params.get(&format!("{prefix}.lora_a")),
                model.params.get(&format!("{prefix}.lora_b")),
            ) {
                total += t * (a.tensor.numel() + b.tensor.numel()) as u64;
            }
        }
        for site in ADAPTER_SITES {
            for part in ["down", "up"] {
                if let Some(p) = model.params.get(&format!("layer{l}.{site}.{part}.weight")) {
                    total += t * p.tensor.numel() as u64;
                }
            }
        }
    }
    let h = c.head_hidden() as u64;
    total + d * h + h
}
