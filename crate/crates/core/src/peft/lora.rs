use serde::{Deserialize, Serialize};

use super::ensure_unadapted;
use crate::autodiff::{kernels, Tensor};
use crate::encoder::ScoringModel;
use crate::error::{Error, Result};
use crate::rng::Rng;

const LORA_A_STD: f64 = 0.02;

/// Dense matrices LoRA can attach to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Q,
    K,
    V,
    O,
    F1,
    F2,
}

impl Target {
    pub const ALL: [Target; 6] = [Target::Q, Target::K, Target::V, Target::O, Target::F1, Target::F2];
    /// Attention query and value projections.
    pub const QV: [Target; 2] = [Target::Q, Target::V];
    /// Query, key, value and both feed-forward matrices.
    pub const QKV_FFN: [Target; 5] = [Target::Q, Target::K, Target::V, Target::F1, Target::F2];

    pub fn name(self) -> &'static str {
        match self {
            Target::Q => "q",
            Target::K => "k",
            Target::V => "v",
            Target::O => "o",
            Target::F1 => "f1",
            Target::F2 => "f2",
        }
    }

    pub fn parse(s: &str) -> Option<Target> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Parameter-name prefix of the host matrix in layer `l`.
    pub fn prefix(self, l: usize) -> String {
        match self {
            Target::F1 | Target::F2 => format!("layer{l}.ffn.{}", self.name()),
            _ => format!("layer{l}.attn.{}", self.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub targets: Vec<Target>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 32.0,
            dropout: 0.01,
            targets: Target::QV.to_vec(),
        }
    }
}

impl LoraConfig {
    /// Multiplier `α/r` on the low-rank branch.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    fn validate(&self, model: &ScoringModel) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::Config("LoRA needs at least one target module".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("LoRA dropout {} outside [0,1)", self.dropout)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config("LoRA alpha must be finite".into()));
        }
        for t in &self.targets {
            let host = model.params.tensor(&format!("{}.weight", t.prefix(0)))?;
            let (d, k) = host.dims2();
            if self.rank == 0 || self.rank > d.min(k) {
                return Err(Error::Config(format!(
                    "LoRA rank {} invalid for {} ({d}×{k})",
                    self.rank,
                    t.name()
                )));
            }
        }
        Ok(())
    }
}

/// Adds a pair `W_A ~ N(0, 0.02²)`, `W_B = 0` to every targeted matrix and
/// freezes everything except the pairs and the scoring head.
pub fn attach_lora(mut model: ScoringModel, cfg: &LoraConfig) -> Result<ScoringModel> {
    ensure_unadapted(&model)?;
    cfg.validate(&model)?;
    let mut targets = cfg.targets.clone();
    targets.sort();
    targets.dedup();
    let rng = Rng::new(model.config.seed).split(0x10_4A);
    model.params.set_frozen(|p| !p.role.is_head());
    for l in 0..model.config.layers {
        for t in &targets {
            let prefix = t.prefix(l);
            let (d, k) = model.params.tensor(&format!("{prefix}.weight"))?.dims2();
            let mut stream = rng.split((l * Target::ALL.len() + *t as usize) as u64);
            let mut a = Tensor::zeros(&[cfg.rank, k]);
            a.data_mut().iter_mut().for_each(|x| *x = LORA_A_STD * stream.normal());
            model.params.insert(format!("{prefix}.lora_a"), a)?;
            model
                .params
                .insert(format!("{prefix}.lora_b"), Tensor::zeros(&[d, cfg.rank]))?;
        }
    }
    model.adaptation = Some(super::AdaptationConfig::Lora(LoraConfig { targets, ..cfg.clone() }));
    Ok(model)
}

/// Folds every pair into its host, `W₀ ← W₀ + (α/r)·W_B·W_A`, and removes
/// the adaptation structures.
pub fn merge_lora(mut model: ScoringModel) -> Result<ScoringModel> {
    let Some(super::AdaptationConfig::Lora(cfg)) = model.adaptation.clone() else {
        return Err(Error::NoLora);
    };
    let scale = cfg.scaling();
    for l in 0..model.config.layers {
        for t in &cfg.targets {
            let prefix = t.prefix(l);
            let a = model.params.tensor(&format!("{prefix}.lora_a"))?.clone();
            let b = model.params.tensor(&format!("{prefix}.lora_b"))?.clone();
            let (d, r) = b.dims2();
            let k = a.dims2().1;
            let mut delta = vec![0.0; d * k];
            kernels::gemm_nn(b.data(), a.data(), &mut delta, d, r, k);
            let host = model.params.get_mut(&format!("{prefix}.weight")).ok_or(Error::NoLora)?;
            for (w, dw) in host.tensor.data_mut().iter_mut().zip(&delta) {
                *w += scale * dw;
            }
        }
    }
    model.params.remove_where(|p| p.role.is_lora());
    model.adaptation = None;
    Ok(model)
}
