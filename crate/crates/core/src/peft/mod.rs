//! Parameter-efficient adaptation of a [`ScoringModel`]: LoRA, BitFit,
//! residual adapters and plain full fine-tuning, plus the freeze
//! bookkeeping and trainable-parameter accounting they share.

mod accounting;
mod adapter;
mod lora;

pub use accounting::{bias_param_count, forward_flops, trainable_fraction};
pub use adapter::{attach_adapter, AdapterConfig};
pub use lora::{attach_lora, merge_lora, LoraConfig, Target};

use serde::{Deserialize, Serialize};

use crate::encoder::ScoringModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ft,
    Lora,
    Bitfit,
    Adapter,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ft, Method::Lora, Method::Bitfit, Method::Adapter];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ft => "ft",
            Method::Lora => "lora",
            Method::Bitfit => "bitfit",
            Method::Adapter => "adapter",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which parameters adapt, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum AdaptationConfig {
    Ft,
    Lora(LoraConfig),
    Bitfit,
    Adapter(AdapterConfig),
}

impl AdaptationConfig {
    pub fn method(&self) -> Method {
        match self {
            AdaptationConfig::Ft => Method::Ft,
            AdaptationConfig::Lora(_) => Method::Lora,
            AdaptationConfig::Bitfit => Method::Bitfit,
            AdaptationConfig::Adapter(_) => Method::Adapter,
        }
    }
}

fn ensure_unadapted(model: &ScoringModel) -> Result<()> {
    match &model.adaptation {
        None => Ok(()),
        Some(a) => Err(Error::AlreadyAdapted(a.method().to_string())),
    }
}

/// Every parameter trainable.
pub fn attach_full_ft(mut model: ScoringModel) -> Result<ScoringModel> {
    ensure_unadapted(&model)?;
    model.params.set_frozen(|_| false);
    model.adaptation = Some(AdaptationConfig::Ft);
    Ok(model)
}

/// Only bias vectors and the scoring head trainable.
pub fn attach_bitfit(mut model: ScoringModel) -> Result<ScoringModel> {
    ensure_unadapted(&model)?;
    model
        .params
        .set_frozen(|p| !(p.role == crate::encoder::ParamRole::Bias || p.role.is_head()));
    model.adaptation = Some(AdaptationConfig::Bitfit);
    Ok(model)
}

pub fn attach(model: ScoringModel, cfg: &AdaptationConfig) -> Result<ScoringModel> {
    match cfg {
        AdaptationConfig::Ft => attach_full_ft(model),
        AdaptationConfig::Lora(c) => attach_lora(model, c),
        AdaptationConfig::Bitfit => attach_bitfit(model),
        AdaptationConfig::Adapter(c) => attach_adapter(model, c),
    }
}
