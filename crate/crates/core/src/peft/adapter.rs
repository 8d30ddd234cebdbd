use serde::{Deserialize, Serialize};

use super::ensure_unadapted;
use crate::autodiff::Tensor;
use crate::encoder::ScoringModel;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Residual bottleneck adapters after the attention output projection and
/// after the feed-forward block of every layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Bottleneck width; half the model dimension when absent.
    #[serde(default)]
    pub width: Option<usize>,
}

impl AdapterConfig {
    pub fn resolved_width(&self, d_model: usize) -> usize {
        self.width.unwrap_or((d_model / 2).max(1))
    }
}

pub const ADAPTER_SITES: [&str; 2] = ["adapter_attn", "adapter_ffn"];

/// Inserts adapters with a zero-initialized up-projection, so the model
/// output is unchanged at attach time. Only adapters and the head train.
pub fn attach_adapter(mut model: ScoringModel, cfg: &AdapterConfig) -> Result<ScoringModel> {
    ensure_unadapted(&model)?;
    let d = model.config.d_model;
    let w = cfg.resolved_width(d);
    if w == 0 {
        return Err(Error::Config("adapter width must be at least 1".into()));
    }
    let rng = Rng::new(model.config.seed).split(0xADA);
    model.params.set_frozen(|p| !p.role.is_head());
    let std = 1.0 / (d as f64).sqrt();
    for l in 0..model.config.layers {
        for (s, site) in ADAPTER_SITES.iter().enumerate() {
            let prefix = format!("layer{l}.{site}");
            let mut stream = rng.split((2 * l + s) as u64);
            let mut down = Tensor::zeros(&[w, d]);
            down.data_mut().iter_mut().for_each(|x| *x = std * stream.normal());
            model.params.insert(format!("{prefix}.down.weight"), down)?;
            model
                .params
                .insert(format!("{prefix}.down.bias"), Tensor::zeros(&[w]))?;
            model
                .params
                .insert(format!("{prefix}.up.weight"), Tensor::zeros(&[d, w]))?;
            model.params.insert(format!("{prefix}.up.bias"), Tensor::zeros(&[d]))?;
        }
    }
    model.adaptation = Some(super::AdaptationConfig::Adapter(AdapterConfig { width: Some(w) }));
    Ok(model)
}
