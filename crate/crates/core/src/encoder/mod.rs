//! BERT-style transformer encoder with a feed-forward scoring head.

mod checkpoint;
mod config;
mod model;
mod params;
mod pretrain;

pub use checkpoint::{
    load_checkpoint, load_lora_delta, read_checkpoint, read_lora_delta, save_checkpoint, save_lora_delta,
    write_checkpoint, write_lora_delta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::EncoderConfig;
pub use model::{Bound, Forward, Mode, ScoringModel};
pub use params::{Param, ParamRole, ParamStore};
pub use pretrain::{pretrain_proxy, PretrainConfig, PretrainOutcome};
