//! Second-pass N-best rescoring engine.
//!
//! A small transformer encoder scores every hypothesis of a first-pass
//! N-best list; its score is interpolated with the first-pass score and the
//! combined score is trained discriminatively with the minimum word error
//! rate (MWER) objective. Adaptation to new domains is done with low-rank
//! adaptation (LoRA), optionally regularized by a penalty on the correlation
//! matrix of the `[CLS]` representations. Full fine-tuning, BitFit and
//! residual adapters are provided as baselines, together with the evaluation
//! and experiment harnesses needed to compare them.

pub mod autodiff;
pub mod canonical;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod peft;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
