//! MWER fine-tuning and the experiment harnesses built on it.

mod adam;
mod experiments;
mod train;

pub use adam::Adam;
pub use experiments::{
    compare_methods, scaling_sweep, stability_sweep, ComparisonReport, DomainData, EvalSettings, MethodRow, MethodSpec,
    ScalingCurve, ScalingPoint, ScalingReport, StabilityCell, StabilityReport, StabilitySpread, WerCell,
};
pub use train::{
    check_model_gradients, compute_gradients, dataset_mwer_loss, lr_at, train, DevPoint, LossPoint, TrainConfig,
    TrainOutcome, TrainReport,
};
