//! Learning rules, error signals, losses, and the training loop.

pub mod adam;
pub mod loss;
pub mod rules;
pub mod signals;
pub mod trainer;

pub use adam::{adam_step, AdamParams, AdamState};
pub use loss::{loss_and_output_delta, softmax_columns, LossKind};
pub use rules::{bio_copi_decorr_update, bp_update, copi_decorr_update, copi_forward_update};
pub use signals::{error_signals, ErrorSignalMode};
pub use trainer::{
    decorrelation_epoch, evaluate, layer_offdiag, train, train_with_observer, DecorrRule,
    EpochRecord, Rule, TrainConfig, TrainMetrics,
};
