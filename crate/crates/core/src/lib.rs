// NaN-rejecting checks are written as `!(x > 0.0)` on purpose; dense
// kernels index several arrays with one loop variable.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod lab;
pub mod learning;
pub mod network;
pub mod rng;
pub mod tensor;

pub use data::Dataset;
pub use error::{CopiError, Result};
pub use learning::{ErrorSignalMode, LossKind, Rule, TrainConfig, TrainMetrics};
pub use network::{Activation, Layer, Network, NetworkSpec};
pub use rng::Rng;
pub use tensor::{Init, Matrix};
