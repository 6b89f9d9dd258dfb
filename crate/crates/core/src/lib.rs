//! Transformer text classifier with entropy-based attention regularization,
//! plus bias metrics, synthetic test-set generation and term extraction.

pub mod autodiff;
pub mod ear;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod terms;
pub mod text;
pub mod train;

pub use error::{EarError, Result};
pub use model::{Checkpoint, Model, ModelConfig};
pub use tensor::Matrix;
pub use train::{TrainConfig, TrainLog};
