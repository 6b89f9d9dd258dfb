//! Transformer encoder classifier with attention capture.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use forward::{attention_head, encoder_layer, model_forward, AttentionRecord, ForwardOutput, Model};
pub(crate) use forward::{forward_on_tape, Dropout};
pub use params::{is_decayed, HeadParams, LayerParams, ModelParams};
