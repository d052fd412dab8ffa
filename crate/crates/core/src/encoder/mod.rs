//! Time-frequency encoder, its quantized twin and the training losses.

pub mod losses;
pub mod model;
pub mod quant;
pub mod serial;
pub mod train;

pub use model::{FloatModel, Forward, ModelConfig};
pub use quant::{forward_quantized, quantize_model, LatentSummary, QuantOutput, QuantizedModel};
pub use train::{train_toy, TrainConfig, TrainReport};
