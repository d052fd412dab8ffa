//! Verifiable wireless-sensing decisions.
//!
//! Synthetic CSI windows flow through a small time-frequency encoder and its
//! 8-bit quantized twin, a calibrated selective-abstention rule, and a
//! decision-tree policy. Each emitted action is bound to a registered model
//! hash, threshold and time window by a commit-and-prove layer
//! ([`zkp`]), and recorded in a hash-chained audit log ([`audit`]).

pub mod audit;
pub mod calibrate;
pub mod encoder;
pub mod error;
pub mod federated;
pub mod num;
pub mod pipeline;
pub mod policy;
pub mod signal;
pub mod zkp;

pub use error::{Error, Result};
pub use num::Scalar;

/// Double-precision CSI window.
pub type CsiWindow = signal::Window<f64>;
/// Single-precision CSI window, as stored in datasets.
pub type CsiWindowF32 = signal::Window<f32>;
/// Double-precision float reference model.
pub type Model = encoder::FloatModel<f64>;
/// Single-precision float reference model.
pub type ModelF32 = encoder::FloatModel<f32>;
/// Double-precision federated site update.
pub type Update = federated::SiteUpdate<f64>;
