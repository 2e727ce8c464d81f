//! Staged-MRI image classifier: tensors with reverse-mode autodiff,
//! CNN + attention layers, the full model, data pipeline, training,
//! metrics, and CAM-family explainability.

pub mod attention;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod explain;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{Dtype, Element, Tensor};
