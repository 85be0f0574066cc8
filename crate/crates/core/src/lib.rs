//! Shifted-window transformer for five-grade retinal image classification.

pub mod error;
pub mod model;
pub mod params;
pub mod preprocess;
pub mod tensor;
pub mod training;
pub mod windowing;

pub use error::{Error, Result, SchemaMismatch};
pub use model::ModelConfig;
pub use params::Params;
pub use tensor::{Mode, Tape, Tensor};
pub use training::{Metrics, TrainConfig, TrainHistory};
