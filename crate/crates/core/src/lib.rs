pub mod augmentation;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod imputation;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use models::{Architecture, Model, ModelSpec};
pub use tensor::{Element, LayerParams, Tensor};
pub use training::{TrainConfig, TrainingCurve};
