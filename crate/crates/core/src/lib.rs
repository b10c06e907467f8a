pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod features;
pub mod hashing;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod seqmodel;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
