pub mod autodiff;
pub mod cli;
pub mod encoder;
pub mod episodes;
pub mod error;
pub mod evaluator;
pub mod heads;
pub mod parallel;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
