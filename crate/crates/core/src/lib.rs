//! Neural sequence tagging for named entity recognition.

pub mod autodiff;
pub mod crf;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evalscore;
pub mod synth;
pub mod tokenize;
pub mod train;

pub use error::{Error, Result};
