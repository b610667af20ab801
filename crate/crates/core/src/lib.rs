pub mod benchmark;
pub mod cli;
pub mod data;
pub mod evaluation;
pub mod error;
pub mod kv;
pub mod model;
pub mod nn;
pub mod rotary;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
