pub mod cli;
pub mod conversation;
pub mod encoder;
pub mod model;
pub mod error;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
