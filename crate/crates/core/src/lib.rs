pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod detection;
pub mod model;
pub mod synth;
pub mod train;
pub mod adapt;
pub mod metrics;
pub mod daaw;
pub mod checkpoint;
pub mod pipeline;
pub mod distill;
pub mod harness;
