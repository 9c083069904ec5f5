pub mod encoder;
pub mod error;
pub mod numerics;
pub mod sampler;
pub mod seed;
pub mod tasks;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
