pub mod autodiff;
pub mod baseline;
pub mod combat;
pub mod encoder;
mod error;
pub mod graph;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod world;

pub use error::{Error, Result};
