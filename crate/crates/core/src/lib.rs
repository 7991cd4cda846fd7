pub mod bank;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod interchange;
pub mod linalg;
pub mod metrics;
pub mod raster;
pub mod rng;
pub mod scoring;
pub mod train;

pub use error::{Error, Result};
