pub mod agent;
pub mod codec;
pub mod config;
pub mod efs;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod masks;
pub mod raster;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
