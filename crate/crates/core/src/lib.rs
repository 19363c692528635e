pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod gan;
pub mod losses;
pub mod metadata;
pub mod model;
pub mod nn;
pub mod ops;
pub mod preprocess;
pub mod render;
pub mod synthetic;
pub mod train;
pub mod types;

pub use error::{Error, Result};
