pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
