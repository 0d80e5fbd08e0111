pub mod datagen;
pub mod error;
pub mod explain;
pub mod harness;
pub mod io_util;
pub mod metrics;
pub mod models;
pub mod tensor;

pub use error::{Error, Result};
