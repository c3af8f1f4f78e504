pub mod checkpoint;
pub mod cosserat;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod ffnn;
pub mod kt;
pub mod numerics;
pub mod training;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
