//! Physics-informed tensor-train ConvLSTM forecasting of gridded field
//! sequences.

mod container;
pub mod cells;
pub mod cli;
pub mod cttd;
pub mod data;
pub mod eof;
pub mod metrics;
pub mod network;
pub mod error;
pub mod params;
pub mod physics;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
