//! Matrix-valued spatio-temporal autoregressions: estimation, simulation and
//! intraday volume forecasting.

pub mod app;
pub mod banded;
pub mod cli;
pub mod diag;
pub mod error;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod tensor;

pub use error::{Error, Result};
