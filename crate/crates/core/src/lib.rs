//! Parallel-in-time Kalman filtering and smoothing, iterated posterior
//! linearization, and likelihood-gradient computation for nonlinear
//! state-space models.

mod anderson;
pub mod error;
pub mod estimation;
pub mod gslr;
pub mod iterated;
pub mod kalman;
pub mod linalg;
pub mod models;
pub mod real;
pub mod scan;

pub use error::{Error, Result};
pub use real::{Dual, Real};
