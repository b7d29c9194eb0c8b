//! Covariance tapering and compactly supported covariance models for Gaussian likelihood
//! estimation and simple kriging on large two-dimensional spatial datasets.

pub mod error;
pub mod estimation;
pub mod geometry;
pub mod io;
pub mod kernels;
pub mod kriging;
pub mod simulation;
pub mod sparse;
pub mod variogram;

pub use error::{Error, Result};
