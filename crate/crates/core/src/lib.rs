//! Distortion-aware beamforming for cell-free massive MIMO with nonlinear
//! power amplifiers: channel generation, Bussgang PA model, fractional
//! programming, and centralized, ring and star beamforming solvers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod central;
pub mod error;
pub mod experiment;
pub mod fp;
pub mod linalg;
pub mod local;
pub mod metrics;
pub mod pa;
pub mod ring;
pub mod scenario;
pub mod solution;
pub mod star;
pub mod validation;

pub use error::{Error, Result};
