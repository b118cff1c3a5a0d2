#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! Numerical laboratory for damped and absorbing semiclassical operators on
//! surfaces of revolution: resolvent scans, geodesic dynamics and damped-wave decay.

pub mod discretize;
pub mod dwe;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod resolvent;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
