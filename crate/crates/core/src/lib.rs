//! Geodesic connectedness of semi-Riemannian and affine manifolds: geodesic
//! integration, a model catalog, shooting and closed-form connectivity
//! tests, penalized-action connectors for bounded domains, stationary
//! spacetime diagnostics, and the multiwarped shooting map.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod connectivity;
pub mod convexity;
mod error;
pub mod expr;
pub mod geometry;
pub mod models;
pub mod multiwarped;
mod params;
pub mod quadrature;
mod solve;
pub mod stationary;

pub use error::{Error, Result};
