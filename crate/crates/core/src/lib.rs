//! Monte Carlo light transport in tubes with Lambertian walls.
//!
//! A ray bouncing inside a semi-infinite strip (2D) or cylinder (3D) moves
//! along the tube axis as a random walk. The exit geometry at the open end
//! is a function of the walk's first passage over the source distance, so
//! most of the work here is a first-passage toolkit: overshoot and
//! undershoot, ladder heights, renewal measures, occupation counts and a
//! numerical solver for the associated Wiener-Hopf equation.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod cylinder3d;
pub mod error;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod strip2d;
pub mod walk;
pub mod wienerhopf;

pub use error::{Error, Result};
pub use rng::RngStream;
