//! A self-contained convolutional micro-framework built around the Pool Skip
//! module: max-pool, max-unpool, one-ring zero pad and a 3x3 convolution
//! bridged by a skip connection, inserted between a convolution and its
//! ReLU.
//!
//! The crate carries an exact closed-form evaluation of the composite
//! operator and a decomposition of its affine and dimensional compensation,
//! reverse-mode differentiation with finite-difference oracles, weight
//! inertia and elimination-singularity diagnostics (Hoyer l2/l1 ratio, dead
//! unit fractions), and a desk-scale training harness with deterministic
//! seeded experiments and CSV reporting.

pub mod autodiff;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod ops;
pub mod pool_skip;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use error::{ConfigError, Error, Result};
pub use tensor::{Shape2D, Tensor};
