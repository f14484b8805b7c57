//! Regularized entropy-based moment closures for linear kinetic equations in
//! slab geometry.
//!
//! The crate is organised bottom-up:
//!
//! - [`quadrature`]: Gauss–Legendre rules on the velocity interval `[-1, 1]`.
//! - [`basis`]: the monomial velocity basis and the normalization /
//!   fruncation algebra on moment vectors.
//! - [`entropy`]: dual objectives, the damped Newton solver, the reduced
//!   partially regularized problem and all lifting / reconstruction maps.
//! - [`sampler`]: training data generation over bounded multiplier sets.
//! - [`surrogate`]: input-convex (and ResNet baseline) networks for the
//!   reduced entropy, their training and closure inference.
//! - [`kinetic`]: a 1D finite-volume solver with pluggable closures and a
//!   discrete-ordinates reference.

pub mod basis;
pub mod entropy;
pub mod error;
pub mod kinetic;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod surrogate;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
