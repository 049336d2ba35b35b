//! Random periodic solutions of `dX = [AX + h(t,X)]dt + σ(t)dW` with a
//! cooperative, stable `A` and a bounded monotone (or anti-monotone) drift
//! `h`.
//!
//! Two routes to the solution are implemented and cross-checked on each
//! sampled noise path:
//!
//! - the pull-back `φ(t, −nT, ω)x` for growing `n` ([`flow`]);
//! - the fixed point of the gain operator `u ↦ h(·, K(u))`, with `Y = K(u)`
//!   ([`operators`]).
//!
//! [`verify`] checks the defining identities of a random periodic solution
//! on the result.

pub mod config;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod noise;
pub mod operators;
pub mod output;
pub mod pipeline;
pub mod presets;
pub mod system;
pub mod verify;

pub use error::{Error, Result};
pub use system::{Monotonicity, SystemSpec};
