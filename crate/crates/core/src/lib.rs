//! Robust state-feedback synthesis from noisy input-state data.
//!
//! Plants consistent with a trajectory under L-infinity bounded noise form a
//! basic semialgebraic set. Controllers that superstabilize or quadratically
//! stabilize the whole set are found by compiling sum-of-squares certificates
//! into semidefinite programs, optionally after eliminating the noise
//! variables through a theorem of alternatives.

pub mod bench;
pub mod conic;
pub mod error;
pub mod polyalg;
pub mod psatz;
pub mod robustalt;
pub mod semialg;
pub mod synth;
pub mod sysdata;

pub use error::{Error, Result};
