//! Simulation and stability analysis of non-linear Hawkes processes whose
//! memory kernel is a sum of Erlang kernels.
//!
//! Such a process is the first coordinate of a piecewise-deterministic
//! Markov process, the *cascade*, with linear dynamics between jumps. The
//! crate simulates the cascade exactly by thinning, couples two copies of
//! it, and checks drift and minorization conditions numerically.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cascade;
pub mod coupling;
mod error;
pub mod heights;
pub mod kernels;
pub mod linalg;
mod poly;
mod quad;
pub mod rng;
pub mod simulator;
pub mod stability;

pub use cascade::{CascadeState, DominatingMode};
pub use error::{Error, Result};
pub use heights::{Estimate, HeightExpectation, JumpHeightLaw, MonteCarlo, ScalarLaw};
pub use kernels::{ErlangSumKernel, ErlangTerm, RateFamily, RateFunction};
pub use rng::{Seed, StreamRng};
pub use simulator::{CascadeModel, EventLog};
pub use stability::LyapunovSpec;
