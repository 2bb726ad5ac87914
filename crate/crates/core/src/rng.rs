//! Keyed random streams.
//!
//! Every simulation run reads from a ChaCha8 stream addressed by
//! `(master seed, stream id)`; the draw index is the stream's word position.
//! Replication `r` of a batch uses stream `r`, so a batch is reproducible
//! regardless of the order in which replications are executed.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream reserved for Monte Carlo expectations over the jump-height law.
pub const MONTE_CARLO_STREAM: u64 = u64::MAX;

/// Address of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed {
    pub master: u64,
    pub stream: u64,
}

impl Seed {
    pub const fn new(master: u64, stream: u64) -> Self {
        Seed { master, stream }
    }

    /// Seed of replication `index` under the same master seed.
    pub const fn replication(master: u64, index: u64) -> Self {
        Seed {
            master,
            stream: index,
        }
    }
}

/// Sequential reader over one keyed stream.
#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
    seed: Seed,
    draws: u64,
}

impl StreamRng {
    pub fn new(seed: Seed) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed.master);
        inner.set_stream(seed.stream);
        StreamRng {
            inner,
            seed,
            draws: 0,
        }
    }

    pub fn seed(&self) -> Seed {
        self.seed
    }

    /// Number of 64-bit words consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Exponential with the given rate by inverse CDF. A zero rate yields
    /// `+inf` (the event never happens) but still consumes one draw.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        let u = self.uniform();
        if rate <= 0.0 {
            return f64::INFINITY;
        }
        -libm::log1p(-u) / rate
    }

    /// Standard normal by the Box-Muller cosine branch (two draws).
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }
}
