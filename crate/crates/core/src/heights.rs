//! Jump-height laws and expectations over them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::rng::{Seed, StreamRng, MONTE_CARLO_STREAM};

/// One-dimensional height distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarLaw {
    PointMass(f64),
    Normal { mean: f64, variance: f64 },
    Uniform { low: f64, high: f64 },
}

impl ScalarLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScalarLaw::PointMass(v) if !v.is_finite() => Err(invalid("height", "not finite")),
            ScalarLaw::Normal { mean, variance } if !mean.is_finite() || !(variance >= 0.0) || !variance.is_finite() => {
                Err(invalid("normal", "mean must be finite and variance nonnegative"))
            }
            ScalarLaw::Uniform { low, high } if !(low < high) || !low.is_finite() || !high.is_finite() => {
                Err(invalid("uniform", "requires finite low < high"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match *self {
            ScalarLaw::PointMass(_) => true,
            ScalarLaw::Normal { variance, .. } => variance == 0.0,
            ScalarLaw::Uniform { .. } => false,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ScalarLaw::PointMass(v) => v,
            ScalarLaw::Normal { mean, .. } => mean,
            ScalarLaw::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            ScalarLaw::PointMass(v) => v,
            ScalarLaw::Normal { mean, variance } => {
                if variance == 0.0 {
                    mean
                } else {
                    mean + libm::sqrt(variance) * rng.standard_normal()
                }
            }
            ScalarLaw::Uniform { low, high } => low + (high - low) * rng.uniform(),
        }
    }

    /// An interval `(a, b)` not containing 0 with positive mass, if one exists.
    pub fn nonzero_support_interval(&self) -> Option<(f64, f64)> {
        match *self {
            ScalarLaw::PointMass(0.0) => None,
            ScalarLaw::PointMass(v) => {
                let w = 0.5 * v.abs();
                Some((v - w, v + w))
            }
            ScalarLaw::Normal { mean, variance } => {
                if variance == 0.0 {
                    return ScalarLaw::PointMass(mean).nonzero_support_interval();
                }
                let sd = libm::sqrt(variance);
                if mean >= 0.0 {
                    Some((mean.max(0.0) + 0.5 * sd, mean.max(0.0) + 1.5 * sd))
                } else {
                    Some((mean - 1.5 * sd, mean - 0.5 * sd))
                }
            }
            ScalarLaw::Uniform { low, high } => {
                if low >= 0.0 || high <= 0.0 {
                    Some((low, high))
                } else if high >= -low {
                    Some((0.0, high))
                } else {
                    Some((low, 0.0))
                }
            }
        }
    }
}

/// Law `G` of the height vector `(c_1, ..., c_L)` added at each jump.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpHeightLaw {
    /// Deterministic heights.
    Constant(Vec<f64>),
    /// Product measure: component `i` drawn from its own law.
    Independent(Vec<ScalarLaw>),
    /// One scalar draw copied into every component.
    Shared { law: ScalarLaw, components: usize },
}

impl JumpHeightLaw {
    pub fn components(&self) -> usize {
        match self {
            JumpHeightLaw::Constant(c) => c.len(),
            JumpHeightLaw::Independent(laws) => laws.len(),
            JumpHeightLaw::Shared { components, .. } => *components,
        }
    }

    pub fn validate(&self, components: usize) -> Result<()> {
        if self.components() != components {
            return Err(Error::DimensionMismatch {
                what: "jump heights",
                expected: components,
                found: self.components(),
            });
        }
        match self {
            JumpHeightLaw::Constant(c) => {
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("heights", "constant heights must be finite"));
                }
            }
            JumpHeightLaw::Independent(laws) => {
                for law in laws {
                    law.validate()?;
                }
            }
            JumpHeightLaw::Shared { law, .. } => law.validate()?,
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            JumpHeightLaw::Constant(_) => true,
            JumpHeightLaw::Independent(laws) => laws.iter().all(ScalarLaw::is_deterministic),
            JumpHeightLaw::Shared { law, .. } => law.is_deterministic(),
        }
    }

    /// Draws one height vector into `out`. Deterministic laws consume no draws.
    pub fn sample_into(&self, rng: &mut StreamRng, out: &mut [f64]) {
        match self {
            JumpHeightLaw::Constant(c) => out.copy_from_slice(c),
            JumpHeightLaw::Independent(laws) => {
                for (slot, law) in out.iter_mut().zip(laws) {
                    *slot = law.sample(rng);
                }
            }
            JumpHeightLaw::Shared { law, .. } => {
                let v = law.sample(rng);
                out.fill(v);
            }
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let mut out = vec![0.0; self.components()];
        self.sample_into(rng, &mut out);
        out
    }

    /// Per-component intervals avoiding 0 with positive mass, when the law is
    /// a product measure whose factors all charge `{0}^c`.
    pub fn nonzero_support(&self) -> Result<Vec<(f64, f64)>> {
        let laws: Vec<ScalarLaw> = match self {
            JumpHeightLaw::Constant(c) => c.iter().map(|&v| ScalarLaw::PointMass(v)).collect(),
            JumpHeightLaw::Independent(laws) => laws.clone(),
            JumpHeightLaw::Shared { law, components } => vec![*law; *components],
        };
        laws.iter()
            .enumerate()
            .map(|(i, law)| {
                law.nonzero_support_interval().ok_or_else(|| Error::InvalidParameter {
                    name: "heights",
                    reason: format!("component {i} is concentrated at zero"),
                })
            })
            .collect()
    }
}

/// A value with its Monte Carlo standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub const fn exact(value: f64) -> Self {
        Estimate {
            value,
            std_error: 0.0,
        }
    }
}

/// Monte Carlo settings for expectations over the height law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarlo {
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo {
            samples: 20_000,
            seed: 0x5eed_cafe,
        }
    }
}

/// Frozen sample of the height law used for every expectation `E_G[...]`.
///
/// Deterministic laws are represented by their single atom and give exact
/// results; otherwise a fixed sample is drawn once from the reserved Monte
/// Carlo stream, so that every quantity computed from the same
/// `HeightExpectation` uses common random numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightExpectation {
    components: usize,
    draws: Vec<f64>,
    exact: bool,
}

impl HeightExpectation {
    pub fn new(law: &JumpHeightLaw, mc: MonteCarlo) -> Self {
        let components = law.components();
        let mut rng = StreamRng::new(Seed::new(mc.seed, MONTE_CARLO_STREAM));
        if law.is_deterministic() {
            return HeightExpectation {
                components,
                draws: law.sample(&mut rng),
                exact: true,
            };
        }
        let count = mc.samples.max(2);
        let mut draws = vec![0.0; count * components];
        for chunk in draws.chunks_mut(components.max(1)) {
            law.sample_into(&mut rng, chunk);
        }
        HeightExpectation {
            components,
            draws,
            exact: false,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn sample_count(&self) -> usize {
        if self.components == 0 {
            1
        } else {
            self.draws.len() / self.components
        }
    }

    /// Estimates `E_G[g(c)]`.
    pub fn mean<F>(&self, mut g: F) -> Estimate
    where
        F: FnMut(&[f64]) -> f64,
    {
        if self.exact || self.components == 0 {
            return Estimate::exact(g(&self.draws));
        }
        let n = self.sample_count();
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (k, c) in self.draws.chunks(self.components).enumerate() {
            let v = g(c);
            let delta = v - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (v - mean);
        }
        let var = m2 / (n - 1) as f64;
        Estimate {
            value: mean,
            std_error: libm::sqrt(var / n as f64),
        }
    }
}
