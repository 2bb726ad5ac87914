//! Experiment configuration: a JSON document that maps onto the domain
//! objects of `cascade-core`.

use std::fmt;

use cascade_core::cascade::{CascadeState, DominatingMode};
use cascade_core::{
    CascadeModel, ErlangSumKernel, ErlangTerm, JumpHeightLaw, RateFamily, RateFunction, ScalarLaw,
};
use serde::{Deserialize, Serialize};

use crate::Command;

/// Validation failure, tagged with the path of the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config key `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kernel: Vec<TermConfig>,
    pub rate: RateConfig,
    #[serde(default)]
    pub heights: HeightsConfig,
    /// Initial state in `(i, k)` order; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub dominating: DominatingConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minorization: Option<MinorizationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_replications() -> usize {
    100
}

/// One Erlang term `c e^{-alpha t} t^n / n!`, optionally with its own
/// height law in place of the constant `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub c: f64,
    pub alpha: f64,
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<LawConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateConfig {
    Constant {
        level: f64,
    },
    /// `(mu + slope * y) 1{y >= 0}`.
    LinearPositivePart {
        mu: f64,
        #[serde(default = "one")]
        slope: f64,
    },
    /// `max(0, 1 + y / scale)`.
    ScaledLinear {
        scale: f64,
    },
    /// `base + sigma / (1 + e^{-beta (y - rho)})`.
    Sigmoid {
        #[serde(default = "one")]
        base: f64,
        sigma: f64,
        beta: f64,
        rho: f64,
    },
    /// `min(offset + e^{y / scale}, cap)`.
    CappedExponential {
        offset: f64,
        scale: f64,
        cap: f64,
    },
    /// `min(base + (max(y, 0) / scale)^exponent, cap)`.
    CappedPower {
        #[serde(default = "one")]
        base: f64,
        scale: f64,
        exponent: f64,
        cap: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl RateConfig {
    pub fn build(&self) -> cascade_core::Result<RateFunction> {
        let family = match *self {
            RateConfig::Constant { level } => RateFamily::Constant { level },
            RateConfig::LinearPositivePart { mu, slope } => RateFamily::LinearPositivePart { baseline: mu, slope },
            RateConfig::ScaledLinear { scale } => RateFamily::ScaledLinear { scale },
            RateConfig::Sigmoid { base, sigma, beta, rho } => RateFamily::Sigmoid {
                base,
                amplitude: sigma,
                steepness: beta,
                midpoint: rho,
            },
            RateConfig::CappedExponential { offset, scale, cap } => RateFamily::CappedExponential { offset, scale, cap },
            RateConfig::CappedPower {
                base,
                scale,
                exponent,
                cap,
            } => RateFamily::CappedPower {
                base,
                scale,
                exponent,
                cap,
            },
        };
        RateFunction::new(family)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    PointMass { value: f64 },
    Normal { mean: f64, variance: f64 },
    Uniform { low: f64, high: f64 },
}

impl LawConfig {
    pub fn build(&self) -> ScalarLaw {
        match *self {
            LawConfig::PointMass { value } => ScalarLaw::PointMass(value),
            LawConfig::Normal { mean, variance } => ScalarLaw::Normal { mean, variance },
            LawConfig::Uniform { low, high } => ScalarLaw::Uniform { low, high },
        }
    }
}

/// How jump heights are drawn.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HeightsConfig {
    /// The kernel weights `c_i`, or the per-term `height` overrides.
    #[default]
    Kernel,
    Constant(Vec<f64>),
    Independent(Vec<LawConfig>),
    /// One draw copied into every component.
    Shared(LawConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DominatingConfig {
    #[default]
    FlowBound,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Number of evenly spaced rows in trajectory and coupling CSVs.
    #[serde(default = "default_trajectory_points")]
    pub trajectory_points: usize,
}

fn default_trajectory_points() -> usize {
    1001
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            trajectory_points: default_trajectory_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    /// Evaluation times; `0, step, 2 step, ...` up to the horizon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub step: f64,
    #[serde(default = "default_z")]
    pub z_tolerance: f64,
}

fn default_z() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub y0: Vec<f64>,
    /// Weight function `b(0..=n+1)`; taken from the drift constants when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    #[serde(default = "default_states")]
    pub states: usize,
    /// Far states reach `R * 10^max_decades`.
    #[serde(default = "default_decades")]
    pub max_decades: f64,
}

fn default_states() -> usize {
    1000
}

fn default_decades() -> f64 {
    6.0
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            states: default_states(),
            max_decades: default_decades(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinorizationConfig {
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_probe_horizon")]
    pub horizon: f64,
    /// Defaults to the last block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_block: Option<usize>,
    /// Half-width of the box of ages over which the density floor is taken.
    #[serde(default = "default_neighbourhood")]
    pub neighbourhood: f64,
    #[serde(default = "default_density_samples")]
    pub density_samples: usize,
}

fn default_probes() -> usize {
    100
}

fn default_probe_horizon() -> f64 {
    3.0
}

fn default_neighbourhood() -> f64 {
    0.1
}

fn default_density_samples() -> usize {
    100
}

impl Default for MinorizationConfig {
    fn default() -> Self {
        MinorizationConfig {
            probes: default_probes(),
            horizon: default_probe_horizon(),
            target_block: None,
            neighbourhood: default_neighbourhood(),
            density_samples: default_density_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub command: Command,
    pub parameters: Vec<SweepParameter>,
}

/// A config key written as a dotted path (`kernel.0.alpha`) and the values
/// it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParameter {
    pub path: String,
    pub values: Vec<serde_json::Value>,
}

/// Domain objects built from a validated config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: CascadeModel,
    pub x0: CascadeState,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig =
        serde_path_to_error::deserialize(&mut de).map_err(|e| ConfigError::new(e.path().to_string(), e.inner()))?;
    de.end().map_err(|e| ConfigError::new("", e))?;
    Ok(config)
}

pub fn to_json(config: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serializes")
}

fn check_finite(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(path, "must be finite"))
    }
}

impl ExperimentConfig {
    pub fn kernel(&self) -> Result<ErlangSumKernel, ConfigError> {
        if self.kernel.is_empty() {
            return Err(ConfigError::new("kernel", "needs at least one term"));
        }
        let terms: Vec<ErlangTerm> = self.kernel.iter().map(|t| ErlangTerm::new(t.c, t.alpha, t.n)).collect();
        for (i, term) in terms.iter().enumerate() {
            ErlangSumKernel::new(vec![*term]).map_err(|e| ConfigError::new(format!("kernel[{i}]"), e))?;
        }
        ErlangSumKernel::new(terms).map_err(|e| ConfigError::new("kernel", e))
    }

    pub fn height_law(&self) -> Result<JumpHeightLaw, ConfigError> {
        let l = self.kernel.len();
        let law = match &self.heights {
            HeightsConfig::Kernel => {
                if self.kernel.iter().any(|t| t.height.is_some()) {
                    JumpHeightLaw::Independent(
                        self.kernel
                            .iter()
                            .map(|t| t.height.map_or(ScalarLaw::PointMass(t.c), |h| h.build()))
                            .collect(),
                    )
                } else {
                    JumpHeightLaw::Constant(self.kernel.iter().map(|t| t.c).collect())
                }
            }
            HeightsConfig::Constant(c) => JumpHeightLaw::Constant(c.clone()),
            HeightsConfig::Independent(laws) => JumpHeightLaw::Independent(laws.iter().map(|l| l.build()).collect()),
            HeightsConfig::Shared(law) => JumpHeightLaw::Shared {
                law: law.build(),
                components: l,
            },
        };
        law.validate(l).map_err(|e| ConfigError::new("heights", e))?;
        Ok(law)
    }

    /// Validates every section and builds the model and initial state.
    pub fn build(&self) -> Result<Experiment, ConfigError> {
        let kernel = self.kernel()?;
        let rate = self.rate.build().map_err(|e| ConfigError::new("rate", e))?;
        let heights = self.height_law()?;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(ConfigError::new("horizon", "must be positive and finite"));
        }
        if self.replications == 0 {
            return Err(ConfigError::new("replications", "must be at least 1"));
        }
        if self.output.trajectory_points < 2 {
            return Err(ConfigError::new("output.trajectory_points", "must be at least 2"));
        }
        let x0 = self.state("x0", self.x0.as_deref(), &kernel)?;
        let mode = match self.dominating {
            DominatingConfig::FlowBound => DominatingMode::FlowBound,
            DominatingConfig::Exact => DominatingMode::Exact,
        };
        let model = CascadeModel::new(kernel, rate, heights)
            .map_err(|e| ConfigError::new("", e))?
            .with_dominating(mode);
        if let Some(m) = &self.moments {
            if let Some(times) = &m.times {
                self.check_times("moments.times", times)?;
            }
            if !(m.step > 0.0) {
                return Err(ConfigError::new("moments.step", "must be positive"));
            }
            if !(m.z_tolerance > 0.0) {
                return Err(ConfigError::new("moments.z_tolerance", "must be positive"));
            }
        }
        if let Some(c) = &self.coupling {
            self.state("coupling.y0", Some(&c.y0), &model.kernel)?;
            if let Some(w) = &c.weights {
                let n = model.kernel.max_order() as usize;
                if w.len() != n + 2 {
                    return Err(ConfigError::new("coupling.weights", format!("needs {} entries b(0..=n+1)", n + 2)));
                }
            }
            if let Some(times) = &c.times {
                self.check_times("coupling.times", times)?;
            }
        }
        if let Some(d) = &self.drift {
            if d.states == 0 {
                return Err(ConfigError::new("drift.states", "must be at least 1"));
            }
            check_finite("drift.max_decades", d.max_decades)?;
        }
        if let Some(m) = &self.minorization {
            if !(m.horizon > 0.0) || !m.horizon.is_finite() {
                return Err(ConfigError::new("minorization.horizon", "must be positive and finite"));
            }
            if m.target_block.is_some_and(|b| b >= model.kernel.len()) {
                return Err(ConfigError::new("minorization.target_block", "out of range"));
            }
            if !(m.neighbourhood >= 0.0) {
                return Err(ConfigError::new("minorization.neighbourhood", "must be nonnegative"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.parameters.is_empty() {
                return Err(ConfigError::new("sweep.parameters", "needs at least one parameter"));
            }
            for (i, p) in s.parameters.iter().enumerate() {
                if p.values.is_empty() {
                    return Err(ConfigError::new(format!("sweep.parameters[{i}].values"), "must not be empty"));
                }
            }
        }
        Ok(Experiment {
            config: self.clone(),
            model,
            x0,
        })
    }

    fn state(&self, path: &str, coords: Option<&[f64]>, kernel: &ErlangSumKernel) -> Result<CascadeState, ConfigError> {
        match coords {
            None => Ok(CascadeState::zeros(kernel)),
            Some(v) => {
                for (j, c) in v.iter().enumerate() {
                    check_finite(&format!("{path}[{j}]"), *c)?;
                }
                CascadeState::from_vec(kernel, v.to_vec()).map_err(|e| ConfigError::new(path, e))
            }
        }
    }

    fn check_times(&self, path: &str, times: &[f64]) -> Result<(), ConfigError> {
        if times.is_empty() {
            return Err(ConfigError::new(path, "must not be empty"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ConfigError::new(path, "must be strictly increasing"));
        }
        if times.iter().any(|&t| !(0.0..=self.horizon).contains(&t)) {
            return Err(ConfigError::new(path, "must lie in [0, horizon]"));
        }
        Ok(())
    }

    /// Evenly spaced `0, step, ...` up to the horizon (inclusive when it lands on it).
    pub fn stepped_times(&self, step: f64) -> Vec<f64> {
        let count = (self.horizon / step + 1e-9).floor() as usize;
        (0..=count).map(|j| (j as f64 * step).min(self.horizon)).collect()
    }

    pub fn trajectory_grid(&self) -> Vec<f64> {
        let m = self.output.trajectory_points - 1;
        (0..=m).map(|j| self.horizon * j as f64 / m as f64).collect()
    }
}

/// Sets the value at a dotted path (`kernel.0.alpha`) inside a JSON tree.
pub fn set_path(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<(), String> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        node = match node {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert((*part).to_string(), value);
                    return Ok(());
                }
                map.get_mut(*part).ok_or_else(|| format!("no key `{part}`"))?
            }
            serde_json::Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| format!("`{part}` is not an array index"))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| format!("index {idx} out of range (length {len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("cannot descend into `{part}`")),
        };
    }
    Err("empty path".to_string())
}
