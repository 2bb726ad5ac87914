//! Erlang-sum memory kernels, jump-rate functions and the stability
//! conditions that relate them.
//!
//! A kernel is `h(t) = sum_i c_i exp(-alpha_i t) t^{n_i} / n_i!`. Each term
//! contributes a block of `n_i + 1` coordinates to the cascade state, so the
//! state dimension is `L + sum_i n_i`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{invalid, Error, Result};
use crate::heights::{Estimate, HeightExpectation};
use crate::quad;
use crate::stability::{DriftBranch, LyapunovSpec};

/// One Erlang term `weight * exp(-decay t) t^order / order!`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErlangTerm {
    pub weight: f64,
    pub decay: f64,
    pub order: u32,
}

impl ErlangTerm {
    pub const fn new(weight: f64, decay: f64, order: u32) -> Self {
        ErlangTerm {
            weight,
            decay,
            order,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.weight * erlang_factor(self.decay, self.order, t)
    }
}

/// `exp(-decay t) t^order / order!`, with `t^0 = 1` at the origin.
pub(crate) fn erlang_factor(decay: f64, order: u32, t: f64) -> f64 {
    let mut v = libm::exp(-decay * t);
    for m in 1..=order {
        v *= t / m as f64;
    }
    v
}

/// Sum of `L >= 1` Erlang terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ErlangSumKernel {
    terms: Vec<ErlangTerm>,
    offsets: Vec<usize>,
    dimension: usize,
}

impl ErlangSumKernel {
    pub fn new(terms: Vec<ErlangTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(invalid("kernel", "needs at least one term"));
        }
        for term in &terms {
            if !(term.decay > 0.0) || !term.decay.is_finite() {
                return Err(invalid("alpha", "decay rates must be positive and finite"));
            }
            if !term.weight.is_finite() {
                return Err(invalid("c", "weights must be finite"));
            }
        }
        let mut offsets = Vec::with_capacity(terms.len());
        let mut dimension = 0;
        for term in &terms {
            offsets.push(dimension);
            dimension += term.order as usize + 1;
        }
        Ok(ErlangSumKernel {
            terms,
            offsets,
            dimension,
        })
    }

    /// Single-term kernel.
    pub fn single(weight: f64, decay: f64, order: u32) -> Result<Self> {
        Self::new(alloc::vec![ErlangTerm::new(weight, decay, order)])
    }

    pub fn terms(&self) -> &[ErlangTerm] {
        &self.terms
    }

    /// Number of terms `L`.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Cascade dimension `kappa = L + sum n_i`.
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn max_order(&self) -> u32 {
        self.terms.iter().map(|t| t.order).max().unwrap_or(0)
    }

    pub fn min_decay(&self) -> f64 {
        self.terms.iter().map(|t| t.decay).fold(f64::INFINITY, f64::min)
    }

    pub fn max_decay(&self) -> f64 {
        self.terms.iter().map(|t| t.decay).fold(0.0, f64::max)
    }

    /// Coordinates of block `i` in the flat state vector.
    pub fn block(&self, i: usize) -> Range<usize> {
        let start = self.offsets[i];
        start..start + self.terms[i].order as usize + 1
    }

    /// Flat index of coordinate `(i, k)`.
    pub fn index(&self, i: usize, k: usize) -> usize {
        debug_assert!(k <= self.terms[i].order as usize);
        self.offsets[i] + k
    }

    /// Flat index of the coordinate `(i, n_i)` that receives jumps.
    pub fn jump_index(&self, i: usize) -> usize {
        self.offsets[i] + self.terms[i].order as usize
    }

    /// Evaluates `h(t)`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        Ok(self.terms.iter().map(|term| term.eval(t)).sum())
    }

    /// Upper bound on `int_T^inf |h|` from the exact Erlang tails.
    fn tail_bound(&self, horizon: f64) -> f64 {
        self.terms
            .iter()
            .map(|term| {
                let x = term.decay * horizon;
                let mut partial = 0.0;
                let mut power = 1.0;
                for m in 0..=term.order {
                    if m > 0 {
                        power *= x / m as f64;
                    }
                    partial += power;
                }
                term.weight.abs() * libm::exp(-x) * partial
                    / libm::pow(term.decay, f64::from(term.order + 1))
            })
            .sum()
    }

    /// `sum_i |c_i| / alpha_i^{n_i+1}`, which is `int |h|` when all weights
    /// share one sign.
    pub fn l1_norm_single_sign(&self) -> Option<f64> {
        let positive = self.terms.iter().all(|t| t.weight >= 0.0);
        let negative = self.terms.iter().all(|t| t.weight <= 0.0);
        (positive || negative).then(|| {
            self.terms
                .iter()
                .map(|t| t.weight.abs() / libm::pow(t.decay, f64::from(t.order + 1)))
                .sum()
        })
    }

    /// `int_0^inf |h(t)| dt` to absolute tolerance `tol`.
    ///
    /// Quadrature runs on `[0, T]` where `T` is chosen so that the analytic
    /// tail bound is below `tol / 2`.
    pub fn l1_norm(&self, tol: f64) -> Result<f64> {
        if !(tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        let mut horizon = self
            .terms
            .iter()
            .map(|t| (f64::from(t.order) + 1.0) / t.decay)
            .fold(1.0, f64::max);
        let mut guard = 0;
        while self.tail_bound(horizon) >= 0.5 * tol {
            horizon *= 1.5;
            guard += 1;
            if guard > 400 {
                return Err(Error::QuadratureNonConvergence { estimate: f64::NAN });
            }
        }
        let integrand = |t: f64| self.terms.iter().map(|term| term.eval(t)).sum::<f64>().abs();
        quad::adaptive_simpson(integrand, 0.0, horizon, 0.5 * tol, 128)
            .map_err(|estimate| Error::QuadratureNonConvergence { estimate })
    }
}

/// Shape of a jump-rate function. All built-in families are nondecreasing.
#[allow(unpredictable_function_pointer_comparisons)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateFamily {
    /// `level`.
    Constant { level: f64 },
    /// `(baseline + slope * y) * 1{y >= 0}`.
    LinearPositivePart { baseline: f64, slope: f64 },
    /// `max(0, 1 + y / scale)`.
    ScaledLinear { scale: f64 },
    /// `base + amplitude / (1 + exp(-steepness (y - midpoint)))`.
    Sigmoid {
        base: f64,
        amplitude: f64,
        steepness: f64,
        midpoint: f64,
    },
    /// `min(offset + exp(y / scale), cap)`.
    CappedExponential { offset: f64, scale: f64, cap: f64 },
    /// `min(base + (max(y, 0) / scale)^exponent, cap)`.
    CappedPower {
        base: f64,
        scale: f64,
        exponent: f64,
        cap: f64,
    },
    /// User-supplied function with caller-asserted metadata.
    Custom {
        eval: fn(f64) -> f64,
        lipschitz: Option<f64>,
        upper_bound: Option<f64>,
        lower_bound: f64,
    },
}

/// Jump-rate function `f: R -> R_+` with the metadata the thinning bound and
/// stability checks rely on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFunction {
    family: RateFamily,
}

fn require(cond: bool, name: &'static str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(name, reason))
    }
}

impl RateFunction {
    pub fn new(family: RateFamily) -> Result<Self> {
        use RateFamily::*;
        match family {
            Constant { level } => require(level >= 0.0 && level.is_finite(), "level", "must be finite and >= 0")?,
            LinearPositivePart { baseline, slope } => {
                require(baseline >= 0.0 && baseline.is_finite(), "mu", "must be finite and >= 0")?;
                require(slope >= 0.0 && slope.is_finite(), "slope", "must be finite and >= 0")?;
            }
            ScaledLinear { scale } => require(scale > 0.0 && scale.is_finite(), "scale", "must be positive")?,
            Sigmoid {
                base,
                amplitude,
                steepness,
                midpoint,
            } => {
                require(base >= 0.0 && base.is_finite(), "base", "must be finite and >= 0")?;
                require(amplitude >= 0.0 && amplitude.is_finite(), "sigma", "must be finite and >= 0")?;
                require(steepness >= 0.0 && steepness.is_finite(), "beta", "must be finite and >= 0")?;
                require(midpoint.is_finite(), "rho", "must be finite")?;
            }
            CappedExponential { offset, scale, cap } => {
                require(offset >= 0.0 && offset.is_finite(), "offset", "must be finite and >= 0")?;
                require(scale > 0.0 && scale.is_finite(), "scale", "must be positive")?;
                require(cap > offset && cap.is_finite(), "cap", "must be finite and exceed the offset")?;
            }
            CappedPower {
                base,
                scale,
                exponent,
                cap,
            } => {
                require(base >= 0.0 && base.is_finite(), "base", "must be finite and >= 0")?;
                require(scale > 0.0 && scale.is_finite(), "scale", "must be positive")?;
                require(exponent > 0.0 && exponent.is_finite(), "exponent", "must be positive")?;
                require(cap > base && cap.is_finite(), "cap", "must be finite and exceed the base")?;
            }
            Custom {
                lipschitz,
                upper_bound,
                lower_bound,
                ..
            } => {
                if lipschitz.is_none() && upper_bound.is_none() {
                    return Err(Error::MissingRateMetadata);
                }
                require(lipschitz.map_or(true, |l| l >= 0.0), "lipschitz", "must be >= 0")?;
                require(upper_bound.map_or(true, |u| u >= lower_bound), "upper_bound", "below lower bound")?;
                require(lower_bound >= 0.0, "lower_bound", "must be >= 0")?;
            }
        }
        Ok(RateFunction { family })
    }

    pub fn constant(level: f64) -> Result<Self> {
        Self::new(RateFamily::Constant { level })
    }

    pub fn linear_positive_part(baseline: f64, slope: f64) -> Result<Self> {
        Self::new(RateFamily::LinearPositivePart { baseline, slope })
    }

    pub fn scaled_linear(scale: f64) -> Result<Self> {
        Self::new(RateFamily::ScaledLinear { scale })
    }

    pub fn sigmoid(base: f64, amplitude: f64, steepness: f64, midpoint: f64) -> Result<Self> {
        Self::new(RateFamily::Sigmoid {
            base,
            amplitude,
            steepness,
            midpoint,
        })
    }

    pub fn capped_exponential(offset: f64, scale: f64, cap: f64) -> Result<Self> {
        Self::new(RateFamily::CappedExponential { offset, scale, cap })
    }

    pub fn capped_power(base: f64, scale: f64, exponent: f64, cap: f64) -> Result<Self> {
        Self::new(RateFamily::CappedPower {
            base,
            scale,
            exponent,
            cap,
        })
    }

    pub fn family(&self) -> &RateFamily {
        &self.family
    }

    pub fn eval(&self, y: f64) -> f64 {
        use RateFamily::*;
        match self.family {
            Constant { level } => level,
            LinearPositivePart { baseline, slope } => {
                if y >= 0.0 {
                    baseline + slope * y
                } else {
                    0.0
                }
            }
            ScaledLinear { scale } => (1.0 + y / scale).max(0.0),
            Sigmoid {
                base,
                amplitude,
                steepness,
                midpoint,
            } => base + amplitude / (1.0 + libm::exp(-steepness * (y - midpoint))),
            CappedExponential { offset, scale, cap } => (offset + libm::exp(y / scale)).min(cap),
            CappedPower {
                base,
                scale,
                exponent,
                cap,
            } => (base + libm::pow(y.max(0.0) / scale, exponent)).min(cap),
            Custom { eval, .. } => eval(y),
        }
    }

    /// Lipschitz constant, when the function is Lipschitz.
    ///
    /// For the linear positive part the constant is the slope; the jump of
    /// size `baseline` at the origin is disregarded, which is the convention
    /// used by the drift and coupling bounds (they only need
    /// `f(y) <= slope |y| + f(0)`).
    pub fn lipschitz(&self) -> Option<f64> {
        use RateFamily::*;
        match self.family {
            Constant { .. } => Some(0.0),
            LinearPositivePart { slope, .. } => Some(slope),
            ScaledLinear { scale } => Some(1.0 / scale),
            Sigmoid {
                amplitude,
                steepness,
                ..
            } => Some(0.25 * amplitude * steepness),
            CappedExponential { offset, scale, cap } => Some((cap - offset) / scale),
            CappedPower {
                base,
                scale,
                exponent,
                cap,
            } => {
                if exponent < 1.0 {
                    None
                } else {
                    Some(exponent / scale * libm::pow(cap - base, (exponent - 1.0) / exponent))
                }
            }
            Custom { lipschitz, .. } => lipschitz,
        }
    }

    /// Global upper bound `sup f`, when `f` is bounded.
    pub fn upper_bound(&self) -> Option<f64> {
        use RateFamily::*;
        match self.family {
            Constant { level } => Some(level),
            LinearPositivePart { baseline, slope } => (slope == 0.0).then_some(baseline),
            ScaledLinear { .. } => None,
            Sigmoid { base, amplitude, .. } => Some(base + amplitude),
            CappedExponential { cap, .. } | CappedPower { cap, .. } => Some(cap),
            Custom { upper_bound, .. } => upper_bound,
        }
    }

    /// `inf f`.
    pub fn lower_bound(&self) -> f64 {
        use RateFamily::*;
        match self.family {
            Constant { level } => level,
            LinearPositivePart { .. } | ScaledLinear { .. } => 0.0,
            Sigmoid { base, .. } => base,
            CappedExponential { offset, .. } => offset,
            CappedPower { base, .. } => base,
            Custom { lower_bound, .. } => lower_bound,
        }
    }

    pub fn value_at_zero(&self) -> f64 {
        self.eval(0.0)
    }

    /// Upper bound on `sup_{y in [a, b]} f(y)`.
    ///
    /// Exact for the built-in (nondecreasing) families. Custom functions use
    /// `f(midpoint) + lipschitz * half_width`, clipped by the global bound.
    pub fn interval_sup(&self, a: f64, b: f64) -> f64 {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        match self.family {
            RateFamily::Custom {
                eval,
                lipschitz,
                upper_bound,
                ..
            } => {
                let by_lip = lipschitz.map(|l| eval(0.5 * (a + b)) + l * 0.5 * (b - a));
                match (by_lip, upper_bound) {
                    (Some(x), Some(u)) => x.min(u),
                    (Some(x), None) => x,
                    (None, Some(u)) => u,
                    (None, None) => f64::INFINITY,
                }
            }
            _ => self.eval(b),
        }
    }

    /// True when `f` vanishes everywhere.
    pub fn is_identically_zero(&self) -> bool {
        matches!(self.family, RateFamily::Constant { level } if level == 0.0)
    }
}

/// `lhs < rhs` together with both sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
}

impl Inequality {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn holds(&self) -> bool {
        self.lhs < self.rhs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionStatus {
    Checked(Inequality),
    /// The condition needs a Lipschitz constant that `f` does not carry.
    NotApplicable,
    /// `f` is bounded, so no condition is needed.
    HoldsByBoundedness,
}

impl ConditionStatus {
    pub fn holds(&self) -> bool {
        match self {
            ConditionStatus::Checked(ineq) => ineq.holds(),
            ConditionStatus::NotApplicable => false,
            ConditionStatus::HoldsByBoundedness => true,
        }
    }

    pub fn margin(&self) -> Option<f64> {
        match self {
            ConditionStatus::Checked(ineq) => Some(ineq.margin()),
            _ => None,
        }
    }
}

/// Outcome of [`check_stability`].
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    /// `int_0^inf |h|`.
    pub l1_norm: f64,
    /// `||f||_Lip * int |h| < 1`.
    pub subcritical: ConditionStatus,
    /// `||f||_Lip * E_G[sum_i alpha^{-n_i} |c_i|] < alpha` with `alpha = min alpha_i`.
    pub drift_condition: ConditionStatus,
    /// `E_G[sum_i alpha^{-n_i} |c_i|]` and its Monte Carlo error.
    pub height_moment: Estimate,
    pub notes: String,
}

/// `(E_G[sum_i alpha^{-n_i}|c_i|], E_G[sum_i alpha_i^{-n_i}|c_i|])`.
pub(crate) fn height_moments(kernel: &ErlangSumKernel, heights: &HeightExpectation) -> (Estimate, Estimate) {
    let alpha = kernel.min_decay();
    let uniform = heights.mean(|c| {
        kernel
            .terms()
            .iter()
            .zip(c)
            .map(|(t, ci)| ci.abs() / libm::pow(alpha, f64::from(t.order)))
            .sum()
    });
    let own = heights.mean(|c| {
        kernel
            .terms()
            .iter()
            .zip(c)
            .map(|(t, ci)| ci.abs() / libm::pow(t.decay, f64::from(t.order)))
            .sum()
    });
    (uniform, own)
}

fn check_dims(kernel: &ErlangSumKernel, heights: &HeightExpectation) -> Result<()> {
    if heights.components() != kernel.len() {
        return Err(Error::DimensionMismatch {
            what: "jump heights",
            expected: kernel.len(),
            found: heights.components(),
        });
    }
    Ok(())
}

/// Evaluates the sub-criticality condition and the drift condition on the
/// height law. The norm of a single-sign kernel is taken in closed form,
/// so critical cases land exactly on the boundary.
pub fn check_stability(
    kernel: &ErlangSumKernel,
    rate: &RateFunction,
    heights: &HeightExpectation,
) -> Result<StabilityVerdict> {
    check_dims(kernel, heights)?;
    if rate.lipschitz().is_none() && rate.upper_bound().is_none() {
        return Err(Error::MissingRateMetadata);
    }
    let l1_norm = match kernel.l1_norm_single_sign() {
        Some(v) => v,
        None => kernel.l1_norm(1e-10)?,
    };
    let (height_moment, _) = height_moments(kernel, heights);
    let alpha = kernel.min_decay();
    let mut notes = String::new();

    let subcritical = match rate.lipschitz() {
        Some(lip) => ConditionStatus::Checked(Inequality {
            lhs: lip * l1_norm,
            rhs: 1.0,
        }),
        None => ConditionStatus::NotApplicable,
    };
    let drift_condition = if rate.upper_bound().is_some() {
        notes.push_str("bounded rate: drift holds without a moment condition; ");
        ConditionStatus::HoldsByBoundedness
    } else {
        let lip = rate.lipschitz().ok_or(Error::MissingRateMetadata)?;
        ConditionStatus::Checked(Inequality {
            lhs: lip * height_moment.value,
            rhs: alpha,
        })
    };
    if !heights.is_exact() {
        notes.push_str(&format!(
            "height moment by Monte Carlo over {} samples (stderr {:.3e}); ",
            heights.sample_count(),
            height_moment.std_error
        ));
    }
    Ok(StabilityVerdict {
        l1_norm,
        subcritical,
        drift_condition,
        height_moment,
        notes,
    })
}

/// Default ratio for the geometric weight function when no constraint binds.
const DEFAULT_RATIO: f64 = 2.0;

/// Chooses a geometric weight function `b(k) = rho^k` on `{0, ..., n+1}` and
/// derives the drift constants.
///
/// When `f` is unbounded the weights must satisfy
/// `rho^n ||f||_Lip E_G[sum alpha^{-n_i}|c_i|] < alpha`; `rho` is the
/// midpoint between 1 and the largest admissible ratio. The same constraint
/// is honoured for bounded Lipschitz `f` whenever it is satisfiable, so the
/// returned weights also serve the coupling bound.
pub fn choose_b(
    kernel: &ErlangSumKernel,
    rate: &RateFunction,
    heights: &HeightExpectation,
) -> Result<LyapunovSpec> {
    check_dims(kernel, heights)?;
    let n = kernel.max_order();
    let alpha = kernel.min_decay();
    let (uniform_moment, own_moment) = height_moments(kernel, heights);
    let bounded = rate.upper_bound();

    let lip_moment = rate.lipschitz().map(|lip| lip * uniform_moment.value);
    let ratio = match (lip_moment, bounded) {
        (None, None) => return Err(Error::MissingRateMetadata),
        (Some(lm), None) if lm >= alpha => {
            return Err(Error::Infeasible {
                condition: "drift moment condition",
                lhs: lm,
                rhs: alpha,
            })
        }
        (Some(lm), _) if lm < alpha && lm > 0.0 && n > 0 => {
            let max_ratio = libm::pow(alpha / lm, 1.0 / f64::from(n));
            if max_ratio.is_finite() {
                0.5 * (1.0 + max_ratio)
            } else {
                DEFAULT_RATIO
            }
        }
        _ => DEFAULT_RATIO,
    };
    LyapunovSpec::geometric(kernel, rate, ratio, own_moment.value, if bounded.is_some() {
        DriftBranch::Bounded
    } else {
        DriftBranch::Lipschitz
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heights::{JumpHeightLaw, MonteCarlo};
    use alloc::vec;

    fn exact(c: &[f64]) -> HeightExpectation {
        HeightExpectation::new(&JumpHeightLaw::Constant(c.to_vec()), MonteCarlo::default())
    }

    #[test]
    fn kernel_values() {
        let k = ErlangSumKernel::single(1.0, 1.0, 0).unwrap();
        assert_eq!(k.eval(0.0).unwrap(), 1.0);
        let k = ErlangSumKernel::single(2.0, 1.0, 2).unwrap();
        assert!((k.eval(2.0).unwrap() - 4.0 * libm::exp(-2.0)).abs() < 1e-15);
        let k = ErlangSumKernel::new(vec![ErlangTerm::new(1.0, 1.0, 0), ErlangTerm::new(-1.0, 2.0, 1)]).unwrap();
        let want = libm::exp(-1.0) - libm::exp(-2.0);
        assert!((k.eval(1.0).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.23254).abs() < 1e-5);
        assert_eq!(k.eval(-1.0), Err(Error::NegativeTime(-1.0)));
    }

    #[test]
    fn kernel_layout() {
        let k = ErlangSumKernel::new(vec![ErlangTerm::new(1.0, 1.3, 1), ErlangTerm::new(1.0, 0.8, 3), ErlangTerm::new(1.0, 1.0, 2)]).unwrap();
        assert_eq!(k.dimension(), 9);
        assert_eq!(k.block(1), 2..6);
        assert_eq!(k.jump_index(2), 8);
        assert_eq!(k.max_order(), 3);
        assert_eq!(k.min_decay(), 0.8);
        assert_eq!(k.max_decay(), 1.3);
        assert!(ErlangSumKernel::new(vec![]).is_err());
        assert!(ErlangSumKernel::single(1.0, 0.0, 0).is_err());
    }

    #[test]
    fn l1_norms() {
        let k = ErlangSumKernel::single(2.0, 1.0, 2).unwrap();
        assert!((k.l1_norm(1e-9).unwrap() - 2.0).abs() < 1e-9);
        let k = ErlangSumKernel::single(-3.0, 2.0, 0).unwrap();
        assert!((k.l1_norm(1e-9).unwrap() - 1.5).abs() < 1e-9);
        let k = ErlangSumKernel::new(vec![ErlangTerm::new(1.0, 1.0, 0), ErlangTerm::new(-1.0, 1.0, 0)]).unwrap();
        assert!(k.l1_norm(1e-9).unwrap().abs() < 1e-9);
        assert!(k.l1_norm(0.0).is_err());
    }

    #[test]
    fn rate_metadata() {
        let f = RateFunction::linear_positive_part(1.0, 1.0).unwrap();
        assert_eq!(f.eval(-2.0), 0.0);
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(f.interval_sup(-3.0, -1.0), 0.0);
        assert_eq!(f.interval_sup(0.0, 0.5), 1.5);
        let g = RateFunction::scaled_linear(5.0).unwrap();
        assert_eq!(g.eval(5.0), 2.0);
        assert_eq!(g.lipschitz(), Some(0.2));
        let s = RateFunction::sigmoid(1.0, 20.0, 1.0 / 3.0, 10.0).unwrap();
        assert_eq!(s.upper_bound(), Some(21.0));
        let e = RateFunction::capped_exponential(2.0, 10.0, 20.0).unwrap();
        assert_eq!(e.eval(100.0), 20.0);
        assert!((e.lipschitz().unwrap() - 1.8).abs() < 1e-15);
        let p = RateFunction::capped_power(1.0, 2.0, 1.5, 30.0).unwrap();
        assert_eq!(p.eval(-4.0), 1.0);
        assert!((p.eval(8.0) - 9.0).abs() < 1e-12);
        assert!(RateFunction::constant(-1.0).is_err());
        assert!(RateFunction::new(RateFamily::Custom {
            eval: |y| y * y,
            lipschitz: None,
            upper_bound: None,
            lower_bound: 0.0
        })
        .is_err());
    }

    #[test]
    fn custom_interval_sup_dominates() {
        let f = RateFunction::new(RateFamily::Custom {
            eval: |y: f64| 1.0 + libm::sin(y).abs(),
            lipschitz: Some(1.0),
            upper_bound: Some(2.0),
            lower_bound: 1.0,
        })
        .unwrap();
        let sup = f.interval_sup(-0.3, 0.4);
        for i in 0..=100 {
            let y = -0.3 + 0.7 * i as f64 / 100.0;
            assert!(f.eval(y) <= sup);
        }
    }

    #[test]
    fn stability_example_subcritical() {
        let k = ErlangSumKernel::single(1.0, 1.0, 3).unwrap();
        let f = RateFunction::scaled_linear(5.0).unwrap();
        let v = check_stability(&k, &f, &exact(&[1.0])).unwrap();
        assert!((v.l1_norm - 1.0).abs() < 1e-9);
        assert!((v.subcritical.margin().unwrap() - 0.8).abs() < 1e-9);
        assert!((v.drift_condition.margin().unwrap() - 0.8).abs() < 1e-12);
        assert!(v.subcritical.holds() && v.drift_condition.holds());
    }

    #[test]
    fn stability_bounded_rate() {
        let k = ErlangSumKernel::single(1.0, 1.0, 3).unwrap();
        let f = RateFunction::new(RateFamily::Custom {
            eval: |y: f64| 1.0 + libm::sin(y).abs(),
            lipschitz: None,
            upper_bound: Some(2.0),
            lower_bound: 1.0,
        })
        .unwrap();
        let v = check_stability(&k, &f, &exact(&[1.0])).unwrap();
        assert_eq!(v.subcritical, ConditionStatus::NotApplicable);
        assert_eq!(v.drift_condition, ConditionStatus::HoldsByBoundedness);
    }

    #[test]
    fn stability_critical_example_fails() {
        let a = 1.7;
        let k = ErlangSumKernel::single(a, a, 0).unwrap();
        let f = RateFunction::linear_positive_part(0.5, 1.0).unwrap();
        let v = check_stability(&k, &f, &exact(&[a])).unwrap();
        assert!((v.l1_norm - 1.0).abs() < 1e-9);
        assert!(!v.subcritical.holds());
        assert!(v.subcritical.margin().unwrap().abs() < 1e-9);
    }

    #[test]
    fn choose_b_geometric_and_feasibility() {
        let k = ErlangSumKernel::single(1.0, 1.0, 3).unwrap();
        let f = RateFunction::scaled_linear(5.0).unwrap();
        let spec = choose_b(&k, &f, &exact(&[1.0])).unwrap();
        let max_ratio = libm::pow(5.0, 1.0 / 3.0);
        assert!((spec.ratio - 0.5 * (1.0 + max_ratio)).abs() < 1e-12);
        // strict inequality after substitution
        let b = &spec.weights;
        assert!(b[4] / b[1] * 0.2 * 1.0 < 1.0);
        assert!(b.windows(2).all(|w| w[1] > w[0]));

        let k0 = ErlangSumKernel::single(1.0, 1.0, 0).unwrap();
        let spec0 = choose_b(&k0, &f, &exact(&[1.0])).unwrap();
        assert_eq!(spec0.ratio, DEFAULT_RATIO);
        assert!(spec0.lambda > 0.0);

        let steep = RateFunction::scaled_linear(0.5).unwrap();
        assert!(matches!(
            choose_b(&k, &steep, &exact(&[1.0])),
            Err(Error::Infeasible { .. })
        ));

        let bounded = RateFunction::sigmoid(1.0, 20.0, 1.0, 10.0).unwrap();
        let sb = choose_b(&k, &bounded, &exact(&[10.0])).unwrap();
        assert_eq!(sb.ratio, DEFAULT_RATIO);
        assert_eq!(sb.branch, DriftBranch::Bounded);
    }
}
