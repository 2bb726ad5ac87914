//! The cascade state space: deterministic flow between jumps, jumps, the
//! intensity, bounds on the intensity along the flow, and the generator.
//!
//! Block `i` of the state holds `(x^{(i,0)}, ..., x^{(i,n_i)})`. Between jumps
//! the state follows the linear system
//! `d/dt x^{(i,k)} = x^{(i,k+1)} - alpha_i x^{(i,k)}` (top coordinate decays
//! alone), and a jump adds `c_i` to `x^{(i,n_i)}`. The intensity is
//! `f(x^{(1,0)} + ... + x^{(L,0)})`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::heights::{Estimate, HeightExpectation};
use crate::kernels::{ErlangSumKernel, RateFamily, RateFunction};
use crate::poly;

/// A point of `R^kappa`, laid out block by block.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    coords: Vec<f64>,
}

impl CascadeState {
    pub fn zeros(kernel: &ErlangSumKernel) -> Self {
        CascadeState {
            coords: vec![0.0; kernel.dimension()],
        }
    }

    pub fn from_vec(kernel: &ErlangSumKernel, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != kernel.dimension() {
            return Err(Error::DimensionMismatch {
                what: "cascade state",
                expected: kernel.dimension(),
                found: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(crate::error::invalid("state", "coordinates must be finite"));
        }
        Ok(CascadeState { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn block<'a>(&'a self, kernel: &ErlangSumKernel, i: usize) -> &'a [f64] {
        &self.coords[kernel.block(i)]
    }

    pub fn get(&self, kernel: &ErlangSumKernel, i: usize, k: usize) -> f64 {
        self.coords[kernel.index(i, k)]
    }

    /// Sum of all coordinates.
    pub fn total(&self) -> f64 {
        self.coords.iter().sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.coords.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn l1_norm(&self) -> f64 {
        self.coords.iter().map(|c| c.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(self.coords.iter().map(|c| c * c).sum())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.coords.iter().all(|&c| c >= 0.0)
    }

    pub fn is_nonpositive(&self) -> bool {
        self.coords.iter().all(|&c| c <= 0.0)
    }
}

/// Writes `phi_t` of one block into `out`. Valid for any real `t`.
fn flow_block(decay: f64, src: &[f64], t: f64, out: &mut [f64]) {
    let damp = libm::exp(-decay * t);
    let top = src.len();
    for k in 0..top {
        let mut term = 1.0;
        let mut acc = src[k];
        for m in 1..top - k {
            term *= t / m as f64;
            acc += term * src[k + m];
        }
        out[k] = damp * acc;
    }
}

/// Leading coordinate `phi_t^{(i,0)}` of one block.
fn flow_block_leading(decay: f64, src: &[f64], t: f64) -> f64 {
    let mut term = 1.0;
    let mut acc = src[0];
    for (m, &x) in src.iter().enumerate().skip(1) {
        term *= t / m as f64;
        acc += term * x;
    }
    libm::exp(-decay * t) * acc
}

/// The flow `phi_t(x)` in closed form.
///
/// Each block evolves on its own: `phi_t^{(i,k)}(x) = exp(-alpha_i t)
/// sum_{m=0}^{n_i-k} t^m/m! x^{(i,k+m)}`.
pub fn flow(kernel: &ErlangSumKernel, x: &CascadeState, t: f64) -> CascadeState {
    let mut out = CascadeState {
        coords: vec![0.0; x.coords.len()],
    };
    for (i, term) in kernel.terms().iter().enumerate() {
        let r = kernel.block(i);
        flow_block(term.decay, &x.coords[r.clone()], t, &mut out.coords[r]);
    }
    out
}

/// `sum_i phi_t^{(i,0)}(x)`, the argument of `f` after flowing for `t`.
pub fn flow_input(kernel: &ErlangSumKernel, x: &CascadeState, t: f64) -> f64 {
    kernel
        .terms()
        .iter()
        .enumerate()
        .map(|(i, term)| flow_block_leading(term.decay, &x.coords[kernel.block(i)], t))
        .sum()
}

/// The vector field `F` of the linear system.
pub fn vector_field(kernel: &ErlangSumKernel, x: &CascadeState) -> Vec<f64> {
    let mut out = vec![0.0; x.coords.len()];
    for (i, term) in kernel.terms().iter().enumerate() {
        let r = kernel.block(i);
        let block = &x.coords[r.clone()];
        let dst = &mut out[r];
        for k in 0..block.len() {
            let next = block.get(k + 1).copied().unwrap_or(0.0);
            dst[k] = -term.decay * block[k] + next;
        }
    }
    out
}

/// Adds `heights[i]` to coordinate `(i, n_i)` of `x` in place.
pub fn apply_jump_in_place(kernel: &ErlangSumKernel, x: &mut CascadeState, heights: &[f64]) {
    debug_assert_eq!(heights.len(), kernel.len());
    for (i, &c) in heights.iter().enumerate() {
        x.coords[kernel.jump_index(i)] += c;
    }
}

/// `x + sum_i c_i e_{(i,n_i)}`.
pub fn apply_jump(kernel: &ErlangSumKernel, x: &CascadeState, heights: &[f64]) -> Result<CascadeState> {
    if heights.len() != kernel.len() {
        return Err(Error::DimensionMismatch {
            what: "jump heights",
            expected: kernel.len(),
            found: heights.len(),
        });
    }
    let mut out = x.clone();
    apply_jump_in_place(kernel, &mut out, heights);
    Ok(out)
}

/// `sum_i x^{(i,0)}`.
pub fn rate_input(kernel: &ErlangSumKernel, x: &CascadeState) -> f64 {
    (0..kernel.len()).map(|i| x.coords[kernel.index(i, 0)]).sum()
}

/// `f(sum_i x^{(i,0)})`.
pub fn intensity(kernel: &ErlangSumKernel, x: &CascadeState, rate: &RateFunction) -> f64 {
    rate.eval(rate_input(kernel, x))
}

/// Closed-form bound `e ||x||_inf (1 v (n/(alpha e))^n)` on
/// `sup_{t >= 0} |phi_t^{(i,0)}(x)|`, with `n = max n_i`, `alpha = min alpha_i`
/// and the factor taken as 1 when `n = 0`.
pub fn flow_sup_bound(kernel: &ErlangSumKernel, x: &CascadeState) -> f64 {
    let n = kernel.max_order();
    let alpha = kernel.min_decay();
    let shape = if n == 0 {
        1.0
    } else {
        libm::pow(f64::from(n) / (alpha * core::f64::consts::E), f64::from(n)).max(1.0)
    };
    core::f64::consts::E * x.sup_norm() * shape
}

/// Exact `max_i sup_{t >= 0} |phi_t^{(i,0)}(x)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSup {
    pub value: f64,
    /// Root isolation failed and `value` is the closed-form bound instead.
    pub fallback: bool,
}

/// Sup of the leading flow coordinates by enumerating critical points.
///
/// `phi_t^{(i,0)} = exp(-alpha_i t) P_i(t)` with `P_i(t) = sum_m t^m/m!
/// x^{(i,m)}`, so interior extrema are the nonnegative real roots of
/// `P_i' - alpha_i P_i`; the remaining candidates are `t = 0` and the limit 0.
pub fn flow_sup_exact(kernel: &ErlangSumKernel, x: &CascadeState) -> FlowSup {
    let mut best: f64 = 0.0;
    for (i, term) in kernel.terms().iter().enumerate() {
        let block = &x.coords[kernel.block(i)];
        best = best.max(block[0].abs());
        if block.len() == 1 {
            continue;
        }
        // P_i coefficients in ascending powers
        let mut p = Vec::with_capacity(block.len());
        let mut fact = 1.0;
        for (m, &v) in block.iter().enumerate() {
            if m > 0 {
                fact *= m as f64;
            }
            p.push(v / fact);
        }
        let dp = poly::derivative(&p);
        let q: Vec<f64> = (0..p.len())
            .map(|m| dp.get(m).copied().unwrap_or(0.0) - term.decay * p[m])
            .collect();
        let hi = poly::root_bound(&q);
        match poly::real_roots_in(&q, 0.0, hi) {
            Some(roots) => {
                for t in roots {
                    let v = libm::exp(-term.decay * t) * poly::eval(&p, t);
                    if !v.is_finite() {
                        return FlowSup {
                            value: flow_sup_bound(kernel, x),
                            fallback: true,
                        };
                    }
                    best = best.max(v.abs());
                }
            }
            None => {
                return FlowSup {
                    value: flow_sup_bound(kernel, x),
                    fallback: true,
                }
            }
        }
    }
    FlowSup {
        value: best,
        fallback: false,
    }
}

/// How the dominating rate bounds the leading flow coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DominatingMode {
    /// Closed-form bound, always valid.
    #[default]
    FlowBound,
    /// Exact sup by root isolation, falling back to the bound on failure.
    Exact,
}

/// Relative inflation applied to the exact sup so rounding in the root
/// polish can never undercut the true maximum.
const EXACT_SUP_INFLATION: f64 = 1e-9;

/// `f^*(x)`: an upper bound on `f(sum_i phi_t^{(i,0)}(x))` for all `t >= 0`.
pub fn dominating_rate(
    kernel: &ErlangSumKernel,
    x: &CascadeState,
    rate: &RateFunction,
    mode: DominatingMode,
) -> f64 {
    if let RateFamily::Constant { level } = rate.family() {
        return *level;
    }
    let m = match mode {
        DominatingMode::FlowBound => flow_sup_bound(kernel, x),
        DominatingMode::Exact => {
            let sup = flow_sup_exact(kernel, x);
            if sup.fallback {
                sup.value
            } else {
                sup.value * (1.0 + EXACT_SUP_INFLATION) + f64::MIN_POSITIVE
            }
        }
    };
    let reach = kernel.len() as f64 * m;
    if x.is_nonnegative() {
        rate.interval_sup(0.0, reach)
    } else if x.is_nonpositive() {
        rate.interval_sup(-reach, 0.0)
    } else {
        rate.interval_sup(-reach, reach)
    }
}

/// Test functions the generator can be applied to.
#[derive(Debug, Clone, Copy)]
pub enum TestFunction<'a> {
    /// `S(x) = sum of all coordinates`.
    StateSum,
    /// `V(x) = 1 + sum_{i,k} b(k+1)/alpha_i^k |x^{(i,k)}|` for weights
    /// `b(0), ..., b(n+1)`.
    Lyapunov { weights: &'a [f64] },
}

/// Sign with `sg(0) = 0`.
pub(crate) fn sg(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weight `b(k+1) / alpha_i^k` of coordinate `(i, k)` in `V` and `H`.
pub(crate) fn lyapunov_weight(weights: &[f64], decay: f64, k: usize) -> f64 {
    weights[k + 1] / libm::pow(decay, k as f64)
}

/// `V(x)` for the given weight function.
pub fn lyapunov_value(kernel: &ErlangSumKernel, x: &CascadeState, weights: &[f64]) -> f64 {
    let mut v = 1.0;
    for (i, term) in kernel.terms().iter().enumerate() {
        for (k, c) in x.block(kernel, i).iter().enumerate() {
            v += lyapunov_weight(weights, term.decay, k) * c.abs();
        }
    }
    v
}

/// `Lg(x) = <F(x), grad g(x)> + f(sum_i x^{(i,0)}) E_G[g(x + jump) - g(x)]`.
pub fn generator_apply(
    g: TestFunction<'_>,
    kernel: &ErlangSumKernel,
    x: &CascadeState,
    rate: &RateFunction,
    heights: &HeightExpectation,
) -> Estimate {
    let field = vector_field(kernel, x);
    let lambda = intensity(kernel, x, rate);
    match g {
        TestFunction::StateSum => {
            let drift: f64 = field.iter().sum();
            let jump = heights.mean(|c| c.iter().sum());
            Estimate {
                value: drift + lambda * jump.value,
                std_error: lambda * jump.std_error,
            }
        }
        TestFunction::Lyapunov { weights } => {
            let mut drift = 0.0;
            for (i, term) in kernel.terms().iter().enumerate() {
                for k in kernel.block(i) {
                    let local = k - kernel.index(i, 0);
                    drift += lyapunov_weight(weights, term.decay, local) * sg(x.coords[k]) * field[k];
                }
            }
            let jump = heights.mean(|c| {
                kernel
                    .terms()
                    .iter()
                    .enumerate()
                    .map(|(i, term)| {
                        let top = kernel.jump_index(i);
                        let w = lyapunov_weight(weights, term.decay, term.order as usize);
                        w * ((x.coords[top] + c[i]).abs() - x.coords[top].abs())
                    })
                    .sum()
            });
            Estimate {
                value: drift + lambda * jump.value,
                std_error: lambda * jump.std_error,
            }
        }
    }
}
