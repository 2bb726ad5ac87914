//! Foster-Lyapunov drift verification, return times to the drift set, and
//! the numerical ingredients of the minorization argument.
//!
//! The drift function is `V(x) = 1 + sum_{i,k} b(k+1)/alpha_i^k |x^{(i,k)}|`.
//! With `b_* = min_k (b(k+1) - b(k))` and `r = alpha b_* / b(n+1)` one gets
//! `LV <= -rate V + p` where, writing `E = E_G[sum_i alpha_i^{-n_i} |c_i|]`,
//!
//! * bounded `f <= f^*`: `rate = r`, `p = r + f^* b(n+1) E`;
//! * Lipschitz `f`: `rate = d = (alpha - Lip b(n+1)/b(1) E) ^ r`,
//!   `p = d + f(0) b(n+1) E`.
//!
//! Outside the ball `K` of radius `R`, `V >= q = 1 + b(1)(1 ^ A^{-n}) R`, so
//! `LV <= -(rate - p/q) V + p 1_K`.

use alloc::vec;
use alloc::vec::Vec;

use crate::cascade::{
    apply_jump_in_place, flow, flow_input, generator_apply, lyapunov_value, CascadeState, TestFunction,
};
use crate::error::{invalid, Error, Result};
use crate::heights::{Estimate, HeightExpectation};
use crate::kernels::{height_moments, ErlangSumKernel, RateFunction};
use crate::linalg::Matrix;
use crate::quad;
use crate::rng::{Seed, StreamRng};
use crate::simulator::{CascadeModel, Step, Thinning};

/// Which bound on the jump term produced the drift constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftBranch {
    Bounded,
    Lipschitz,
}

/// Weight function `b` on `{0, ..., n+1}` and the drift constants it yields.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSpec {
    pub weights: Vec<f64>,
    /// `b(k+1)/b(k)` for geometric weights.
    pub ratio: f64,
    pub b_star: f64,
    pub r: f64,
    /// Decay rate in `LV <= -rate V + p` (`r` or `d`).
    pub rate: f64,
    pub p: f64,
    pub q: f64,
    pub lambda: f64,
    pub beta: f64,
    /// Radius `R` of the ball `K`.
    pub radius: f64,
    /// `d` of the contraction bound, when `f` is Lipschitz and `d > 0`.
    pub contraction_rate: Option<f64>,
    pub branch: DriftBranch,
}

/// `(alpha - Lip b(n+1)/b(1) E) ^ (alpha b_* / b(n+1))`.
pub(crate) fn contraction_d(alpha: f64, lip: f64, weights: &[f64], own_moment: f64) -> f64 {
    let n1 = weights.len() - 1;
    let gap = weights.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let r = alpha * gap / weights[n1];
    (alpha - lip * weights[n1] / weights[1] * own_moment).min(r)
}

impl LyapunovSpec {
    /// Constants for `b(k) = ratio^k`.
    pub fn geometric(
        kernel: &ErlangSumKernel,
        rate: &RateFunction,
        ratio: f64,
        own_moment: f64,
        branch: DriftBranch,
    ) -> Result<Self> {
        if !(ratio > 1.0) || !ratio.is_finite() {
            return Err(invalid("ratio", "geometric weights need a finite ratio > 1"));
        }
        let n = kernel.max_order() as usize;
        let weights: Vec<f64> = (0..=n + 1).map(|k| libm::pow(ratio, k as f64)).collect();
        let mut spec = Self::from_weights(kernel, rate, weights, own_moment, branch)?;
        spec.ratio = ratio;
        Ok(spec)
    }

    /// Constants for an arbitrary strictly increasing positive `b`.
    pub fn from_weights(
        kernel: &ErlangSumKernel,
        rate: &RateFunction,
        weights: Vec<f64>,
        own_moment: f64,
        branch: DriftBranch,
    ) -> Result<Self> {
        let n = kernel.max_order() as usize;
        if weights.len() != n + 2 {
            return Err(Error::DimensionMismatch {
                what: "weight function",
                expected: n + 2,
                found: weights.len(),
            });
        }
        if weights[0] < 0.0 || weights.windows(2).any(|w| !(w[1] > w[0])) || weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("b", "must be nonnegative, finite and strictly increasing"));
        }
        let alpha = kernel.min_decay();
        let big_a = kernel.max_decay();
        let top = weights[n + 1];
        let b_star = weights.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let r = alpha * b_star / top;
        let d = rate.lipschitz().map(|lip| contraction_d(alpha, lip, &weights, own_moment));

        let (decay, p) = match branch {
            DriftBranch::Bounded => {
                let sup = rate.upper_bound().ok_or_else(|| invalid("f", "bounded branch needs an upper bound"))?;
                (r, r + sup * top * own_moment)
            }
            DriftBranch::Lipschitz => {
                let d = d.ok_or(Error::MissingRateMetadata)?;
                if !(d > 0.0) {
                    let lip = rate.lipschitz().unwrap_or(0.0);
                    return Err(Error::Infeasible {
                        condition: "weight condition on b",
                        lhs: lip * top / weights[1] * own_moment,
                        rhs: alpha,
                    });
                }
                (d, d + rate.value_at_zero() * top * own_moment)
            }
        };
        let shape = 1.0f64.min(libm::pow(big_a, -(n as f64)));
        let radius = (2.0 * p / decay - 1.0).max(0.0) / (weights[1] * shape);
        let q = 1.0 + weights[1] * shape * radius;
        let lambda = decay - p / q;
        let ratio = weights[1] / weights[0];
        Ok(LyapunovSpec {
            weights,
            ratio,
            b_star,
            r,
            rate: decay,
            p,
            q,
            lambda,
            beta: p,
            radius,
            contraction_rate: d.filter(|&d| d > 0.0),
            branch,
        })
    }

    /// `x in K`, the closed Euclidean ball of radius `R`.
    pub fn in_drift_set(&self, x: &CascadeState) -> bool {
        x.l2_norm() <= self.radius
    }
}

/// `V(x)`.
pub fn lyapunov_v(kernel: &ErlangSumKernel, x: &CascadeState, spec: &LyapunovSpec) -> f64 {
    lyapunov_value(kernel, x, &spec.weights)
}

/// Result of one drift check `LV(x) <= -lambda V(x) + beta 1_K(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftCheck {
    pub generator: Estimate,
    pub bound: f64,
    pub in_drift_set: bool,
    pub slack: f64,
    pub pass: bool,
}

/// Evaluates `LV(x)` and compares it with the drift bound.
///
/// The tolerance is `1e-9 (1 + |bound|)` plus three Monte Carlo standard
/// errors when the heights are random.
pub fn verify_drift(
    x: &CascadeState,
    kernel: &ErlangSumKernel,
    rate: &RateFunction,
    heights: &HeightExpectation,
    spec: &LyapunovSpec,
) -> DriftCheck {
    let lv = generator_apply(TestFunction::Lyapunov { weights: &spec.weights }, kernel, x, rate, heights);
    let inside = spec.in_drift_set(x);
    let v = lyapunov_v(kernel, x, spec);
    let bound = -spec.lambda * v + if inside { spec.beta } else { 0.0 };
    let slack = 1e-9 * (1.0 + bound.abs()) + 3.0 * lv.std_error;
    DriftCheck {
        generator: lv,
        bound,
        in_drift_set: inside,
        slack,
        pass: lv.value <= bound + slack,
    }
}

/// Drift constants from a frozen height sample, as `choose_b` with the
/// moment read off the same sample.
pub fn drift_constants(
    kernel: &ErlangSumKernel,
    rate: &RateFunction,
    heights: &HeightExpectation,
) -> Result<LyapunovSpec> {
    crate::kernels::choose_b(kernel, rate, heights)
}

/// `E_G[sum_i alpha_i^{-n_i} |c_i|]`.
pub fn own_height_moment(kernel: &ErlangSumKernel, heights: &HeightExpectation) -> Estimate {
    height_moments(kernel, heights).1
}

fn golden_min<F: Fn(f64) -> f64>(g: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut gc = g(c);
    let mut gd = g(d);
    while b - a > tol {
        if gc < gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
    }
    if gc < gd {
        (c, gc)
    } else {
        (d, gd)
    }
}

/// Smallest `t` in `[lo, hi]` with `g(t) <= 0`, given `g(lo) > 0 >= g(hi)`.
fn bisect_entry<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

const ENTRY_TIME_TOL: f64 = 1e-8;

/// First `t` in `[0, duration]` with `|phi_t(x)|_2 <= radius`, if any.
///
/// The segment is cut into pieces and the norm minimised on each by golden
/// section; an entry is then located by bisection.
pub fn first_ball_entry(kernel: &ErlangSumKernel, x: &CascadeState, duration: f64, radius: f64) -> Option<f64> {
    let g = |t: f64| flow(kernel, x, t).l2_norm() - radius;
    if g(0.0) <= 0.0 {
        return Some(0.0);
    }
    if !(duration > 0.0) {
        return None;
    }
    let pieces = (16.0 + libm::ceil(duration * kernel.max_decay())).min(256.0) as usize;
    let width = duration / pieces as f64;
    for j in 0..pieces {
        let a = j as f64 * width;
        let b = if j + 1 == pieces { duration } else { a + width };
        if g(b) <= 0.0 {
            return Some(bisect_entry(g, a, b));
        }
        let (tmin, gmin) = golden_min(g, a, b, ENTRY_TIME_TOL);
        if gmin <= 0.0 {
            return Some(bisect_entry(g, a, tmin));
        }
    }
    None
}

/// Monte Carlo estimate of `E[exp(eta T_K)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnTimeEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub v_x0: f64,
    /// Replications stopped at the time cap before reaching `K`.
    pub censored: usize,
    pub reps: usize,
    pub pass: bool,
}

/// Hitting time of `K` for one replication, capped at `time_cap`.
pub fn return_time(
    model: &CascadeModel,
    x0: &CascadeState,
    spec: &LyapunovSpec,
    time_cap: f64,
    seed: Seed,
) -> Result<(f64, bool)> {
    model.check_state(x0)?;
    if spec.in_drift_set(x0) {
        return Ok((0.0, false));
    }
    let mut engine = Thinning::new(model, x0, time_cap, seed);
    loop {
        let start = engine.state().clone();
        let t0 = engine.clock();
        match engine.step()? {
            None => return Ok((time_cap, true)),
            Some(Step::Horizon { elapsed }) => {
                return Ok(match first_ball_entry(&model.kernel, &start, elapsed, spec.radius) {
                    Some(t) => (t0 + t, false),
                    None => (time_cap, true),
                });
            }
            Some(Step::Reject { elapsed, .. }) => {
                if let Some(t) = first_ball_entry(&model.kernel, &start, elapsed, spec.radius) {
                    return Ok((t0 + t, false));
                }
            }
            Some(Step::Jump { time, elapsed, .. }) => {
                if let Some(t) = first_ball_entry(&model.kernel, &start, elapsed, spec.radius) {
                    return Ok((t0 + t, false));
                }
                if spec.in_drift_set(engine.state()) {
                    return Ok((time, false));
                }
            }
        }
    }
}

/// Estimates `E_{x0}[exp(eta T_K)]` over `reps` replications and compares it
/// with `V(x0)`. Censored replications contribute `exp(eta * time_cap)`.
pub fn estimate_return_time(
    model: &CascadeModel,
    x0: &CascadeState,
    spec: &LyapunovSpec,
    eta: f64,
    reps: usize,
    master_seed: u64,
    time_cap: f64,
) -> Result<ReturnTimeEstimate> {
    if !(eta <= spec.lambda) || eta < 0.0 {
        return Err(Error::ExponentTooLarge {
            eta,
            lambda: spec.lambda,
        });
    }
    if reps < 2 {
        return Err(invalid("reps", "need at least two replications"));
    }
    if !(time_cap > 0.0) || !time_cap.is_finite() {
        return Err(invalid("time_cap", "must be positive and finite"));
    }
    let mut values = Vec::with_capacity(reps);
    let mut censored = 0;
    for r in 0..reps {
        let (t, cut) = return_time(model, x0, spec, time_cap, Seed::replication(master_seed, r as u64))?;
        censored += usize::from(cut);
        values.push(libm::exp(eta * t));
    }
    let n = reps as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let std_error = libm::sqrt(var / n);
    let v_x0 = lyapunov_v(&model.kernel, x0, spec);
    Ok(ReturnTimeEstimate {
        mean,
        std_error,
        v_x0,
        censored,
        reps,
        pass: mean <= v_x0 * (1.0 + 3.0 * std_error / mean),
    })
}

/// Inputs of the minorization argument: a starting point, the heights of
/// the probe jumps, and the ages `s_1 > ... > s_m > 0` of those jumps at
/// the horizon `T` (jump `k` happens at `T - s_k`).
#[derive(Debug, Clone, PartialEq)]
pub struct MinorizationProbe {
    pub x_star: CascadeState,
    pub heights: Vec<Vec<f64>>,
    pub ages: Vec<f64>,
    pub horizon: f64,
}

impl MinorizationProbe {
    pub fn new(
        kernel: &ErlangSumKernel,
        x_star: CascadeState,
        heights: Vec<Vec<f64>>,
        ages: Vec<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let probe = MinorizationProbe {
            x_star,
            heights,
            ages,
            horizon,
        };
        probe.check_shape(kernel)?;
        if !probe.is_admissible() {
            return Err(Error::InadmissibleTimes);
        }
        Ok(probe)
    }

    fn check_shape(&self, kernel: &ErlangSumKernel) -> Result<()> {
        if self.x_star.len() != kernel.dimension() {
            return Err(Error::DimensionMismatch {
                what: "probe state",
                expected: kernel.dimension(),
                found: self.x_star.len(),
            });
        }
        if self.heights.len() != self.ages.len() {
            return Err(Error::DimensionMismatch {
                what: "probe heights",
                expected: self.ages.len(),
                found: self.heights.len(),
            });
        }
        if let Some(c) = self.heights.iter().find(|c| c.len() != kernel.len()) {
            return Err(Error::DimensionMismatch {
                what: "probe height vector",
                expected: kernel.len(),
                found: c.len(),
            });
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(invalid("horizon", "must be positive and finite"));
        }
        Ok(())
    }

    /// `T > s_1 > ... > s_m > 0`.
    pub fn is_admissible(&self) -> bool {
        let first_ok = self.ages.first().map_or(true, |&s| s < self.horizon);
        let last_ok = self.ages.last().map_or(true, |&s| s > 0.0);
        first_ok && last_ok && self.ages.windows(2).all(|w| w[0] > w[1])
    }

    /// Jump times `T - s_k` in increasing order.
    pub fn jump_times(&self) -> Vec<f64> {
        self.ages.iter().map(|s| self.horizon - s).collect()
    }
}

/// `phi_s(e_{(i,n_i)})` restricted to block `i`: `e^{-alpha s}(s^n/n!, ..., s, 1)`.
fn unit_response(decay: f64, order: usize, s: f64) -> Vec<f64> {
    let damp = libm::exp(-decay * s);
    let mut out = vec![0.0; order + 1];
    let mut term = 1.0;
    for p in 0..=order {
        if p > 0 {
            term *= s / p as f64;
        }
        out[order - p] = damp * term;
    }
    out
}

/// `gamma = phi_T(x) + sum_k sum_i c_k^i e^{-alpha_i s_k} v_i(s_k)`, the state
/// at time `T` when the only jumps are the probe jumps.
pub fn gamma_map(kernel: &ErlangSumKernel, probe: &MinorizationProbe) -> Result<CascadeState> {
    probe.check_shape(kernel)?;
    if !probe.is_admissible() {
        return Err(Error::InadmissibleTimes);
    }
    Ok(gamma_unchecked(kernel, probe))
}

fn gamma_unchecked(kernel: &ErlangSumKernel, probe: &MinorizationProbe) -> CascadeState {
    let mut out = flow(kernel, &probe.x_star, probe.horizon);
    for (c, &s) in probe.heights.iter().zip(&probe.ages) {
        for (i, term) in kernel.terms().iter().enumerate() {
            let v = unit_response(term.decay, term.order as usize, s);
            let block = kernel.block(i);
            for (slot, vk) in out.coords_mut()[block].iter_mut().zip(v) {
                *slot += c[i] * vk;
            }
        }
    }
    out
}

/// `d/ds [c e^{-alpha s} v(s)]` for one block.
fn response_derivative(decay: f64, order: usize, weight: f64, s: f64) -> Vec<f64> {
    let damp = weight * libm::exp(-decay * s);
    let mut out = vec![0.0; order + 1];
    // pow[p] = s^p / p!
    let mut pow = vec![1.0; order + 1];
    for p in 1..=order {
        pow[p] = pow[p - 1] * s / p as f64;
    }
    for m in 0..=order {
        let p = order - m;
        let lower = if p == 0 { 0.0 } else { pow[p - 1] };
        out[m] = damp * (lower - decay * pow[p]);
    }
    out
}

fn check_ages_in_range(probe: &MinorizationProbe) -> Result<()> {
    if probe.ages.iter().any(|&s| !(0.0..=probe.horizon).contains(&s)) {
        return Err(Error::InadmissibleTimes);
    }
    Ok(())
}

/// Jacobian of block `block` of `gamma` with respect to the ages. Requires
/// exactly `n_block + 1` probe jumps. Ages need only lie in `[0, T]`, so
/// degenerate (repeated) ages are allowed here.
pub fn block_jacobian(kernel: &ErlangSumKernel, probe: &MinorizationProbe, block: usize) -> Result<Matrix> {
    probe.check_shape(kernel)?;
    check_ages_in_range(probe)?;
    if block >= kernel.len() {
        return Err(invalid("block", "out of range"));
    }
    let term = kernel.terms()[block];
    let n = term.order as usize;
    if probe.ages.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            what: "probe jumps",
            expected: n + 1,
            found: probe.ages.len(),
        });
    }
    let columns: Vec<Vec<f64>> = probe
        .heights
        .iter()
        .zip(&probe.ages)
        .map(|(c, &s)| response_derivative(term.decay, n, c[block], s))
        .collect();
    Ok(Matrix::from_columns(&columns))
}

/// `d gamma / d s` and its determinant for a single-term kernel.
pub fn gamma_jacobian(kernel: &ErlangSumKernel, probe: &MinorizationProbe) -> Result<(Matrix, f64)> {
    if kernel.len() != 1 {
        return Err(invalid("kernel", "gamma_jacobian needs a single-term kernel"));
    }
    let m = block_jacobian(kernel, probe, 0)?;
    let det = m.determinant();
    Ok((m, det))
}

/// Closed form of `det d gamma_block / d s`:
/// `(-alpha)^{n+1} prod_k c_k e^{-alpha s_k} / prod_{j<=n} j! * det[s_k^{n-m}]`,
/// with the reversed Vandermonde determinant
/// `(-1)^{n(n+1)/2} prod_{i<j} (s_j - s_i)`.
pub fn vandermonde_determinant(kernel: &ErlangSumKernel, probe: &MinorizationProbe, block: usize) -> Result<f64> {
    probe.check_shape(kernel)?;
    check_ages_in_range(probe)?;
    let term = kernel.terms().get(block).ok_or_else(|| invalid("block", "out of range"))?;
    let n = term.order as usize;
    if probe.ages.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            what: "probe jumps",
            expected: n + 1,
            found: probe.ages.len(),
        });
    }
    let s = &probe.ages;
    let mut det = libm::pow(-term.decay, (n + 1) as f64);
    for (c, &sk) in probe.heights.iter().zip(s) {
        det *= c[block] * libm::exp(-term.decay * sk);
    }
    let mut fact = 1.0;
    for j in 1..=n {
        fact *= j as f64;
        det /= fact;
    }
    for j in 0..=n {
        for i in 0..j {
            det *= s[j] - s[i];
        }
    }
    if (n * (n + 1) / 2) % 2 == 1 {
        det = -det;
    }
    Ok(det)
}

const SURVIVAL_TOL: f64 = 1e-8;

/// `e(x, t) = exp(-int_0^t f(sum_i phi_s^{(i,0)}(x)) ds)`.
pub fn survival(kernel: &ErlangSumKernel, rate: &RateFunction, x: &CascadeState, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let integral = quad::adaptive_simpson(|s| rate.eval(flow_input(kernel, x, s)), 0.0, t, SURVIVAL_TOL, 16)
        .map_err(|estimate| Error::QuadratureNonConvergence { estimate })?;
    Ok(libm::exp(-integral))
}

/// Density of the probe jump times (given the probe heights):
/// `prod_k f(phi_{w_k}^{(0)}(x_{k-1})) e(x_{k-1}, w_k) * e(x_m, s_m)` with
/// waiting times `w_k = s_{k-1} - s_k`, `s_0 = T`, and `x_k` the state
/// right after jump `k`.
pub fn jump_time_density(kernel: &ErlangSumKernel, rate: &RateFunction, probe: &MinorizationProbe) -> Result<f64> {
    probe.check_shape(kernel)?;
    if !probe.is_admissible() {
        return Err(Error::InadmissibleTimes);
    }
    let mut x = probe.x_star.clone();
    let mut prev = probe.horizon;
    let mut density = 1.0;
    for (c, &s) in probe.heights.iter().zip(&probe.ages) {
        let wait = prev - s;
        density *= rate.eval(flow_input(kernel, &x, wait)) * survival(kernel, rate, &x, wait)?;
        x = flow(kernel, &x, wait);
        apply_jump_in_place(kernel, &mut x, c);
        prev = s;
    }
    Ok(density * survival(kernel, rate, &x, prev)?)
}

/// Smallest jump-time density over random age vectors within `radius` of
/// the probe ages (coordinatewise), skipping inadmissible draws.
pub fn density_floor(
    kernel: &ErlangSumKernel,
    rate: &RateFunction,
    probe: &MinorizationProbe,
    radius: f64,
    samples: usize,
    seed: Seed,
) -> Result<f64> {
    if !(radius >= 0.0) {
        return Err(invalid("radius", "must be nonnegative"));
    }
    let mut rng = StreamRng::new(seed);
    let mut floor = jump_time_density(kernel, rate, probe)?;
    let mut trial = probe.clone();
    for _ in 0..samples {
        for (slot, &s) in trial.ages.iter_mut().zip(&probe.ages) {
            *slot = s + radius * (2.0 * rng.uniform() - 1.0);
        }
        if trial.is_admissible() {
            floor = floor.min(jump_time_density(kernel, rate, &trial)?);
        }
    }
    Ok(floor)
}

/// Block-triangular structure of the map
/// `(x^{(l, .)}_{l < k}, s) -> (gamma^{(l, .)}_{l < k}, gamma^{(k, .)})`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockProbeReport {
    pub target_block: usize,
    /// Determinant of the assembled Jacobian by elimination.
    pub determinant: f64,
    /// `exp(-sum_{l<k} alpha_l (n_l + 1) T)`.
    pub flow_factor: f64,
    /// `det B` of the target block.
    pub block_determinant: f64,
    pub relative_error: f64,
    pub invertible: bool,
}

/// Dimension of the first `k` blocks.
fn leading_dimension(kernel: &ErlangSumKernel, k: usize) -> usize {
    (0..k).map(|l| kernel.block(l).len()).sum()
}

/// The map of [`BlockProbeReport`] evaluated at `(head, ages)`, where
/// `head` replaces the first `k` blocks of the probe state.
pub fn block_map(kernel: &ErlangSumKernel, probe: &MinorizationProbe, target_block: usize, head: &[f64], ages: &[f64]) -> Vec<f64> {
    let mut p = probe.clone();
    let dim = leading_dimension(kernel, target_block);
    p.x_star.coords_mut()[..dim].copy_from_slice(head);
    p.ages.copy_from_slice(ages);
    let g = gamma_unchecked(kernel, &p);
    let mut out = g.coords()[..dim].to_vec();
    out.extend_from_slice(&g.coords()[kernel.block(target_block)]);
    out
}

/// Assembles the Jacobian of [`block_map`] analytically and checks that its
/// determinant factors as `flow_factor * det B`.
pub fn minorization_probe_general(
    kernel: &ErlangSumKernel,
    probe: &MinorizationProbe,
    target_block: usize,
) -> Result<BlockProbeReport> {
    probe.check_shape(kernel)?;
    if !probe.is_admissible() {
        return Err(Error::InadmissibleTimes);
    }
    if target_block >= kernel.len() {
        return Err(invalid("block", "out of range"));
    }
    if let Some(jump) = probe.heights.iter().position(|c| c[target_block] == 0.0) {
        return Err(Error::ZeroHeight {
            jump,
            component: target_block,
        });
    }
    let b = block_jacobian(kernel, probe, target_block)?;
    let head = leading_dimension(kernel, target_block);
    let dim = head + b.dim();
    let mut jac = Matrix::zeros(dim);
    let t = probe.horizon;
    // flow blocks: d phi_T^{(l,k)} / d x^{(l,k+m)} = e^{-alpha T} T^m / m!
    let mut flow_factor = 1.0;
    for l in 0..target_block {
        let term = kernel.terms()[l];
        let r = kernel.block(l);
        let damp = libm::exp(-term.decay * t);
        flow_factor *= libm::pow(damp, r.len() as f64);
        for k in 0..r.len() {
            let mut coef = damp;
            for m in 0..r.len() - k {
                if m > 0 {
                    coef *= t / m as f64;
                }
                jac.set(r.start + k, r.start + k + m, coef);
            }
        }
    }
    // age columns
    for (j, (c, &s)) in probe.heights.iter().zip(&probe.ages).enumerate() {
        let col = head + j;
        for l in 0..target_block {
            let term = kernel.terms()[l];
            let r = kernel.block(l);
            for (k, v) in response_derivative(term.decay, term.order as usize, c[l], s).into_iter().enumerate() {
                jac.set(r.start + k, col, v);
            }
        }
        for k in 0..b.dim() {
            jac.set(head + k, col, b.get(k, j));
        }
    }
    let determinant = jac.determinant();
    let block_determinant = b.determinant();
    let product = flow_factor * block_determinant;
    let relative_error = if product == 0.0 {
        determinant.abs()
    } else {
        ((determinant - product) / product).abs()
    };
    Ok(BlockProbeReport {
        target_block,
        determinant,
        flow_factor,
        block_determinant,
        relative_error,
        invertible: block_determinant != 0.0 && flow_factor > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heights::{JumpHeightLaw, MonteCarlo};
    use crate::kernels::{choose_b, ErlangTerm};

    fn exact(c: &[f64]) -> HeightExpectation {
        HeightExpectation::new(&JumpHeightLaw::Constant(c.to_vec()), MonteCarlo::default())
    }

    fn st(k: &ErlangSumKernel, v: &[f64]) -> CascadeState {
        CascadeState::from_vec(k, v.to_vec()).unwrap()
    }

    #[test]
    fn lyapunov_examples() {
        let k = ErlangSumKernel::single(1.0, 1.0, 0).unwrap();
        let f = RateFunction::scaled_linear(5.0).unwrap();
        let spec = LyapunovSpec::from_weights(&k, &f, vec![0.5, 1.0], 1.0, DriftBranch::Lipschitz).unwrap();
        assert_eq!(lyapunov_v(&k, &CascadeState::zeros(&k), &spec), 1.0);
        assert_eq!(lyapunov_v(&k, &st(&k, &[2.0]), &spec), 3.0);
        assert_eq!(spec.contraction_rate, Some(0.5));
        assert!(spec.lambda > 0.0);
        assert_eq!(spec.beta, spec.p);
    }

    #[test]
    fn drift_holds_far_out_and_at_origin() {
        let k = ErlangSumKernel::single(1.0, 1.0, 3).unwrap();
        let f = RateFunction::sigmoid(1.0, 20.0, 1.0, 10.0).unwrap();
        let h = exact(&[10.0]);
        let spec = choose_b(&k, &f, &h).unwrap();
        let far = st(&k, &[1e6, -2e6, 3e6, 5e5]);
        let chk = verify_drift(&far, &k, &f, &h, &spec);
        assert!(!chk.in_drift_set);
        assert!(chk.pass && chk.generator.value < -spec.lambda * lyapunov_v(&k, &far, &spec) + 1e-6);
        let origin = verify_drift(&CascadeState::zeros(&k), &k, &f, &h, &spec);
        assert!(origin.in_drift_set && origin.pass);
    }

    #[test]
    fn return_time_deterministic_decay() {
        let k = ErlangSumKernel::single(1.0, 1.0, 0).unwrap();
        let f = RateFunction::scaled_linear(5.0).unwrap();
        let spec = choose_b(&k, &f, &exact(&[1.0])).unwrap();
        let zero = CascadeModel::with_kernel_heights(k.clone(), RateFunction::constant(0.0).unwrap()).unwrap();
        let x0 = st(&k, &[3.0 * spec.radius]);
        let (t, cut) = return_time(&zero, &x0, &spec, 100.0, Seed::new(0, 0)).unwrap();
        assert!(!cut);
        assert!((t - libm::log(3.0)).abs() < 1e-8, "{t}");
        let est = estimate_return_time(&zero, &x0, &spec, spec.lambda, 4, 0, 100.0).unwrap();
        assert!(est.pass && est.std_error == 0.0);
        assert!(estimate_return_time(&zero, &x0, &spec, 2.0 * spec.lambda, 4, 0, 100.0).is_err());
        let inside = CascadeState::zeros(&k);
        assert_eq!(return_time(&zero, &inside, &spec, 1.0, Seed::new(0, 0)).unwrap(), (0.0, false));
    }

    #[test]
    fn ball_entry_with_overshoot() {
        // (0, 1) under alpha = 1, n = 1: first coordinate rises then decays
        let k = ErlangSumKernel::single(1.0, 1.0, 1).unwrap();
        let x = st(&k, &[0.0, 1.0]);
        let t = first_ball_entry(&k, &x, 10.0, 0.5).unwrap();
        let norm = flow(&k, &x, t).l2_norm();
        assert!((norm - 0.5).abs() < 1e-9);
        assert!(first_ball_entry(&k, &x, 0.1, 0.5).is_none());
    }

    #[test]
    fn gamma_examples() {
        let k = ErlangSumKernel::single(1.0, 1.0, 0).unwrap();
        let p = MinorizationProbe::new(&k, CascadeState::zeros(&k), vec![vec![1.0]], vec![0.5], 2.0).unwrap();
        let g = gamma_map(&k, &p).unwrap();
        assert!((g.coords()[0] - libm::exp(-0.5)).abs() < 1e-15);
        let (j, det) = gamma_jacobian(&k, &p).unwrap();
        assert!((j.get(0, 0) + libm::exp(-0.5)).abs() < 1e-15);
        assert_eq!(det, j.get(0, 0));
        let mut zero = p.clone();
        zero.heights = vec![vec![0.0]];
        assert_eq!(gamma_map(&k, &zero).unwrap(), flow(&k, &zero.x_star, 2.0));
        assert!(MinorizationProbe::new(&k, CascadeState::zeros(&k), vec![vec![1.0]], vec![2.5], 2.0).is_err());
    }

    #[test]
    fn vandermonde_route_matches_elimination() {
        let k = ErlangSumKernel::single(1.0, 0.7, 3).unwrap();
        let p = MinorizationProbe::new(
            &k,
            st(&k, &[0.1, 0.2, -0.3, 0.4]),
            vec![vec![1.0], vec![-0.5], vec![2.0], vec![0.3]],
            vec![3.1, 2.2, 1.4, 0.3],
            4.0,
        )
        .unwrap();
        let (_, det) = gamma_jacobian(&k, &p).unwrap();
        let vdm = vandermonde_determinant(&k, &p, 0).unwrap();
        assert!(((det - vdm) / vdm).abs() < 1e-10, "{det} {vdm}");
        let mut rep = p.clone();
        rep.ages[2] = rep.ages[1];
        assert!(gamma_jacobian(&k, &rep).unwrap().1.abs() <= 1e-12);
        assert_eq!(vandermonde_determinant(&k, &rep, 0).unwrap(), 0.0);
    }

    #[test]
    fn survival_examples() {
        let k = ErlangSumKernel::single(1.0, 1.0, 0).unwrap();
        let c = RateFunction::constant(2.0).unwrap();
        let x = st(&k, &[1.0]);
        assert!((survival(&k, &c, &x, 1.5).unwrap() - libm::exp(-3.0)).abs() < 1e-12);
        assert_eq!(survival(&k, &c, &x, 0.0).unwrap(), 1.0);
        let id = RateFunction::linear_positive_part(0.0, 1.0).unwrap();
        let want = libm::exp(-(1.0 - libm::exp(-1.0)));
        assert!((survival(&k, &id, &x, 1.0).unwrap() - want).abs() < 1e-8);
        assert!((want - 0.531464).abs() < 1e-6);
    }

    #[test]
    fn constant_rate_density_collapses() {
        let k = ErlangSumKernel::single(1.0, 1.0, 0).unwrap();
        let c = RateFunction::constant(1.5).unwrap();
        let p = MinorizationProbe::new(&k, CascadeState::zeros(&k), vec![vec![1.0]], vec![0.8], 2.0).unwrap();
        let q = jump_time_density(&k, &c, &p).unwrap();
        assert!((q - 1.5 * libm::exp(-3.0)).abs() < 1e-12);
        let floor = density_floor(&k, &c, &p, 0.1, 50, Seed::new(1, 0)).unwrap();
        assert!((floor - q).abs() < 1e-12);
    }

    #[test]
    fn block_probe_two_terms() {
        let k = ErlangSumKernel::new(vec![ErlangTerm::new(1.0, 1.3, 0), ErlangTerm::new(1.0, 0.6, 0)]).unwrap();
        let p = MinorizationProbe::new(&k, st(&k, &[0.4, -0.2]), vec![vec![0.7, 1.1]], vec![0.9], 1.5).unwrap();
        let rep = minorization_probe_general(&k, &p, 1).unwrap();
        assert!(rep.relative_error < 1e-12);
        assert!((rep.flow_factor - libm::exp(-1.3 * 1.5)).abs() < 1e-15);
        assert!(rep.invertible);
        let mut z = p.clone();
        z.heights[0][1] = 0.0;
        assert!(matches!(minorization_probe_general(&k, &z, 1), Err(Error::ZeroHeight { .. })));
    }
}
