//! Two copies of the cascade driven so that they jump together as often as
//! possible, and the constants of the resulting contraction bound
//! `E H(X_t, Y_t) <= H(x, y) e^{-d t}`.

use alloc::vec::Vec;

use crate::cascade::{apply_jump_in_place, dominating_rate, flow, flow_input, lyapunov_weight, CascadeState};
use crate::error::{invalid, Error, Result};
use crate::heights::HeightExpectation;
use crate::kernels::{height_moments, ErlangSumKernel, RateFunction};
use crate::rng::{Seed, StreamRng};
use crate::simulator::{reconstruct_trajectory, summarize, CascadeModel, EventLog, MomentRow};
use crate::stability::contraction_d;

/// A pair of states on the same kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub x: CascadeState,
    pub y: CascadeState,
}

impl CoupledState {
    pub fn new(x: CascadeState, y: CascadeState) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                what: "coupled state",
                expected: x.len(),
                found: y.len(),
            });
        }
        Ok(CoupledState { x, y })
    }
}

/// `H(x, y) = sum_{i,k} b(k+1)/alpha_i^k |x^{(i,k)} - y^{(i,k)}|`.
pub fn h_distance(kernel: &ErlangSumKernel, x: &CascadeState, y: &CascadeState, weights: &[f64]) -> f64 {
    let (xs, ys) = (x.coords(), y.coords());
    let mut h = 0.0;
    for (i, term) in kernel.terms().iter().enumerate() {
        for (k, idx) in kernel.block(i).enumerate() {
            h += lyapunov_weight(weights, term.decay, k) * (xs[idx] - ys[idx]).abs();
        }
    }
    h
}

/// `kappa` and `d` of the contraction bound for the weights `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionConstants {
    pub kappa: f64,
    pub rate: f64,
    pub weights: Vec<f64>,
}

/// Checks the moment and weight conditions and computes
/// `kappa = (A^n v 1)/(1 ^ alpha^{n+1}) b(n+1)/b(1)` and `d`.
pub fn contraction_constants(
    kernel: &ErlangSumKernel,
    rate: &RateFunction,
    heights: &HeightExpectation,
    weights: &[f64],
) -> Result<ContractionConstants> {
    let lip = rate.lipschitz().ok_or(Error::MissingRateMetadata)?;
    let n = kernel.max_order() as usize;
    if weights.len() != n + 2 {
        return Err(Error::DimensionMismatch {
            what: "weight function",
            expected: n + 2,
            found: weights.len(),
        });
    }
    if weights.windows(2).any(|w| !(w[1] > w[0])) || weights[0] < 0.0 {
        return Err(invalid("b", "must be nonnegative and strictly increasing"));
    }
    let alpha = kernel.min_decay();
    let big_a = kernel.max_decay();
    let (uniform, own) = height_moments(kernel, heights);
    let moment = lip * uniform.value;
    if !(moment < alpha) {
        return Err(Error::Infeasible {
            condition: "drift moment condition",
            lhs: moment,
            rhs: alpha,
        });
    }
    let spread = weights[n + 1] / weights[1];
    if !(spread * moment < alpha) {
        return Err(Error::Infeasible {
            condition: "weight condition on b",
            lhs: spread * moment,
            rhs: alpha,
        });
    }
    let d = contraction_d(alpha, lip, weights, own.value);
    if !(d > 0.0) {
        return Err(Error::NoContractionCertificate { rate: d });
    }
    let nf = n as f64;
    let kappa = libm::pow(big_a, nf).max(1.0) / libm::pow(alpha, nf + 1.0).min(1.0) * spread;
    Ok(ContractionConstants {
        kappa,
        rate: d,
        weights: weights.to_vec(),
    })
}

/// Which copies moved at a coupled event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Joint,
    XOnly,
    YOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledEvent {
    pub time: f64,
    pub channel: Channel,
    pub heights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledLog {
    pub events: Vec<CoupledEvent>,
    pub x: EventLog,
    pub y: EventLog,
}

/// Simulates the coupled pair on `[0, horizon]`.
///
/// Proposals arrive at rate `B = f^*(x) v f^*(y)`. With `V = U B` an
/// accepted proposal is joint (one height draw shared) when
/// `V < f_x ^ f_y`, moves only `x` when `V < f_x`, only `y` when `V < f_y`;
/// solo jumps draw fresh heights.
pub fn simulate_coupled(
    model: &CascadeModel,
    x0: &CascadeState,
    y0: &CascadeState,
    horizon: f64,
    seed: Seed,
) -> Result<CoupledLog> {
    model.check_state(x0)?;
    model.check_state(y0)?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(invalid("horizon", "must be positive and finite"));
    }
    let k = &model.kernel;
    let mut rng = StreamRng::new(seed);
    let mut x = x0.clone();
    let mut y = y0.clone();
    let mut clock = 0.0;
    let mut proposals = 0u64;
    let mut events = Vec::new();
    let (mut xt, mut xh, mut yt, mut yh) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    loop {
        let bx = dominating_rate(k, &x, &model.rate, model.dominating);
        let by = dominating_rate(k, &y, &model.rate, model.dominating);
        let bound = bx.max(by);
        let tau = rng.exponential(bound);
        if !(clock + tau <= horizon) {
            break;
        }
        proposals += 1;
        let u = rng.uniform();
        let fx = model.rate.eval(flow_input(k, &x, tau));
        let fy = model.rate.eval(flow_input(k, &y, tau));
        for (lam, b, s) in [(fx, bx, &x), (fy, by, &y)] {
            if lam > b {
                return Err(Error::DominationViolation {
                    time: clock + tau,
                    intensity: lam,
                    bound: b,
                    state: s.coords().to_vec(),
                });
            }
        }
        x = flow(k, &x, tau);
        y = flow(k, &y, tau);
        clock += tau;
        let v = u * bound;
        let channel = if v < fx.min(fy) {
            Channel::Joint
        } else if v < fx {
            Channel::XOnly
        } else if v < fy {
            Channel::YOnly
        } else {
            continue;
        };
        let c = model.heights.sample(&mut rng);
        if channel != Channel::YOnly {
            apply_jump_in_place(k, &mut x, &c);
            xt.push(clock);
            xh.push(c.clone());
        }
        if channel != Channel::XOnly {
            apply_jump_in_place(k, &mut y, &c);
            yt.push(clock);
            yh.push(c.clone());
        }
        events.push(CoupledEvent {
            time: clock,
            channel,
            heights: c,
        });
    }
    let log = |times, heights, init: &CascadeState| EventLog {
        times,
        heights,
        horizon,
        initial_state: init.clone(),
        seed,
        proposal_count: proposals,
    };
    Ok(CoupledLog {
        events,
        x: log(xt, xh, x0),
        y: log(yt, yh, y0),
    })
}

/// `(H, S(x), S(y))` on `t_grid` for one coupled run.
pub fn coupled_curve(
    model: &CascadeModel,
    x0: &CascadeState,
    y0: &CascadeState,
    weights: &[f64],
    t_grid: &[f64],
    seed: Seed,
) -> Result<Vec<(f64, f64, f64)>> {
    let horizon = t_grid.iter().copied().fold(0.0, f64::max);
    if !(horizon > 0.0) {
        return Err(Error::InvalidGrid);
    }
    let log = simulate_coupled(model, x0, y0, horizon, seed)?;
    let tx = reconstruct_trajectory(&model.kernel, &log.x, t_grid)?;
    let ty = reconstruct_trajectory(&model.kernel, &log.y, t_grid)?;
    Ok(tx
        .states
        .iter()
        .zip(&ty.states)
        .map(|(a, b)| (h_distance(&model.kernel, a, b, weights), a.total(), b.total()))
        .collect())
}

/// Monte Carlo estimate of `E H(X_t, Y_t)` on `t_grid`.
pub fn estimate_contraction(
    model: &CascadeModel,
    x0: &CascadeState,
    y0: &CascadeState,
    weights: &[f64],
    reps: usize,
    t_grid: &[f64],
    master_seed: u64,
) -> Result<Vec<MomentRow>> {
    if reps < 2 {
        return Err(invalid("reps", "need at least two replications"));
    }
    let samples = (0..reps)
        .map(|r| {
            coupled_curve(model, x0, y0, weights, t_grid, Seed::replication(master_seed, r as u64))
                .map(|rows| rows.into_iter().map(|(h, _, _)| h).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(t_grid, &samples))
}
