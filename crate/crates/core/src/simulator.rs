//! Exact thinning simulation of the cascade and a history-based oracle.
//!
//! At a snapshot `x` taken at clock `D` the simulator proposes a waiting
//! time `tau ~ Exp(f^*(x))`, accepts with probability
//! `f(sum_i phi_tau^{(i,0)}(x)) / f^*(x)` and moves the snapshot to
//! `phi_tau(x)` (plus the jump on acceptance). The bound is recomputed after
//! every proposal.
//!
//! Random draws per proposal, in order: one uniform for the waiting time;
//! if the proposal falls before the horizon, one uniform for acceptance;
//! on acceptance, the height draws. Both simulators follow this order, so
//! equal seeds give equal event logs.

use alloc::vec;
use alloc::vec::Vec;

use crate::cascade::{
    apply_jump_in_place, dominating_rate, flow, flow_input, CascadeState, DominatingMode,
};
use crate::error::{Error, Result};
use crate::heights::JumpHeightLaw;
use crate::kernels::{erlang_factor, ErlangSumKernel, RateFunction};
use crate::rng::{Seed, StreamRng};

/// Kernel, rate function and height law of one cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub kernel: ErlangSumKernel,
    pub rate: RateFunction,
    pub heights: JumpHeightLaw,
    pub dominating: DominatingMode,
}

impl CascadeModel {
    pub fn new(kernel: ErlangSumKernel, rate: RateFunction, heights: JumpHeightLaw) -> Result<Self> {
        heights.validate(kernel.len())?;
        Ok(CascadeModel {
            kernel,
            rate,
            heights,
            dominating: DominatingMode::default(),
        })
    }

    /// Heights equal to the kernel weights `c_i` at every jump.
    pub fn with_kernel_heights(kernel: ErlangSumKernel, rate: RateFunction) -> Result<Self> {
        let heights = JumpHeightLaw::Constant(kernel.terms().iter().map(|t| t.weight).collect());
        Self::new(kernel, rate, heights)
    }

    pub fn with_dominating(mut self, mode: DominatingMode) -> Self {
        self.dominating = mode;
        self
    }

    pub(crate) fn check_state(&self, x: &CascadeState) -> Result<()> {
        if x.len() != self.kernel.dimension() {
            return Err(Error::DimensionMismatch {
                what: "initial state",
                expected: self.kernel.dimension(),
                found: x.len(),
            });
        }
        Ok(())
    }
}

/// Jump times and heights of one run on `(0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub times: Vec<f64>,
    pub heights: Vec<Vec<f64>>,
    pub horizon: f64,
    pub initial_state: CascadeState,
    pub seed: Seed,
    pub proposal_count: u64,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `N_t = #{events <= t}`.
    pub fn count_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(crate::error::invalid("horizon", "must be positive and finite"))
    }
}

/// One proposal of the thinning loop.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Step {
    Jump { time: f64, elapsed: f64, heights: Vec<f64> },
    Reject { time: f64, elapsed: f64 },
    /// No further proposal before the horizon; `elapsed` runs up to it.
    Horizon { elapsed: f64 },
}

/// Stateful thinning loop over one keyed stream.
pub(crate) struct Thinning<'m> {
    model: &'m CascadeModel,
    state: CascadeState,
    clock: f64,
    horizon: f64,
    rng: StreamRng,
    proposals: u64,
    done: bool,
}

impl<'m> Thinning<'m> {
    pub(crate) fn new(model: &'m CascadeModel, x0: &CascadeState, horizon: f64, seed: Seed) -> Self {
        Thinning {
            model,
            state: x0.clone(),
            clock: 0.0,
            horizon,
            rng: StreamRng::new(seed),
            proposals: 0,
            done: false,
        }
    }

    pub(crate) fn state(&self) -> &CascadeState {
        &self.state
    }

    pub(crate) fn clock(&self) -> f64 {
        self.clock
    }

    pub(crate) fn step(&mut self) -> Result<Option<Step>> {
        if self.done {
            return Ok(None);
        }
        let m = self.model;
        let bound = dominating_rate(&m.kernel, &self.state, &m.rate, m.dominating);
        let tau = self.rng.exponential(bound);
        if !(self.clock + tau <= self.horizon) {
            self.done = true;
            return Ok(Some(Step::Horizon {
                elapsed: self.horizon - self.clock,
            }));
        }
        self.proposals += 1;
        let u = self.rng.uniform();
        let lambda = m.rate.eval(flow_input(&m.kernel, &self.state, tau));
        if lambda > bound {
            return Err(Error::DominationViolation {
                time: self.clock + tau,
                intensity: lambda,
                bound,
                state: self.state.coords().to_vec(),
            });
        }
        self.state = flow(&m.kernel, &self.state, tau);
        self.clock += tau;
        if u < lambda / bound {
            let heights = m.heights.sample(&mut self.rng);
            apply_jump_in_place(&m.kernel, &mut self.state, &heights);
            Ok(Some(Step::Jump {
                time: self.clock,
                elapsed: tau,
                heights,
            }))
        } else {
            Ok(Some(Step::Reject {
                time: self.clock,
                elapsed: tau,
            }))
        }
    }
}

/// Simulates the cascade on `[0, horizon]` by thinning.
pub fn simulate_cascade(
    model: &CascadeModel,
    x0: &CascadeState,
    horizon: f64,
    seed: Seed,
) -> Result<EventLog> {
    model.check_state(x0)?;
    check_horizon(horizon)?;
    let mut engine = Thinning::new(model, x0, horizon, seed);
    let mut times = Vec::new();
    let mut heights = Vec::new();
    while let Some(step) = engine.step()? {
        if let Step::Jump { time, heights: c, .. } = step {
            if let Some(&last) = times.last() {
                debug_assert!(time > last, "event times must increase");
            }
            times.push(time);
            heights.push(c);
        }
    }
    Ok(EventLog {
        times,
        heights,
        horizon,
        initial_state: x0.clone(),
        seed,
        proposal_count: engine.proposals,
    })
}

/// Intensity at time `t` computed from the explicit event history:
/// `f(sum_i phi_t^{(i,0)}(x0) + sum_{T_j < t} sum_i c_i^{(j)} e^{-alpha_i (t-T_j)} (t-T_j)^{n_i}/n_i!)`.
pub fn history_intensity(
    model: &CascadeModel,
    x0: &CascadeState,
    times: &[f64],
    heights: &[Vec<f64>],
    t: f64,
) -> f64 {
    let mut input = flow_input(&model.kernel, x0, t);
    for (s, c) in times.iter().zip(heights).take_while(|(s, _)| **s < t) {
        let lag = t - s;
        for (term, ci) in model.kernel.terms().iter().zip(c) {
            input += ci * erlang_factor(term.decay, term.order, lag);
        }
    }
    model.rate.eval(input)
}

/// History-based oracle simulator.
///
/// Acceptance uses [`history_intensity`]; the proposal bound is taken from a
/// cascade snapshot maintained alongside the history. With the same seed it
/// reproduces [`simulate_cascade`] event for event.
pub fn simulate_direct(
    model: &CascadeModel,
    x0: &CascadeState,
    horizon: f64,
    seed: Seed,
) -> Result<EventLog> {
    model.check_state(x0)?;
    check_horizon(horizon)?;
    let k = &model.kernel;
    let mut rng = StreamRng::new(seed);
    let mut snapshot = x0.clone();
    let mut clock = 0.0;
    let mut proposals = 0;
    let mut times: Vec<f64> = Vec::new();
    let mut heights: Vec<Vec<f64>> = Vec::new();
    loop {
        let bound = dominating_rate(k, &snapshot, &model.rate, model.dominating);
        let tau = rng.exponential(bound);
        if !(clock + tau <= horizon) {
            break;
        }
        proposals += 1;
        let u = rng.uniform();
        let candidate = clock + tau;
        let lambda = history_intensity(model, x0, &times, &heights, candidate);
        if lambda > bound {
            return Err(Error::DominationViolation {
                time: candidate,
                intensity: lambda,
                bound,
                state: snapshot.coords().to_vec(),
            });
        }
        snapshot = flow(k, &snapshot, tau);
        clock = candidate;
        if u < lambda / bound {
            let c = model.heights.sample(&mut rng);
            apply_jump_in_place(k, &mut snapshot, &c);
            times.push(clock);
            heights.push(c);
        }
    }
    Ok(EventLog {
        times,
        heights,
        horizon,
        initial_state: x0.clone(),
        seed,
        proposal_count: proposals,
    })
}

/// Cascade states replayed from an event log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub grid: Vec<f64>,
    pub states: Vec<CascadeState>,
    /// `X_{T_j-}` for every event `j`.
    pub left_limits: Vec<CascadeState>,
    /// `X_{T_j}` for every event `j`.
    pub post_jump: Vec<CascadeState>,
}

/// Deterministic replay of `log` on `grid` (right-continuous at events).
pub fn reconstruct_trajectory(
    kernel: &ErlangSumKernel,
    log: &EventLog,
    grid: &[f64],
) -> Result<TrajectorySample> {
    if grid.windows(2).any(|w| !(w[0] <= w[1]))
        || grid.iter().any(|&t| !(0.0..=log.horizon).contains(&t))
    {
        return Err(Error::InvalidGrid);
    }
    let mut left_limits = Vec::with_capacity(log.len());
    let mut post_jump = Vec::with_capacity(log.len());
    let mut current = log.initial_state.clone();
    let mut last = 0.0;
    for (&t, c) in log.times.iter().zip(&log.heights) {
        let left = flow(kernel, &current, t - last);
        let mut post = left.clone();
        apply_jump_in_place(kernel, &mut post, c);
        left_limits.push(left);
        current = post.clone();
        post_jump.push(post);
        last = t;
    }
    let states = grid
        .iter()
        .map(|&t| match log.count_at(t) {
            0 => flow(kernel, &log.initial_state, t),
            j => flow(kernel, &post_jump[j - 1], t - log.times[j - 1]),
        })
        .collect();
    Ok(TrajectorySample {
        grid: grid.to_vec(),
        states,
        left_limits,
        post_jump,
    })
}

/// Mean of `S_t` over replications with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
}

/// `S_t` (sum of all coordinates) on `t_grid` for one replication.
pub fn replication_state_sums(
    model: &CascadeModel,
    x0: &CascadeState,
    horizon: f64,
    t_grid: &[f64],
    seed: Seed,
) -> Result<Vec<f64>> {
    let log = simulate_cascade(model, x0, horizon, seed)?;
    let traj = reconstruct_trajectory(&model.kernel, &log, t_grid)?;
    Ok(traj.states.iter().map(CascadeState::total).collect())
}

/// Aggregates per-replication rows (indexed by replication) column by column.
pub fn summarize(t_grid: &[f64], samples: &[Vec<f64>]) -> Vec<MomentRow> {
    let n = samples.len() as f64;
    t_grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
            let var = if samples.len() > 1 {
                samples.iter().map(|s| (s[j] - mean) * (s[j] - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            MomentRow {
                t,
                mean,
                std_error: libm::sqrt(var / n),
            }
        })
        .collect()
}

/// Empirical mean of `S_t` over `reps` replications; replication `r` uses
/// stream `r` of `master_seed`.
pub fn batch_moments(
    model: &CascadeModel,
    x0: &CascadeState,
    horizon: f64,
    reps: usize,
    t_grid: &[f64],
    master_seed: u64,
) -> Result<Vec<MomentRow>> {
    if reps < 2 {
        return Err(crate::error::invalid("reps", "need at least two replications"));
    }
    let samples = (0..reps)
        .map(|r| replication_state_sums(model, x0, horizon, t_grid, Seed::replication(master_seed, r as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(t_grid, &samples))
}

/// Zero-filled height vector for the model.
#[allow(dead_code)]
pub(crate) fn zero_heights(model: &CascadeModel) -> Vec<f64> {
    vec![0.0; model.kernel.len()]
}
