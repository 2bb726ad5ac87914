//! The subcommands. Each builds a [`Bundle`] in memory; [`run`] writes it.

use std::fmt::Write as _;
use std::path::PathBuf;

use cascade_core::cascade::CascadeState;
use cascade_core::coupling::{contraction_constants, h_distance, simulate_coupled, Channel};
use cascade_core::kernels::{check_stability, choose_b, ConditionStatus};
use cascade_core::linalg::Matrix;
use cascade_core::simulator::{reconstruct_trajectory, simulate_cascade, simulate_direct, summarize, EventLog};
use cascade_core::stability::{
    block_jacobian, block_map, density_floor, gamma_map, jump_time_density, lyapunov_v, minorization_probe_general,
    return_time, vandermonde_determinant, verify_drift, DriftBranch, MinorizationProbe,
};
use cascade_core::{HeightExpectation, LyapunovSpec, MonteCarlo, RateFamily, Seed, StreamRng};
use rayon::prelude::*;

use crate::config::{set_path, ConfigError, Experiment, ExperimentConfig};
use crate::output::{events_csv, list, num, report, trajectory_csv, Bundle};
use crate::{CliError, Command, Overrides};

/// Streams reserved for auxiliary sampling, far from replication indices.
const STATE_STREAM: u64 = 1 << 62;
const PROBE_STREAM: u64 = (1 << 62) + 1;
const FLOOR_STREAM: u64 = (1 << 62) + 2;

#[derive(Debug)]
pub struct Outcome {
    pub passed: bool,
    pub summary: Vec<String>,
    pub bundle: Bundle,
    pub out_dir: PathBuf,
}

struct Partial {
    passed: bool,
    summary: Vec<String>,
    bundle: Bundle,
}

impl Partial {
    fn new() -> Self {
        Partial {
            passed: true,
            summary: Vec::new(),
            bundle: Bundle::new(),
        }
    }

    fn say(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }
}

/// Config with the command-line overrides folded in.
pub fn effective_config(config: &ExperimentConfig, overrides: &Overrides) -> ExperimentConfig {
    let mut c = config.clone();
    if let Some(seed) = overrides.seed {
        c.seed = seed;
    }
    if let Some(reps) = overrides.reps {
        c.replications = reps;
    }
    c
}

fn output_dir(config: &ExperimentConfig, command: Command, overrides: &Overrides) -> PathBuf {
    if let Some(out) = &overrides.out {
        return out.clone();
    }
    match &config.output.dir {
        Some(d) => PathBuf::from(d),
        None => PathBuf::from("out").join(config.name.as_deref().unwrap_or(command.name())),
    }
}

/// The config as hashed into the manifest. Where the files go does not
/// change what they contain, so the output directory is left out.
pub fn canonical_json(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.output.dir = None;
    serde_json::to_string(&c).expect("config serializes")
}

/// Runs `command` without touching the filesystem.
pub fn execute(command: Command, config: &ExperimentConfig, overrides: &Overrides) -> Result<Outcome, CliError> {
    let config = effective_config(config, overrides);
    let out_dir = output_dir(&config, command, overrides);
    let exp = config.build()?;
    // `simulate` writes one path unless asked for more
    let paths = overrides.reps.unwrap_or(1);
    let mut part = match command {
        Command::Simulate => simulate(&exp, paths)?,
        Command::OracleCompare => oracle_compare(&exp)?,
        Command::ValidateMoments => validate_moments(&exp)?,
        Command::Couple => couple(&exp)?,
        Command::DriftCheck => drift_check(&exp)?,
        Command::MinorizationCheck => minorization_check(&exp)?,
        Command::Sweep => sweep(&exp, overrides)?,
    };
    let canonical = canonical_json(&config);
    let reps = if command == Command::Simulate { paths } else { config.replications };
    let manifest = part.bundle.manifest(command.name(), &canonical, config.seed, reps);
    part.bundle.add("manifest.json", manifest);
    Ok(Outcome {
        passed: part.passed,
        summary: part.summary,
        bundle: part.bundle,
        out_dir,
    })
}

/// Runs `command` and writes its files.
pub fn run(command: Command, config: &ExperimentConfig, overrides: &Overrides) -> Result<Outcome, CliError> {
    let outcome = execute(command, config, overrides)?;
    outcome.bundle.write(&outcome.out_dir)?;
    Ok(outcome)
}

fn seed(exp: &Experiment, r: usize) -> Seed {
    Seed::replication(exp.config.seed, r as u64)
}

fn path_files(exp: &Experiment, log: &EventLog) -> Result<Bundle, CliError> {
    let k = &exp.model.kernel;
    let sample = reconstruct_trajectory(k, log, &exp.config.trajectory_grid())?;
    let mut b = Bundle::new();
    b.add("events.csv", events_csv(log, k.len()));
    b.add("trajectory.csv", trajectory_csv(k, log, &sample, None));
    if k.len() > 1 {
        for i in 0..k.len() {
            b.add(format!("trajectory_block_{}.csv", i + 1), trajectory_csv(k, log, &sample, Some(i)));
        }
    }
    Ok(b)
}

fn simulate(exp: &Experiment, paths: usize) -> Result<Partial, CliError> {
    if paths == 0 {
        return Err(ConfigError::new("--reps", "must be at least 1").into());
    }
    let logs: Vec<EventLog> = (0..paths)
        .into_par_iter()
        .map(|r| simulate_cascade(&exp.model, &exp.x0, exp.config.horizon, seed(exp, r)))
        .collect::<Result<_, _>>()?;
    let mut part = Partial::new();
    let mut rows = String::from("path,events,proposals,final_sum\n");
    for (r, log) in logs.iter().enumerate() {
        let files = path_files(exp, log)?;
        let end = reconstruct_trajectory(&exp.model.kernel, log, &[exp.config.horizon])?;
        let _ = writeln!(rows, "{r},{},{},{}", log.len(), log.proposal_count, num(end.states[0].total()));
        if paths == 1 {
            part.bundle = files;
        } else {
            part.bundle.nest(&format!("path_{r:04}"), files);
        }
    }
    part.bundle.add("paths.csv", rows);
    let total: usize = logs.iter().map(EventLog::len).sum();
    let proposals: u64 = logs.iter().map(|l| l.proposal_count).sum();
    part.say(format!("paths={paths}"));
    part.say(format!("events={total}"));
    part.say(format!("proposals={proposals}"));
    part.say(format!("mean_event_rate={}", num(total as f64 / (paths as f64 * exp.config.horizon))));
    Ok(part)
}

/// First index where two logs disagree, with a description.
fn first_difference(a: &EventLog, b: &EventLog) -> Option<(usize, String)> {
    for (j, ((ta, ha), (tb, hb))) in a.times.iter().zip(&a.heights).zip(b.times.iter().zip(&b.heights)).enumerate() {
        if ta.to_bits() != tb.to_bits() {
            return Some((j, format!("time {} vs {}", num(*ta), num(*tb))));
        }
        if ha.iter().zip(hb).any(|(x, y)| x.to_bits() != y.to_bits()) {
            return Some((j, format!("heights {} vs {}", list(ha), list(hb))));
        }
    }
    if a.len() != b.len() {
        return Some((a.len().min(b.len()), format!("event count {} vs {}", a.len(), b.len())));
    }
    None
}

/// Event counts of both simulators and their first disagreement.
type OracleRow = (usize, usize, Option<(usize, String)>);

fn oracle_compare(exp: &Experiment) -> Result<Partial, CliError> {
    let reps = exp.config.replications;
    let rows: Vec<OracleRow> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let a = simulate_cascade(&exp.model, &exp.x0, exp.config.horizon, seed(exp, r))?;
            let b = simulate_direct(&exp.model, &exp.x0, exp.config.horizon, seed(exp, r))?;
            Ok((a.len(), b.len(), first_difference(&a, &b)))
        })
        .collect::<Result<_, cascade_core::Error>>()?;
    let mut csv = String::from("replication,cascade_events,direct_events,identical,first_difference\n");
    let mut mismatches = Vec::new();
    for (r, (na, nb, diff)) in rows.iter().enumerate() {
        let at = diff.as_ref().map_or(String::new(), |(j, _)| j.to_string());
        let _ = writeln!(csv, "{r},{na},{nb},{},{at}", diff.is_none());
        if let Some((j, what)) = diff {
            mismatches.push(format!("mismatch.{r}=event {j}: {what}"));
        }
    }
    let events: usize = rows.iter().map(|r| r.0).sum();
    let mut part = Partial::new();
    part.passed = mismatches.is_empty();
    let mut text = report(&[
        ("replications", reps.to_string()),
        ("events", events.to_string()),
        ("identical", (reps - mismatches.len()).to_string()),
        ("mismatches", mismatches.len().to_string()),
    ]);
    for m in &mismatches {
        text.push_str(m);
        text.push('\n');
    }
    part.bundle.add("oracle.csv", csv);
    part.bundle.add("oracle_report.txt", text.clone());
    part.summary = text.lines().map(str::to_string).collect();
    Ok(part)
}

/// `E S_t` in closed form when the mean equation closes: one term with
/// constant height `c`, `f = (mu + s y) 1{y >= 0}` with `c s = 1` and a
/// nonnegative start, so `L S = (1 - alpha) S + c mu`.
pub fn mean_theory(exp: &Experiment) -> Option<Box<dyn Fn(f64) -> f64>> {
    let k = &exp.model.kernel;
    if k.len() != 1 || !exp.x0.is_nonnegative() {
        return None;
    }
    let c = match &exp.model.heights {
        cascade_core::JumpHeightLaw::Constant(c) => c[0],
        _ => return None,
    };
    let (mu, slope) = match *exp.model.rate.family() {
        RateFamily::LinearPositivePart { baseline, slope } => (baseline, slope),
        _ => return None,
    };
    if !(c > 0.0) || (c * slope - 1.0).abs() > 1e-12 {
        return None;
    }
    let a = 1.0 - k.terms()[0].decay;
    let s0 = exp.x0.total();
    Some(Box::new(move |t: f64| {
        if a == 0.0 {
            s0 + c * mu * t
        } else {
            let g = (a * t).exp();
            s0 * g + c * mu * (g - 1.0) / a
        }
    }))
}

fn validate_moments(exp: &Experiment) -> Result<Partial, CliError> {
    let cfg = &exp.config;
    let opts = cfg.moments.clone().unwrap_or(crate::config::MomentsConfig {
        times: None,
        step: 1.0,
        z_tolerance: 3.0,
    });
    let times = opts.times.clone().unwrap_or_else(|| cfg.stepped_times(opts.step));
    if cfg.replications < 2 {
        return Err(ConfigError::new("replications", "validate-moments needs at least 2").into());
    }
    let samples: Vec<Vec<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let log = simulate_cascade(&exp.model, &exp.x0, cfg.horizon, seed(exp, r))?;
            let traj = reconstruct_trajectory(&exp.model.kernel, &log, &times)?;
            Ok(traj.states.iter().map(CascadeState::total).collect())
        })
        .collect::<Result<_, cascade_core::Error>>()?;
    let rows = summarize(&times, &samples);
    let theory = mean_theory(exp);
    let mut csv = String::from("t,mean,stderr,theory,z\n");
    let mut worst: f64 = 0.0;
    for row in &rows {
        let (th, z) = match &theory {
            Some(m) => {
                let th = m(row.t);
                let diff = row.mean - th;
                let z = if row.std_error > 0.0 {
                    diff / row.std_error
                } else if diff.abs() <= 1e-9 * (1.0 + th.abs()) {
                    0.0
                } else {
                    diff.signum() * f64::INFINITY
                };
                worst = worst.max(z.abs());
                (th, z)
            }
            None => (f64::NAN, f64::NAN),
        };
        let _ = writeln!(csv, "{},{},{},{},{}", num(row.t), num(row.mean), num(row.std_error), num(th), num(z));
    }
    let mut part = Partial::new();
    part.bundle.add("moments.csv", csv);
    part.say(format!("replications={}", cfg.replications));
    part.say(format!("times={}", times.len()));
    match theory {
        Some(_) => {
            part.passed = worst <= opts.z_tolerance;
            part.say("theory=closed_form".to_string());
            part.say(format!("max_abs_z={}", num(worst)));
            part.say(format!("z_tolerance={}", num(opts.z_tolerance)));
        }
        None => part.say("theory=none (no closed form for this model; empirical table only)".to_string()),
    }
    let text = part.summary.join("\n") + "\n";
    part.bundle.add("moments_report.txt", text);
    Ok(part)
}

fn expectation(exp: &Experiment) -> HeightExpectation {
    HeightExpectation::new(
        &exp.model.heights,
        MonteCarlo {
            samples: 20_000,
            seed: exp.config.seed,
        },
    )
}

fn drift_spec(exp: &Experiment, heights: &HeightExpectation) -> Result<LyapunovSpec, CliError> {
    Ok(choose_b(&exp.model.kernel, &exp.model.rate, heights)?)
}

fn coupling_section(exp: &Experiment) -> Result<&crate::config::CouplingConfig, CliError> {
    exp.config
        .coupling
        .as_ref()
        .ok_or_else(|| ConfigError::new("coupling", "section required by `couple`").into())
}

fn couple(exp: &Experiment) -> Result<Partial, CliError> {
    let cfg = &exp.config;
    let section = coupling_section(exp)?;
    let k = &exp.model.kernel;
    let y0 = CascadeState::from_vec(k, section.y0.clone()).map_err(|e| ConfigError::new("coupling.y0", e))?;
    let heights = expectation(exp);
    let weights = match &section.weights {
        Some(w) => w.clone(),
        None => drift_spec(exp, &heights)?.weights,
    };
    let constants = contraction_constants(k, &exp.model.rate, &heights, &weights);
    let h0 = h_distance(k, &exp.x0, &y0, &weights);

    let log = simulate_coupled(&exp.model, &exp.x0, &y0, cfg.horizon, seed(exp, 0))?;
    let grid = cfg.trajectory_grid();
    let tx = reconstruct_trajectory(k, &log.x, &grid)?;
    let ty = reconstruct_trajectory(k, &log.y, &grid)?;
    let mut csv = String::from("time,H,sum_x,sum_y\n");
    for ((t, a), b) in grid.iter().zip(&tx.states).zip(&ty.states) {
        let _ = writeln!(csv, "{},{},{},{}", num(*t), num(h_distance(k, a, b, &weights)), num(a.total()), num(b.total()));
    }
    let mut part = Partial::new();
    part.bundle.add("coupling.csv", csv);
    part.bundle.add("events_x.csv", events_csv(&log.x, k.len()));
    part.bundle.add("events_y.csv", events_csv(&log.y, k.len()));
    let count = |c: Channel| log.events.iter().filter(|e| e.channel == c).count();
    let mut pairs = vec![
        ("weights", list(&weights)),
        ("h0", num(h0)),
        ("joint_events", count(Channel::Joint).to_string()),
        ("x_only_events", count(Channel::XOnly).to_string()),
        ("y_only_events", count(Channel::YOnly).to_string()),
    ];
    match &constants {
        Ok(c) => {
            pairs.push(("kappa", num(c.kappa)));
            pairs.push(("d", num(c.rate)));
        }
        Err(e) => pairs.push(("certificate", format!("none ({e})"))),
    }

    if cfg.replications >= 2 {
        let times = section.times.clone().unwrap_or_else(|| cfg.stepped_times(1.0));
        let samples: Vec<Vec<f64>> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let log = simulate_coupled(&exp.model, &exp.x0, &y0, cfg.horizon, seed(exp, r))?;
                let tx = reconstruct_trajectory(k, &log.x, &times)?;
                let ty = reconstruct_trajectory(k, &log.y, &times)?;
                Ok(tx.states.iter().zip(&ty.states).map(|(a, b)| h_distance(k, a, b, &weights)).collect())
            })
            .collect::<Result<_, cascade_core::Error>>()?;
        let rows = summarize(&times, &samples);
        let mut csv = String::from("t,mean,stderr,bound\n");
        let mut violations = 0;
        for row in &rows {
            let bound = constants.as_ref().map_or(f64::NAN, |c| h0 * (-c.rate * row.t).exp());
            if row.mean - 3.0 * row.std_error > bound {
                violations += 1;
            }
            let _ = writeln!(csv, "{},{},{},{}", num(row.t), num(row.mean), num(row.std_error), num(bound));
        }
        part.bundle.add("contraction.csv", csv);
        pairs.push(("replications", cfg.replications.to_string()));
        if constants.is_ok() {
            pairs.push(("envelope_violations", violations.to_string()));
            part.passed = violations == 0;
        }
    }
    let text = report(&pairs);
    part.summary = text.lines().map(str::to_string).collect();
    part.bundle.add("coupling_report.txt", text);
    Ok(part)
}

fn signed(rng: &mut StreamRng, v: f64) -> f64 {
    if rng.uniform() < 0.5 {
        -v
    } else {
        v
    }
}

/// Test states: near the origin, across decades beyond `R`, in the
/// nonnegative orthant, and single-coordinate spikes.
fn drift_states(exp: &Experiment, spec: &LyapunovSpec, count: usize, decades: f64) -> Vec<CascadeState> {
    let k = &exp.model.kernel;
    let dim = k.dimension();
    let mut rng = StreamRng::new(Seed::new(exp.config.seed, STATE_STREAM));
    let base = spec.radius.max(1.0);
    (0..count)
        .map(|j| {
            let mut coords = vec![0.0; dim];
            match j % 4 {
                0 => {
                    for c in &mut coords {
                        let v = rng.uniform() * base / (dim as f64).sqrt();
                        *c = signed(&mut rng, v);
                    }
                }
                1 => {
                    let scale = base * 10f64.powf(rng.uniform() * decades);
                    for c in &mut coords {
                        let v = scale * rng.uniform();
                        *c = signed(&mut rng, v);
                    }
                }
                2 => {
                    let scale = base * 10f64.powf(rng.uniform() * decades);
                    for c in &mut coords {
                        *c = scale * rng.uniform();
                    }
                }
                _ => {
                    let idx = ((rng.uniform() * dim as f64) as usize).min(dim - 1);
                    let v = base * 10f64.powf(rng.uniform() * decades);
                    coords[idx] = signed(&mut rng, v);
                }
            }
            CascadeState::from_vec(k, coords).expect("dimension matches")
        })
        .collect()
}

fn status(s: &ConditionStatus) -> String {
    match s {
        ConditionStatus::Checked(i) => format!("{} ({} < {})", i.holds(), num(i.lhs), num(i.rhs)),
        ConditionStatus::NotApplicable => "not_applicable".to_string(),
        ConditionStatus::HoldsByBoundedness => "true (bounded rate)".to_string(),
    }
}

fn drift_check(exp: &Experiment) -> Result<Partial, CliError> {
    let cfg = &exp.config;
    let opts = cfg.drift.clone().unwrap_or_default();
    let k = &exp.model.kernel;
    let rate = &exp.model.rate;
    let heights = expectation(exp);
    let verdict = check_stability(k, rate, &heights)?;
    let mut pairs = vec![
        ("l1_norm", num(verdict.l1_norm)),
        ("subcritical", status(&verdict.subcritical)),
        ("drift_condition", status(&verdict.drift_condition)),
        ("height_moment", num(verdict.height_moment.value)),
        ("height_moment_stderr", num(verdict.height_moment.std_error)),
    ];
    let mut part = Partial::new();
    let spec = match drift_spec(exp, &heights) {
        Ok(s) => s,
        Err(CliError::Run(e)) => {
            pairs.push(("constants", format!("none ({e})")));
            part.passed = false;
            let text = report(&pairs);
            part.summary = text.lines().map(str::to_string).collect();
            part.bundle.add("drift_report.txt", text);
            return Ok(part);
        }
        Err(e) => return Err(e),
    };
    let states = drift_states(exp, &spec, opts.states, opts.max_decades);
    let checks: Vec<_> = states.par_iter().map(|x| verify_drift(x, k, rate, &heights, &spec)).collect();
    let mut csv = String::from("index,l2_norm,v,in_k,lv,lv_stderr,bound,pass\n");
    for (j, (x, c)) in states.iter().zip(&checks).enumerate() {
        let _ = writeln!(
            csv,
            "{j},{},{},{},{},{},{},{}",
            num(x.l2_norm()),
            num(lyapunov_v(k, x, &spec)),
            c.in_drift_set,
            num(c.generator.value),
            num(c.generator.std_error),
            num(c.bound),
            c.pass
        );
    }
    let passed = checks.iter().filter(|c| c.pass).count();
    let inside = checks.iter().filter(|c| c.in_drift_set).count();
    pairs.extend([
        (
            "branch",
            match spec.branch {
                DriftBranch::Bounded => "bounded",
                DriftBranch::Lipschitz => "lipschitz",
            }
            .to_string(),
        ),
        ("weights", list(&spec.weights)),
        ("lambda", num(spec.lambda)),
        ("beta", num(spec.beta)),
        ("radius", num(spec.radius)),
        ("q", num(spec.q)),
        ("states_in_k", inside.to_string()),
        ("passed", passed.to_string()),
        ("total", checks.len().to_string()),
    ]);
    part.passed = passed == checks.len();

    // E exp(eta tau_K) <= V(x0) with eta = lambda / 2, from x0
    if cfg.replications >= 2 && spec.lambda > 0.0 {
        let eta = 0.5 * spec.lambda;
        let runs: Vec<(f64, bool)> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| return_time(&exp.model, &exp.x0, &spec, cfg.horizon, seed(exp, r)))
            .collect::<Result<_, _>>()?;
        let values: Vec<Vec<f64>> = runs.iter().map(|(t, _)| vec![(eta * t).exp()]).collect();
        let row = summarize(&[0.0], &values)[0];
        let v0 = lyapunov_v(k, &exp.x0, &spec);
        let censored = runs.iter().filter(|r| r.1).count();
        let ok = row.mean <= v0 + 3.0 * row.std_error;
        pairs.extend([
            ("return_eta", num(eta)),
            ("return_mean_exp", num(row.mean)),
            ("return_stderr", num(row.std_error)),
            ("return_v_x0", num(v0)),
            ("return_censored", censored.to_string()),
            ("return_pass", ok.to_string()),
        ]);
        part.passed &= ok;
    }
    if !verdict.notes.is_empty() {
        pairs.push(("notes", verdict.notes.trim().to_string()));
    }
    part.bundle.add("drift.csv", csv);
    let text = report(&pairs);
    part.summary = text.lines().map(str::to_string).collect();
    part.bundle.add("drift_report.txt", text);
    Ok(part)
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn column_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// Heights from the model law, redrawn while the target component is zero.
fn probe_heights(exp: &Experiment, rng: &mut StreamRng, target: usize, m: usize) -> Result<Vec<Vec<f64>>, CliError> {
    (0..m)
        .map(|jump| {
            for _ in 0..100 {
                let c = exp.model.heights.sample(rng);
                if c[target] != 0.0 {
                    return Ok(c);
                }
            }
            Err(cascade_core::Error::ZeroHeight { jump, component: target }.into())
        })
        .collect()
}

fn random_probe(exp: &Experiment, rng: &mut StreamRng, target: usize, horizon: f64) -> Result<MinorizationProbe, CliError> {
    let k = &exp.model.kernel;
    let m = k.terms()[target].order as usize + 1;
    let mut ages: Vec<f64> = (0..m).map(|_| (0.05 + 0.9 * rng.uniform()) * horizon).collect();
    ages.sort_by(|a, b| b.total_cmp(a));
    for w in 1..ages.len() {
        if ages[w - 1] - ages[w] < 1e-3 * horizon {
            ages[w] = ages[w - 1] - 1e-3 * horizon;
        }
    }
    let heights = probe_heights(exp, rng, target, m)?;
    Ok(MinorizationProbe::new(k, exp.x0.clone(), heights, ages, horizon)?)
}

struct ProbeRow {
    determinant: f64,
    reference: f64,
    relative_error: f64,
    fd_error: f64,
    density: f64,
    floor: f64,
}

fn single_block_row(exp: &Experiment, probe: &MinorizationProbe) -> Result<(f64, f64, f64, f64), CliError> {
    let k = &exp.model.kernel;
    let jac = block_jacobian(k, probe, 0)?;
    let det = jac.determinant();
    let closed = vandermonde_determinant(k, probe, 0)?;
    let h = 1e-5 * probe.horizon;
    let mut fd_worst: f64 = 0.0;
    for j in 0..probe.ages.len() {
        let (mut up, mut down) = (probe.clone(), probe.clone());
        up.ages[j] += h;
        down.ages[j] -= h;
        let gu = gamma_map(k, &up)?;
        let gd = gamma_map(k, &down)?;
        let fd: Vec<f64> = gu.coords().iter().zip(gd.coords()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        fd_worst = fd_worst.max(column_error(&jac.column(j), &fd));
    }
    Ok((det, closed, rel_diff(det, closed), fd_worst))
}

fn multi_block_row(exp: &Experiment, probe: &MinorizationProbe, target: usize) -> Result<(f64, f64, f64, f64), CliError> {
    let k = &exp.model.kernel;
    let rep = minorization_probe_general(k, probe, target)?;
    let product = rep.flow_factor * rep.block_determinant;
    let head_dim: usize = (0..target).map(|l| k.block(l).len()).sum();
    let head = probe.x_star.coords()[..head_dim].to_vec();
    let m = probe.ages.len();
    let dim = head_dim + m;
    let mut jac = Matrix::zeros(dim);
    let h = 1e-5;
    for col in 0..dim {
        let (mut hu, mut hd) = (head.clone(), head.clone());
        let (mut au, mut ad) = (probe.ages.clone(), probe.ages.clone());
        if col < head_dim {
            hu[col] += h;
            hd[col] -= h;
        } else {
            au[col - head_dim] += h;
            ad[col - head_dim] -= h;
        }
        let up = block_map(k, probe, target, &hu, &au);
        let down = block_map(k, probe, target, &hd, &ad);
        for row in 0..dim {
            jac.set(row, col, (up[row] - down[row]) / (2.0 * h));
        }
    }
    Ok((rep.determinant, product, rep.relative_error, rel_diff(jac.determinant(), product)))
}

fn minorization_check(exp: &Experiment) -> Result<Partial, CliError> {
    let opts = exp.config.minorization.clone().unwrap_or_default();
    let k = &exp.model.kernel;
    let target = opts.target_block.unwrap_or(k.len() - 1);
    let mut rng = StreamRng::new(Seed::new(exp.config.seed, PROBE_STREAM));
    let probes: Vec<MinorizationProbe> = (0..opts.probes)
        .map(|_| random_probe(exp, &mut rng, target, opts.horizon))
        .collect::<Result<_, _>>()?;
    let rows: Vec<ProbeRow> = probes
        .par_iter()
        .enumerate()
        .map(|(j, probe)| {
            let (determinant, reference, relative_error, fd_error) = if k.len() == 1 {
                single_block_row(exp, probe)?
            } else {
                multi_block_row(exp, probe, target)?
            };
            let density = jump_time_density(k, &exp.model.rate, probe)?;
            let floor = density_floor(
                k,
                &exp.model.rate,
                probe,
                opts.neighbourhood,
                opts.density_samples,
                Seed::new(exp.config.seed, FLOOR_STREAM + j as u64),
            )?;
            Ok(ProbeRow {
                determinant,
                reference,
                relative_error,
                fd_error,
                density,
                floor,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let mut csv = String::from("probe,determinant,reference,relative_error,fd_relative_error,density,density_floor\n");
    for (j, r) in rows.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{j},{},{},{},{},{},{}",
            num(r.determinant),
            num(r.reference),
            num(r.relative_error),
            num(r.fd_error),
            num(r.density),
            num(r.floor)
        );
    }
    let worst = |f: fn(&ProbeRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let rel = worst(|r| r.relative_error);
    let fd = worst(|r| r.fd_error);
    let invertible = rows.iter().filter(|r| r.determinant != 0.0).count();
    let positive = rows.iter().filter(|r| r.floor > 0.0).count();
    let min_floor = rows.iter().map(|r| r.floor).fold(f64::INFINITY, f64::min);
    let min_abs_det = rows.iter().map(|r| r.determinant.abs()).fold(f64::INFINITY, f64::min);
    let mut part = Partial::new();
    part.passed = rel <= 1e-8 && fd <= 1e-6 && invertible == rows.len() && positive == rows.len();
    let reference = if k.len() == 1 {
        "vandermonde_closed_form"
    } else {
        "flow_factor_times_block_det"
    };
    let text = report(&[
        ("probes", rows.len().to_string()),
        ("target_block", (target + 1).to_string()),
        ("probe_horizon", num(opts.horizon)),
        ("reference", reference.to_string()),
        ("max_relative_error", num(rel)),
        ("max_fd_relative_error", num(fd)),
        ("min_abs_determinant", num(min_abs_det)),
        ("invertible", format!("{invertible}/{}", rows.len())),
        ("neighbourhood", num(opts.neighbourhood)),
        ("min_density_floor", num(min_floor)),
        ("positive_density", format!("{positive}/{}", rows.len())),
        ("passed", part.passed.to_string()),
    ]);
    part.summary = text.lines().map(str::to_string).collect();
    part.bundle.add("minorization.csv", csv);
    part.bundle.add("minorization_report.txt", text);
    Ok(part)
}

/// Cartesian product in row-major order (last parameter varies fastest).
fn grid_points(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in sizes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..n).map(move |j| {
                    let mut p = prefix.clone();
                    p.push(j);
                    p
                })
            })
            .collect();
    }
    out
}

fn sweep(exp: &Experiment, overrides: &Overrides) -> Result<Partial, CliError> {
    let section = exp
        .config
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError::new("sweep", "section required by `sweep`"))?;
    if section.command == Command::Sweep {
        return Err(ConfigError::new("sweep.command", "cannot be `sweep`").into());
    }
    let mut base = exp.config.clone();
    base.sweep = None;
    base.output.dir = None;
    let base_json = serde_json::to_value(&base).expect("config serializes");
    let sizes: Vec<usize> = section.parameters.iter().map(|p| p.values.len()).collect();
    let mut part = Partial::new();
    let mut index = String::from("point");
    for p in &section.parameters {
        index.push(',');
        index.push_str(&p.path);
    }
    index.push_str(",passed\n");
    let inner = Overrides {
        seed: None,
        out: None,
        reps: overrides.reps,
    };
    let points = grid_points(&sizes);
    let mut failed = 0;
    for (idx, choice) in points.iter().enumerate() {
        let mut value = base_json.clone();
        for (j, (p, &pick)) in section.parameters.iter().zip(choice).enumerate() {
            set_path(&mut value, &p.path, p.values[pick].clone())
                .map_err(|e| ConfigError::new(format!("sweep.parameters[{j}].path"), e))?;
        }
        let text = serde_json::to_string_pretty(&value).expect("value serializes");
        let point: ExperimentConfig = crate::config::parse_config(&text)
            .map_err(|e| ConfigError::new(format!("sweep point {idx}: {}", e.path), e.message))?;
        let name = format!("point_{idx:03}");
        let outcome = execute(section.command, &point, &inner)?;
        failed += usize::from(!outcome.passed);
        let _ = write!(index, "{idx}");
        for (p, &pick) in section.parameters.iter().zip(choice) {
            let _ = write!(index, ",{}", p.values[pick]);
        }
        let _ = writeln!(index, ",{}", outcome.passed);
        let mut files = outcome.bundle;
        files.add("point.json", crate::config::to_json(&point) + "\n");
        part.bundle.nest(&name, files);
        part.say(format!("{name} passed={}", outcome.passed));
    }
    part.passed = failed == 0;
    part.say(format!("points={} failed={failed}", points.len()));
    part.bundle.add("points.csv", index);
    Ok(part)
}
