#![allow(dead_code)]

use cascade_core::cascade::CascadeState;
use cascade_core::stability::MinorizationProbe;
use cascade_core::{
    CascadeModel, ErlangSumKernel, ErlangTerm, HeightExpectation, JumpHeightLaw, MonteCarlo, RateFunction,
    ScalarLaw, Seed, StreamRng,
};

pub fn uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

pub fn pick(rng: &mut StreamRng, n: usize) -> usize {
    ((rng.uniform() * n as f64) as usize).min(n - 1)
}

pub fn random_kernel(rng: &mut StreamRng, max_terms: usize, max_order: u32) -> ErlangSumKernel {
    let count = 1 + pick(rng, max_terms);
    let terms = (0..count)
        .map(|_| {
            let sign = if rng.uniform() < 0.25 { -1.0 } else { 1.0 };
            ErlangTerm::new(
                sign * uniform(rng, 0.2, 1.5),
                uniform(rng, 0.5, 2.0),
                pick(rng, max_order as usize + 1) as u32,
            )
        })
        .collect();
    ErlangSumKernel::new(terms).unwrap()
}

/// State with every coordinate nonzero, magnitudes spread over several scales.
pub fn random_state(rng: &mut StreamRng, kernel: &ErlangSumKernel, scale: f64) -> CascadeState {
    let coords = (0..kernel.dimension())
        .map(|_| {
            let mag = scale * libm::pow(10.0, uniform(rng, -2.0, 1.0));
            if rng.uniform() < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    CascadeState::from_vec(kernel, coords).unwrap()
}

pub fn nonnegative_state(rng: &mut StreamRng, kernel: &ErlangSumKernel, scale: f64) -> CascadeState {
    let coords = (0..kernel.dimension()).map(|_| uniform(rng, 0.0, scale)).collect();
    CascadeState::from_vec(kernel, coords).unwrap()
}

pub fn random_heights(rng: &mut StreamRng, kernel: &ErlangSumKernel) -> JumpHeightLaw {
    let weights: Vec<f64> = kernel.terms().iter().map(|t| t.weight).collect();
    match pick(rng, 3) {
        0 => JumpHeightLaw::Constant(weights),
        1 => JumpHeightLaw::Independent(
            weights
                .iter()
                .map(|&w| ScalarLaw::Normal {
                    mean: w,
                    variance: 0.25 * w * w,
                })
                .collect(),
        ),
        _ => JumpHeightLaw::Independent(
            weights
                .iter()
                .map(|&w| ScalarLaw::Uniform {
                    low: (0.5 * w).min(1.5 * w),
                    high: (0.5 * w).max(1.5 * w),
                })
                .collect(),
        ),
    }
}

/// A Lipschitz constant that keeps `Lip * E_G[sum alpha^{-n_i}|c_i|]` at
/// `fraction * alpha`.
pub fn stable_slope(kernel: &ErlangSumKernel, heights: &JumpHeightLaw, fraction: f64) -> f64 {
    let e = HeightExpectation::new(heights, MonteCarlo { samples: 4000, seed: 1 });
    let alpha = kernel.min_decay();
    let moment = e
        .mean(|c| {
            kernel
                .terms()
                .iter()
                .zip(c)
                .map(|(t, ci)| ci.abs() / libm::pow(alpha, f64::from(t.order)))
                .sum()
        })
        .value;
    fraction * alpha / moment.max(1e-12)
}

/// Random model whose rate satisfies the drift moment condition (or is bounded).
pub fn random_stable_model(rng: &mut StreamRng) -> CascadeModel {
    let kernel = random_kernel(rng, 3, 3);
    let heights = random_heights(rng, &kernel);
    let slope = stable_slope(&kernel, &heights, uniform(rng, 0.2, 0.8));
    let rate = match pick(rng, 6) {
        0 => RateFunction::linear_positive_part(uniform(rng, 0.2, 2.0), slope).unwrap(),
        1 => RateFunction::scaled_linear(1.0 / slope).unwrap(),
        2 => {
            let steep = uniform(rng, 0.2, 2.0);
            RateFunction::sigmoid(uniform(rng, 0.1, 1.0), 4.0 * slope / steep, steep, uniform(rng, -2.0, 2.0))
                .unwrap()
        }
        3 => {
            let scale = uniform(rng, 1.0, 5.0);
            RateFunction::capped_exponential(0.5, scale, 0.5 + slope * scale).unwrap()
        }
        4 => RateFunction::capped_power(0.5, uniform(rng, 1.0, 3.0), uniform(rng, 1.0, 2.0), uniform(rng, 3.0, 8.0))
            .unwrap(),
        _ => RateFunction::constant(uniform(rng, 0.5, 3.0)).unwrap(),
    };
    CascadeModel::new(kernel, rate, heights).unwrap()
}

pub fn rng(master: u64) -> StreamRng {
    StreamRng::new(Seed::new(master, 0))
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Probe with `m` jumps: ages strictly decreasing in `(0, T)`, heights
/// bounded away from zero.
pub fn random_probe(rng: &mut StreamRng, kernel: &ErlangSumKernel, m: usize, horizon: f64) -> MinorizationProbe {
    let mut ages: Vec<f64> = (0..m).map(|_| uniform(rng, 0.05, 0.95) * horizon).collect();
    ages.sort_by(|a, b| b.total_cmp(a));
    for w in 1..ages.len() {
        if ages[w - 1] - ages[w] < 1e-3 * horizon {
            ages[w] = ages[w - 1] - 1e-3 * horizon;
        }
    }
    let heights = (0..m)
        .map(|_| {
            (0..kernel.len())
                .map(|_| {
                    let v = uniform(rng, 0.3, 2.0);
                    if rng.uniform() < 0.3 {
                        -v
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let x = random_state(rng, kernel, 0.5);
    MinorizationProbe::new(kernel, x, heights, ages, horizon).unwrap()
}

/// Kolmogorov distribution tail `P(sqrt(n) D > x)`.
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = libm::exp(-2.0 * kf * kf * x * x);
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS statistic against `Exp(rate)`.
pub fn ks_exponential(samples: &mut [f64], rate: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let cdf = 1.0 - libm::exp(-rate * x);
        d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
    }
    d
}
