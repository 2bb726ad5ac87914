//! Real roots of univariate polynomials by derivative-bracketed bisection.
//!
//! Coefficients are stored in ascending order (`c[0] + c[1] t + ...`).
//! Between two consecutive real roots of `p'` the polynomial `p` is monotone,
//! so each such interval holds at most one root and a sign change brackets it.

use alloc::vec;
use alloc::vec::Vec;

const MAX_BISECTIONS: usize = 2_000;

pub fn eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

pub fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

fn trimmed(coeffs: &[f64]) -> &[f64] {
    let mut len = coeffs.len();
    while len > 0 && coeffs[len - 1] == 0.0 {
        len -= 1;
    }
    &coeffs[..len]
}

/// Cauchy bound: every root satisfies `|t| <= 1 + max |c_k / c_deg|`.
pub fn root_bound(coeffs: &[f64]) -> f64 {
    let c = trimmed(coeffs);
    if c.len() < 2 {
        return 0.0;
    }
    let lead = c[c.len() - 1].abs();
    1.0 + c[..c.len() - 1]
        .iter()
        .map(|x| x.abs() / lead)
        .fold(0.0, f64::max)
}

/// All real roots in `[lo, hi]`, sorted. `None` signals a numerical failure
/// (non-finite values met during isolation).
pub fn real_roots_in(coeffs: &[f64], lo: f64, hi: f64) -> Option<Vec<f64>> {
    let c = trimmed(coeffs);
    match c.len() {
        0 | 1 => return Some(Vec::new()),
        2 => {
            let r = -c[0] / c[1];
            if !r.is_finite() {
                return None;
            }
            return Some(if (lo..=hi).contains(&r) { vec![r] } else { Vec::new() });
        }
        _ => {}
    }
    let critical = real_roots_in(&derivative(c), lo, hi)?;
    let mut knots = Vec::with_capacity(critical.len() + 2);
    knots.push(lo);
    knots.extend(critical.into_iter().filter(|&t| t > lo && t < hi));
    knots.push(hi);

    let mut roots: Vec<f64> = Vec::new();
    let push = |r: f64, roots: &mut Vec<f64>| {
        if roots.last().map_or(true, |&last| r > last) {
            roots.push(r);
        }
    };
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (eval(c, a), eval(c, b));
        if fa.is_nan() || fb.is_nan() {
            return None;
        }
        if fa == 0.0 {
            push(a, &mut roots);
            continue;
        }
        if fa.signum() != fb.signum() && fb != 0.0 {
            push(bisect(c, a, b, fa)?, &mut roots);
        }
    }
    if eval(c, hi) == 0.0 {
        push(hi, &mut roots);
    }
    Some(roots)
}

fn bisect(c: &[f64], mut a: f64, mut b: f64, mut fa: f64) -> Option<f64> {
    for _ in 0..MAX_BISECTIONS {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            return Some(m);
        }
        let fm = eval(c, m);
        if fm.is_nan() {
            return None;
        }
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_with_three_roots() {
        // (t-1)(t-2)(t-3) = t^3 - 6t^2 + 11t - 6
        let r = real_roots_in(&[-6.0, 11.0, -6.0, 1.0], 0.0, 10.0).unwrap();
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn double_root_is_found_at_critical_point() {
        // (t-1)^2
        let r = real_roots_in(&[1.0, -2.0, 1.0], 0.0, 5.0).unwrap();
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn no_roots_and_degenerate() {
        assert!(real_roots_in(&[1.0, 0.0, 1.0], -10.0, 10.0).unwrap().is_empty());
        assert!(real_roots_in(&[3.0], 0.0, 1.0).unwrap().is_empty());
        assert!(real_roots_in(&[0.0, 0.0], 0.0, 1.0).unwrap().is_empty());
    }

    #[test]
    fn cauchy_bound_contains_roots() {
        let c = [-6.0, 11.0, -6.0, 1.0];
        assert!(root_bound(&c) >= 3.0);
    }
}
