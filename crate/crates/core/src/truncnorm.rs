//! Sampling `N(mean, 1)` restricted to an interval or to the complement of a
//! symmetric well.
//!
//! Inverse-CDF sampling is used whenever the target region carries mass at
//! least [`INVERSE_CDF_MIN_MASS`]; below that threshold the region sits far in
//! a tail and an exponential proposal with rejection is used instead.

use crate::normal;
use crate::rng::Stream;

pub const INVERSE_CDF_MIN_MASS: f64 = 1e-12;

/// Draws from `N(mean, 1)` conditioned on `[lo, hi]`, `lo < hi`.
pub fn sample_interval(mean: f64, lo: f64, hi: f64, rng: &mut Stream) -> f64 {
    mean + standard_interval(lo - mean, hi - mean, rng)
}

/// Draws from `N(mean, 1)` conditioned on `|x| > a`.
pub fn sample_outside_well(mean: f64, a: f64, rng: &mut Stream) -> f64 {
    // standardized pieces: (-inf, -a - mean] and [a - mean, inf)
    let ln_lower = normal::ln_cdf(-a - mean);
    let ln_upper = normal::ln_cdf(mean - a);
    let p_upper = 1.0 / (1.0 + (ln_lower - ln_upper).exp());
    let z = if rng.uniform() < p_upper {
        standard_interval(a - mean, f64::INFINITY, rng)
    } else {
        standard_interval(f64::NEG_INFINITY, -a - mean, rng)
    };
    mean + z
}

/// One draw from `N(mean, 1)` tilted by `exp(w 1{|x| <= a})`: the well is
/// chosen with probability `e^w p / (e^w p + 1 - p)`, `p` the well mass, then
/// the height is drawn inside the chosen region.
///
/// In the common regime both tail masses are computed once and reused by the
/// inverse-CDF draw. When the well mass is small or a tail underflows, the
/// log-space routines take over.
pub fn sample_tilted_well(mean: f64, a: f64, w: f64, rng: &mut Stream) -> f64 {
    let lower = normal::cdf(-a - mean);
    let upper = normal::cdf(mean - a);
    let inside = 1.0 - lower - upper;
    let outside = lower + upper;
    if inside < FUSED_MIN_WELL_MASS || outside == 0.0 || !w.is_finite() {
        let q = pin_probability_slow(mean, a, w);
        return if rng.uniform() < q {
            sample_interval(mean, -a, a, rng)
        } else {
            sample_outside_well(mean, a, rng)
        };
    }
    let q = if w >= 0.0 {
        inside / (inside + (-w).exp() * outside)
    } else {
        let e = w.exp() * inside;
        e / (e + outside)
    };
    if rng.uniform() < q {
        let z = normal::quantile(lower + rng.uniform() * inside);
        (mean + z).clamp(-a, a)
    } else {
        let u = rng.uniform() * outside;
        if u < upper {
            // upper tail: P(Z > z) = upper - u
            let z = -normal::quantile(upper - u);
            (mean + z).max(a)
        } else {
            let z = normal::quantile(u - upper);
            (mean + z).min(-a)
        }
    }
}

/// Below this well mass the fused path loses relative precision in the well
/// probability and defers to the log-space path.
pub const FUSED_MIN_WELL_MASS: f64 = 1e-3;

/// Posterior well probability in log space; exact in every regime.
pub fn pin_probability_slow(mean: f64, a: f64, w: f64) -> f64 {
    if w == f64::INFINITY {
        return 1.0;
    }
    if w == f64::NEG_INFINITY {
        return 0.0;
    }
    let (ln_in, ln_out) = normal::ln_well_masses(mean, a);
    let logit = w + ln_in - ln_out;
    if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    }
}

/// Standard normal conditioned on `[lo, hi]`.
pub fn standard_interval(lo: f64, hi: f64, rng: &mut Stream) -> f64 {
    debug_assert!(lo < hi, "empty interval [{lo}, {hi}]");
    if hi <= 0.0 {
        return -upper_side(-hi, -lo, rng);
    }
    if lo >= 0.0 {
        return upper_side(lo, hi, rng);
    }
    let ln_mass = normal::ln_interval_mass(lo, hi);
    if ln_mass.exp() >= INVERSE_CDF_MIN_MASS {
        let (plo, phi) = (normal::cdf(lo), normal::cdf(hi));
        let x = normal::quantile(plo + rng.uniform() * (phi - plo));
        return x.clamp(lo, hi);
    }
    // a sliver around the origin: the density is nearly flat there
    loop {
        let x = lo + rng.uniform() * (hi - lo);
        if rng.uniform() <= (-0.5 * x * x).exp() {
            return x;
        }
    }
}

/// `[lo, hi]` with `0 <= lo < hi <= inf`.
fn upper_side(lo: f64, hi: f64, rng: &mut Stream) -> f64 {
    let ln_mass = normal::ln_interval_mass(lo, hi);
    if ln_mass.exp() >= INVERSE_CDF_MIN_MASS {
        // work with upper-tail probabilities to keep relative precision
        let (q_lo, q_hi) = (normal::cdf(-lo), normal::cdf(-hi));
        let q = q_hi + rng.uniform() * (q_lo - q_hi);
        return (-normal::quantile(q)).clamp(lo, hi);
    }
    tail_rejection(lo, hi, rng)
}

/// Exponential proposal truncated to `[lo, hi]`, rate chosen for the
/// one-sided tail at `lo`.
fn tail_rejection(lo: f64, hi: f64, rng: &mut Stream) -> f64 {
    let rate = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    let width = hi - lo;
    let span = if width.is_finite() {
        -(-rate * width).exp_m1()
    } else {
        1.0
    };
    loop {
        let z = lo - (-rng.uniform() * span).ln_1p() / rate;
        if z > hi {
            continue;
        }
        let d = z - rate;
        if rng.uniform() <= (-0.5 * d * d).exp() {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, Philox4x32};

    fn draws(n: u64, mut f: impl FnMut(&mut Stream) -> f64) -> Vec<f64> {
        let g = Philox4x32::new(11, Domain::Dynamics);
        (0..n).map(|i| f(&mut g.stream(i, 0))).collect()
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn stays_inside_interval() {
        for &(lo, hi) in &[(-1.0, 1.0), (2.0, 3.0), (-9.0, -8.5), (40.0, 41.0), (7.5, f64::INFINITY)] {
            for x in draws(2000, |s| standard_interval(lo, hi, s)) {
                assert!(x >= lo && x <= hi, "{x} not in [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn one_sided_tail_mean_matches_mills_ratio() {
        // E[Z | Z > c] = pdf(c) / (1 - cdf(c)); c = 8 forces the rejection path
        let c = 8.0;
        let expected = normal::pdf(c) / normal::cdf(-c);
        let xs = draws(100_000, |s| standard_interval(c, f64::INFINITY, s));
        let (m, v) = mean_var(&xs);
        let se = (v / xs.len() as f64).sqrt();
        assert!((m - expected).abs() < 5.0 * se, "{m} vs {expected}");
    }

    #[test]
    fn inverse_cdf_interval_mean() {
        // E[Z | a < Z < b] = (pdf(a) - pdf(b)) / (cdf(b) - cdf(a))
        let (a, b) = (-0.5, 1.5);
        let expected = (normal::pdf(a) - normal::pdf(b)) / (normal::cdf(b) - normal::cdf(a));
        let xs = draws(100_000, |s| standard_interval(a, b, s));
        let (m, v) = mean_var(&xs);
        assert!((m - expected).abs() < 5.0 * (v / xs.len() as f64).sqrt());
    }

    #[test]
    fn outside_well_is_symmetric_at_zero_mean() {
        let xs = draws(100_000, |s| sample_outside_well(0.0, 1.0, s));
        assert!(xs.iter().all(|x| x.abs() > 1.0));
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 5.0 * (v / xs.len() as f64).sqrt());
    }

    #[test]
    fn outside_well_far_mean_is_plain_gaussian() {
        let xs = draws(50_000, |s| sample_outside_well(30.0, 1.0, s));
        let (m, v) = mean_var(&xs);
        assert!((m - 30.0).abs() < 5.0 * (1.0 / xs.len() as f64).sqrt());
        assert!((v - 1.0).abs() < 0.05);
    }

    fn tilted_cdf(x: f64, mean: f64, a: f64, w: f64) -> f64 {
        let phi = |t: f64| normal::cdf(t - mean);
        let inside = phi(a) - phi(-a);
        let z = w.exp() * inside + (1.0 - inside);
        let mass = if x < -a {
            phi(x)
        } else if x <= a {
            phi(-a) + w.exp() * (phi(x) - phi(-a))
        } else {
            phi(-a) + w.exp() * inside + (phi(x) - phi(a))
        };
        mass / z
    }

    #[test]
    fn tilted_well_matches_exact_law() {
        for &(mean, a, w) in &[
            (0.0, 1.0, 0.5),
            (0.7, 1.0, -1.2),
            (-2.5, 0.5, 2.0),
            (6.0, 1.0, 3.0),
            (0.2, 3.5, -4.0),
        ] {
            let mut xs = draws(100_000, |s| sample_tilted_well(mean, a, w, s));
            let d = crate::stats::ks_distance(&mut xs, |x| tilted_cdf(x, mean, a, w));
            // 99.9% KS quantile at n = 1e5 is about 0.0062
            assert!(d < 0.0062, "mean={mean} a={a} w={w}: KS {d}");
        }
    }

    #[test]
    fn fused_well_frequency_matches_log_space_probability() {
        for &(mean, a, w) in &[(0.0, 1.0, 0.5), (1.5, 1.0, -0.3), (-0.4, 2.0, 1.0)] {
            let xs = draws(200_000, |s| sample_tilted_well(mean, a, w, s));
            let freq = xs.iter().filter(|x| x.abs() <= a).count() as f64 / xs.len() as f64;
            let q = pin_probability_slow(mean, a, w);
            let se = (q * (1.0 - q) / xs.len() as f64).sqrt();
            assert!((freq - q).abs() < 4.0 * se, "{freq} vs {q}");
        }
    }

    #[test]
    fn extreme_rewards_and_means() {
        for x in draws(1000, |s| sample_tilted_well(0.0, 1.0, 700.0, s)) {
            assert!(x.abs() <= 1.0);
        }
        for x in draws(1000, |s| sample_tilted_well(0.0, 1.0, f64::NEG_INFINITY, s)) {
            assert!(x.abs() > 1.0);
        }
        for x in draws(1000, |s| sample_tilted_well(45.0, 1.0, 5.0, s)) {
            assert!(x.is_finite() && x > 1.0);
        }
        for x in draws(1000, |s| sample_tilted_well(0.0, 40.0, -2.0, s)) {
            assert!(x.abs() <= 40.0);
        }
    }
}
