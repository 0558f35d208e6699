//! Standard normal CDF, log-CDF and quantile, accurate far into the tails.

use libm::{erf, erfc};
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `Φ(x)`.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// `log Φ(x)`, finite for every finite `x`.
pub fn ln_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        (-cdf(-x)).ln_1p()
    } else if x > -37.0 {
        cdf(x).ln()
    } else {
        // Mills-ratio series; relative error below 1e-12 for x <= -37
        let r = 1.0 / (x * x);
        let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
        -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// `Φ⁻¹(p)` for `p ∈ (0, 1)`.
#[inline]
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else if p < 0.5 {
        -SQRT_2 * erfc_inv(2.0 * p)
    } else {
        SQRT_2 * erfc_inv(2.0 * (1.0 - p))
    }
}

/// `log(e^a + e^b)`.
#[inline]
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(e^a - e^b)` for `a >= b`.
#[inline]
pub fn ln_sub_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// `log P(lo <= Z <= hi)` for `Z ~ N(0, 1)` and `lo < hi` (either may be infinite).
pub fn ln_interval_mass(lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return f64::NEG_INFINITY;
    }
    if lo < 0.0 && hi > 0.0 {
        // both erf terms positive, no cancellation for narrow intervals
        let m = 0.5 * (erf(hi * FRAC_1_SQRT_2) + erf(-lo * FRAC_1_SQRT_2));
        return m.ln();
    }
    if hi <= 0.0 {
        ln_sub_exp(ln_cdf(hi), ln_cdf(lo))
    } else {
        ln_sub_exp(ln_cdf(-lo), ln_cdf(-hi))
    }
}

/// Log masses `(inside, outside)` of `[-a, a]` under `N(mean, 1)`.
pub fn ln_well_masses(mean: f64, a: f64) -> (f64, f64) {
    let m = mean.abs();
    let inside = ln_interval_mass(-a - m, a - m);
    let outside = ln_add_exp(ln_cdf(-a - m), ln_cdf(m - a));
    (inside, outside)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        // erf(1/sqrt 2)
        assert!((cdf(1.0) - cdf(-1.0) - 0.682_689_492_137_085_9).abs() < 1e-15);
        assert!((cdf(-5.0) - 2.866_515_718_791_939e-7).abs() < 1e-20);
    }

    #[test]
    fn ln_cdf_is_continuous_at_switch() {
        let below = ln_cdf(-37.0 - 1e-9);
        let above = ln_cdf(-37.0 + 1e-9);
        assert!((below - above).abs() < 1e-6, "{below} vs {above}");
        // -x^2/2 dominates deep in the tail
        let x = -200.0;
        assert!((ln_cdf(x) + 20_000.0 + 200f64.ln() + LN_SQRT_2PI).abs() < 1e-4);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-300, 1e-200, 1e-30, 1e-12, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.99, 1.0 - 1e-9] {
            let x = quantile(p);
            let back = cdf(x);
            let rel = ((back - p) / p).abs();
            assert!(rel < 1e-9, "p={p} x={x} back={back}");
        }
    }

    #[test]
    fn well_masses_sum_to_one() {
        for &m in &[0.0, 0.3, -1.7, 4.0, 12.0] {
            for &a in &[1e-6, 0.5, 1.0, 3.0] {
                let (i, o) = ln_well_masses(m, a);
                let total = i.exp() + o.exp();
                assert!((total - 1.0).abs() < 1e-13, "m={m} a={a} total={total}");
            }
        }
        // narrow well keeps relative accuracy: mass ~ 2a * pdf(0)
        let (i, _) = ln_well_masses(0.0, 1e-9);
        assert!((i.exp() / (2e-9 * pdf(0.0)) - 1.0).abs() < 1e-9);
        // far-away mean: inside mass underflows but its log is finite
        let (i, o) = ln_well_masses(60.0, 1.0);
        assert!(i.is_finite() && i < -1500.0);
        assert!(o.abs() < 1e-300);
    }
}
