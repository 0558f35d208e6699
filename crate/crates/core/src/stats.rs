//! Error analysis for correlated Monte Carlo series and small regression
//! helpers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Mean with the naive i.i.d. standard error.
pub fn mean_iid(xs: &[f64]) -> MeanEstimate {
    MeanEstimate {
        mean: mean(xs),
        std_error: (variance(xs) / xs.len() as f64).sqrt(),
    }
}

/// Batch-means estimate over `blocks` contiguous blocks; trailing samples that
/// do not fill a block are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMeans {
    pub mean: f64,
    pub std_error: f64,
    pub block_means: Vec<f64>,
    pub block_len: usize,
}

pub fn batch_means(series: &[f64], blocks: usize) -> BatchMeans {
    assert!(blocks >= 2, "need at least two blocks");
    let block_len = (series.len() / blocks).max(1);
    let used = blocks.min(series.len());
    let block_means: Vec<f64> = (0..used)
        .map(|b| mean(&series[b * block_len..(b + 1) * block_len]))
        .collect();
    let est = mean_iid(&block_means);
    BatchMeans {
        mean: est.mean,
        std_error: if used >= 2 { est.std_error } else { f64::INFINITY },
        block_means,
        block_len,
    }
}

/// Integrated autocorrelation time `τ = 1/2 + Σ ρ(t)` with the self-consistent
/// window `W >= c τ(W)`, `c = 5`.
pub fn integrated_autocorr_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 0.5;
    }
    let m = mean(series);
    let c0 = series.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for t in 1..n / 2 {
        let ct = (0..n - t)
            .map(|i| (series[i] - m) * (series[i + t] - m))
            .sum::<f64>()
            / n as f64;
        tau += ct / c0;
        if (t as f64) >= 5.0 * tau {
            break;
        }
    }
    tau.max(0.5)
}

/// Compares the mean of the first `first` fraction of a series with the mean
/// of the last `last` fraction; returns the z-score using batch-means errors
/// inside each window.
pub fn geweke_z(series: &[f64], first: f64, last: f64) -> f64 {
    let n = series.len();
    let na = ((n as f64) * first) as usize;
    let nb = ((n as f64) * last) as usize;
    if na < 16 || nb < 16 {
        return 0.0;
    }
    let a = batch_means(&series[..na], 8);
    let b = batch_means(&series[n - nb..], 8);
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    if se == 0.0 {
        if a.mean == b.mean {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a.mean - b.mean) / se
    }
}

/// Delete-one-group jackknife for a statistic of grouped data. Returns the
/// full-sample statistic and its jackknife standard error.
pub fn jackknife<F>(groups: usize, full: f64, leave_out: F) -> MeanEstimate
where
    F: Fn(usize) -> f64,
{
    let thetas: Vec<f64> = (0..groups).map(leave_out).collect();
    let m = mean(&thetas);
    let g = groups as f64;
    let var = (g - 1.0) / g * thetas.iter().map(|t| (t - m) * (t - m)).sum::<f64>();
    MeanEstimate {
        mean: full,
        std_error: var.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r_squared: f64,
}

/// Weighted least squares `y = slope·x + intercept`; `weights` default to 1.
pub fn linear_fit(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], |w| w.to_vec());
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = (0..n)
        .map(|i| {
            let r = y[i] - slope * x[i] - intercept;
            w[i] * r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let slope_se = if n > 2 {
        (ss_res / (n as f64 - 2.0) / sxx * n as f64 / sw).sqrt()
    } else {
        0.0
    };
    Some(LinearFit {
        slope,
        intercept,
        slope_se,
        r_squared,
    })
}

/// Least squares through the origin, `y = slope·x`. `r_squared` is the
/// centered coefficient of determination, so a line through the origin is
/// not credited for explaining the mean of `y`.
pub fn fit_through_origin(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Option<LinearFit> {
    let n = x.len();
    if n < 1 || y.len() != n {
        return None;
    }
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], |w| w.to_vec());
    let sxx: f64 = (0..n).map(|i| w[i] * x[i] * x[i]).sum();
    let sxy: f64 = (0..n).map(|i| w[i] * x[i] * y[i]).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let sw: f64 = w.iter().sum();
    let my = (0..n).map(|i| w[i] * y[i]).sum::<f64>() / sw;
    let ss_res: f64 = (0..n).map(|i| w[i] * (y[i] - slope * x[i]).powi(2)).sum();
    let ss_tot: f64 = (0..n).map(|i| w[i] * (y[i] - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let slope_se = if n > 1 {
        (ss_res / (n as f64 - 1.0) / sxx * n as f64 / sw).sqrt()
    } else {
        0.0
    };
    Some(LinearFit {
        slope,
        intercept: 0.0,
        slope_se,
        r_squared,
    })
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and a
/// continuous CDF. Sorts `samples` in place.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Welford accumulator for a scalar.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Running {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

/// Standard error of the unbiased sample variance of `xs`, via the fourth
/// central moment.
pub fn variance_std_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - (n - 3.0) / (n - 1.0) * m2 * m2) / n).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, Philox4x32};

    fn ar1(n: usize, rho: f64, seed: u64) -> Vec<f64> {
        let g = Philox4x32::new(seed, Domain::Dynamics);
        let mut x = 0.0;
        (0..n)
            .map(|i| {
                let z = crate::normal::quantile(g.stream(i as u64, 0).uniform());
                x = rho * x + (1.0 - rho * rho).sqrt() * z;
                x
            })
            .collect()
    }

    #[test]
    fn autocorr_time_of_ar1() {
        // τ = (1 + ρ) / (2 (1 - ρ)) = 4.5 for ρ = 0.8
        let xs = ar1(200_000, 0.8, 5);
        let tau = integrated_autocorr_time(&xs);
        assert!((tau - 4.5).abs() < 0.4, "tau {tau}");
    }

    #[test]
    fn batch_means_error_accounts_for_correlation() {
        // Var of mean ≈ 2τ/n
        let xs = ar1(320_000, 0.8, 9);
        let bm = batch_means(&xs, 32);
        let expected = (9.0 / xs.len() as f64).sqrt();
        assert!(bm.std_error > 0.6 * expected && bm.std_error < 1.5 * expected);
        assert_eq!(bm.block_means.len(), 32);
    }

    #[test]
    fn fits_recover_lines() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let f = linear_fit(&x, &y, None).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
        let f = fit_through_origin(&x, &[2.0, 4.0, 6.0, 8.0], None).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && f.r_squared == 1.0);
        // a constant is badly explained by a line through the origin
        let f = fit_through_origin(&x, &[4.0, 5.0, 5.0, 6.0], None).unwrap();
        assert!(f.r_squared < 0.0);
    }

    #[test]
    fn ks_of_uniforms() {
        let g = Philox4x32::new(2, Domain::Dynamics);
        let mut u: Vec<f64> = (0..100_000).map(|i| g.stream(i, 0).uniform()).collect();
        let d = ks_distance(&mut u, |x| x.clamp(0.0, 1.0));
        assert!(d < 0.006, "{d}");
        let mut shifted: Vec<f64> = u.iter().map(|x| x * 0.9).collect();
        assert!(ks_distance(&mut shifted, |x| x.clamp(0.0, 1.0)) > 0.09);
    }

    #[test]
    fn jackknife_of_mean_matches_iid_error() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let total: f64 = xs.iter().sum();
        let jk = jackknife(100, mean(&xs), |g| (total - xs[g]) / 99.0);
        let iid = mean_iid(&xs);
        assert!((jk.std_error - iid.std_error).abs() < 1e-12);
    }

    #[test]
    fn geweke_flags_drift() {
        let stationary = ar1(50_000, 0.5, 1);
        assert!(geweke_z(&stationary, 0.1, 0.5).abs() < 5.0);
        let drifting: Vec<f64> = (0..50_000).map(|i| i as f64 / 5000.0 + stationary[i]).collect();
        assert!(geweke_z(&drifting, 0.1, 0.5).abs() > 10.0);
    }

    #[test]
    fn running_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.0];
        let mut r = Running::default();
        xs.iter().for_each(|&x| r.push(x));
        assert!((r.mean - mean(&xs)).abs() < 1e-14);
        assert!((r.variance() - variance(&xs)).abs() < 1e-13);
    }
}
