//! Exact references for small boxes: the free-field precision and covariance,
//! an exact free-field sampler, Gaussian rectangle probabilities and the
//! subset expansion of the partition-function ratio.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{Diagnostics, FreeEnergyEstimate, Method};
use crate::lattice::{Lattice, BOUNDARY};
use crate::normal;
use crate::quadrature;
use crate::rng::{derive_seed, Domain, Philox4x32};

/// Largest box handled by dense factorizations.
pub const DENSE_MAX_VOLUME: usize = 4096;
/// Largest box (and subset) handled by the expansion.
pub const EXPANSION_MAX_VOLUME: usize = 12;
/// Absolute error target for rectangle probabilities.
pub const RECT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("box volume {volume} exceeds the limit {limit} for {what}")]
    TooLarge {
        what: &'static str,
        volume: usize,
        limit: usize,
    },
    #[error("conjugate gradient did not converge: residual {residual:e} after {iterations} iterations")]
    CgNonConvergence { residual: f64, iterations: usize },
    #[error("covariance of the subset is not positive definite")]
    IllConditioned,
    #[error("expansion sum {sum:e} is not positive (tolerance breach)")]
    NonPositiveSum { sum: f64 },
    #[error("reward array has {got} entries, box has {expected}")]
    VolumeMismatch { expected: usize, got: usize },
}

/// `Q_xx = 1`, `Q_xy = -1/(2d)` for interior neighbors.
pub fn precision_matrix(lattice: &Lattice) -> Result<DMatrix<f64>, OracleError> {
    let v = lattice.volume();
    if v > DENSE_MAX_VOLUME {
        return Err(OracleError::TooLarge {
            what: "a dense precision matrix",
            volume: v,
            limit: DENSE_MAX_VOLUME,
        });
    }
    let off = -1.0 / lattice.degree() as f64;
    let mut q = DMatrix::<f64>::identity(v, v);
    for x in 0..v {
        for &y in lattice.neighbors(x) {
            if y != BOUNDARY {
                q[(x, y as usize)] = off;
            }
        }
    }
    Ok(q)
}

/// `Q v` without forming `Q`.
pub fn apply_precision(lattice: &Lattice, v: &[f64], out: &mut [f64]) {
    let scale = 1.0 / lattice.degree() as f64;
    for x in 0..v.len() {
        let mut s = 0.0;
        for &y in lattice.neighbors(x) {
            if y != BOUNDARY {
                s += v[y as usize];
            }
        }
        out[x] = v[x] - scale * s;
    }
}

/// Solves `Q x = rhs` by conjugate gradients to relative residual `tol`.
pub fn cg_solve(lattice: &Lattice, rhs: &[f64], tol: f64) -> Result<Vec<f64>, OracleError> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut qp = vec![0.0; n];
    let norm_b = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return Ok(x);
    }
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let max_iter = 10 * n + 100;
    for it in 0..max_iter {
        if rr.sqrt() <= tol * norm_b {
            return Ok(x);
        }
        apply_precision(lattice, &p, &mut qp);
        let alpha = rr / p.iter().zip(&qp).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * qp[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        if it + 1 == max_iter {
            break;
        }
    }
    if rr.sqrt() <= tol * norm_b {
        return Ok(x);
    }
    Err(OracleError::CgNonConvergence {
        residual: rr.sqrt() / norm_b,
        iterations: max_iter,
    })
}

/// The free-field covariance `Σ = Q⁻¹`.
#[derive(Debug, Clone)]
pub enum GreenFunction {
    Dense(DMatrix<f64>),
    MatrixFree { lattice: Lattice, tol: f64 },
}

impl GreenFunction {
    pub fn dense(lattice: &Lattice) -> Result<Self, OracleError> {
        let q = precision_matrix(lattice)?;
        let chol = q.cholesky().ok_or(OracleError::IllConditioned)?;
        Ok(GreenFunction::Dense(chol.inverse()))
    }

    pub fn matrix_free(lattice: &Lattice, tol: f64) -> Self {
        GreenFunction::MatrixFree {
            lattice: lattice.clone(),
            tol,
        }
    }

    /// Column `Σ e_y`.
    pub fn column(&self, y: usize) -> Result<Vec<f64>, OracleError> {
        match self {
            GreenFunction::Dense(m) => Ok(m.column(y).iter().copied().collect()),
            GreenFunction::MatrixFree { lattice, tol } => {
                let mut e = vec![0.0; lattice.volume()];
                e[y] = 1.0;
                cg_solve(lattice, &e, *tol)
            }
        }
    }

    pub fn entry(&self, x: usize, y: usize) -> Result<f64, OracleError> {
        match self {
            GreenFunction::Dense(m) => Ok(m[(x, y)]),
            GreenFunction::MatrixFree { .. } => Ok(self.column(y)?[x]),
        }
    }

    /// Covariance restricted to `sites`.
    pub fn submatrix(&self, sites: &[usize]) -> Result<DMatrix<f64>, OracleError> {
        let k = sites.len();
        let mut out = DMatrix::zeros(k, k);
        for (j, &y) in sites.iter().enumerate() {
            let col = self.column(y)?;
            for (i, &x) in sites.iter().enumerate() {
                out[(i, j)] = col[x];
            }
        }
        // symmetrize away solver round-off
        Ok((&out + out.transpose()) * 0.5)
    }
}

/// Exact draws from the free field: `φ = L⁻ᵀ z` where `Q = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct ExactSampler {
    volume: usize,
    // Lᵀ, row-major
    upper: Vec<f64>,
    gen: Philox4x32,
}

impl ExactSampler {
    pub fn new(lattice: &Lattice, seed: u64) -> Result<Self, OracleError> {
        let q = precision_matrix(lattice)?;
        let l = q.cholesky().ok_or(OracleError::IllConditioned)?.unpack();
        let v = lattice.volume();
        let mut upper = vec![0.0; v * v];
        for i in 0..v {
            for j in i..v {
                upper[i * v + j] = l[(j, i)];
            }
        }
        Ok(Self {
            volume: v,
            upper,
            gen: Philox4x32::new(seed, Domain::ExactSampler),
        })
    }

    pub fn volume(&self) -> usize {
        self.volume
    }

    /// Draw number `index`; a pure function of the seed and the index.
    pub fn draw_into(&self, index: u64, out: &mut [f64]) {
        let v = self.volume;
        let mut rng = self.gen.stream(index, 0);
        for z in out.iter_mut() {
            *z = normal::quantile(rng.uniform());
        }
        for i in (0..v).rev() {
            let row = &self.upper[i * v..(i + 1) * v];
            let mut s = out[i];
            for j in i + 1..v {
                s -= row[j] * out[j];
            }
            out[i] = s / row[i];
        }
    }

    pub fn draw(&self, index: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.volume];
        self.draw_into(index, &mut out);
        out
    }
}

/// `count` exact free-field draws.
pub fn sample_free_field_exact(
    lattice: &Lattice,
    seed: u64,
    count: usize,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let s = ExactSampler::new(lattice, seed)?;
    Ok((0..count as u64).map(|i| s.draw(i)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectProbability {
    pub value: f64,
    pub error: f64,
}

/// Sequential conditioning: with `Σ = L Lᵀ` and `x = L y`, each level
/// contributes the mass of its conditional interval and a uniform variable
/// picks `y_i` inside it. Up to three free levels are integrated by tensor
/// Gauss–Legendre; beyond that by randomly shifted rank-1 lattice rules.
pub fn rectangle_probability(
    cov: &DMatrix<f64>,
    a: f64,
    tol: f64,
) -> Result<RectProbability, OracleError> {
    let k = cov.nrows();
    if k == 0 {
        return Ok(RectProbability {
            value: 1.0,
            error: 0.0,
        });
    }
    if k > EXPANSION_MAX_VOLUME {
        return Err(OracleError::TooLarge {
            what: "a rectangle probability",
            volume: k,
            limit: EXPANSION_MAX_VOLUME,
        });
    }
    if a == f64::INFINITY {
        return Ok(RectProbability {
            value: 1.0,
            error: 0.0,
        });
    }
    let l = cov
        .clone()
        .cholesky()
        .ok_or(OracleError::IllConditioned)?
        .unpack();
    if (0..k).any(|i| !(l[(i, i)] > 1e-12 * cov[(i, i)].sqrt())) {
        return Err(OracleError::IllConditioned);
    }
    if k == 1 {
        let s = cov[(0, 0)].sqrt();
        return Ok(RectProbability {
            value: normal::ln_interval_mass(-a / s, a / s).exp(),
            error: 0.0,
        });
    }
    let integrand = GenzIntegrand { l, a, k };
    if k - 1 <= 3 {
        let fine = integrand.tensor(64);
        let coarse = integrand.tensor(48);
        Ok(RectProbability {
            value: fine,
            error: (fine - coarse).abs(),
        })
    } else {
        Ok(integrand.lattice_rule(tol))
    }
}

struct GenzIntegrand {
    l: DMatrix<f64>,
    a: f64,
    k: usize,
}

impl GenzIntegrand {
    fn eval(&self, u: &[f64], y: &mut [f64]) -> f64 {
        let mut prod = 1.0;
        for i in 0..self.k {
            let mut s = 0.0;
            for j in 0..i {
                s += self.l[(i, j)] * y[j];
            }
            let lii = self.l[(i, i)];
            let lo = (-self.a - s) / lii;
            let hi = (self.a - s) / lii;
            let mass = normal::ln_interval_mass(lo, hi).exp();
            prod *= mass;
            if prod == 0.0 {
                return 0.0;
            }
            if i + 1 < self.k {
                // pick y_i inside [lo, hi] by the inverse CDF on the side
                // with more precision
                let t = u[i];
                y[i] = if lo + hi <= 0.0 {
                    let c = normal::cdf(lo);
                    normal::quantile(c + t * mass)
                } else {
                    let c = normal::cdf(-hi);
                    -normal::quantile(c + (1.0 - t) * mass)
                }
                .clamp(lo, hi);
            }
        }
        prod
    }

    fn tensor(&self, m: usize) -> f64 {
        let (nodes, weights) = quadrature::gauss_legendre_on(m, 0.0, 1.0);
        let dims = self.k - 1;
        let mut u = vec![0.0; dims];
        let mut y = vec![0.0; self.k];
        let mut idx = vec![0usize; dims];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for (j, &i) in idx.iter().enumerate() {
                u[j] = nodes[i];
                w *= weights[i];
            }
            total += w * self.eval(&u, &mut y);
            let mut j = 0;
            loop {
                if j == dims {
                    return total;
                }
                idx[j] += 1;
                if idx[j] < m {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }

    fn lattice_rule(&self, tol: f64) -> RectProbability {
        const PRIMES: [f64; 11] = [2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0];
        const SHIFTS: usize = 12;
        let dims = self.k - 1;
        let z: Vec<f64> = PRIMES[..dims].iter().map(|p| p.sqrt().fract()).collect();
        let gen = Philox4x32::new(derive_seed(0x5245_4354, &[self.k as u64]), Domain::ExactSampler);
        let shifts: Vec<Vec<f64>> = (0..SHIFTS)
            .map(|r| {
                let mut s = gen.stream(r as u64, 0);
                (0..dims).map(|_| s.uniform()).collect()
            })
            .collect();
        let mut u = vec![0.0; dims];
        let mut y = vec![0.0; self.k];
        let mut sums = [0.0; SHIFTS];
        let mut done = 0usize;
        let mut n = 1usize << 10;
        loop {
            for (r, shift) in shifts.iter().enumerate() {
                for i in done..n {
                    for j in 0..dims {
                        let x = (i as f64 * z[j] + shift[j]).fract();
                        // tent transform periodizes the integrand
                        u[j] = 1.0 - (2.0 * x - 1.0).abs();
                    }
                    sums[r] += self.eval(&u, &mut y);
                }
            }
            done = n;
            let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
            let est = crate::stats::mean_iid(&means);
            if 3.0 * est.std_error <= tol || n >= 1 << 20 {
                return RectProbability {
                    value: est.mean,
                    error: 3.0 * est.std_error,
                };
            }
            n *= 2;
        }
    }
}

/// Rectangle probabilities of every subset of a box, indexed by bitmask.
/// They depend on the box and `a` only, so one table serves any number of
/// environments.
#[derive(Debug, Clone)]
pub struct RectTable {
    volume: usize,
    a: f64,
    entries: Vec<RectProbability>,
}

impl RectTable {
    pub fn new(lattice: &Lattice, a: f64) -> Result<Self, OracleError> {
        let v = lattice.volume();
        if v > EXPANSION_MAX_VOLUME {
            return Err(OracleError::TooLarge {
                what: "the subset expansion",
                volume: v,
                limit: EXPANSION_MAX_VOLUME,
            });
        }
        let green = GreenFunction::dense(lattice)?;
        let entries = (0..1usize << v)
            .map(|mask| {
                let sites: Vec<usize> = (0..v).filter(|x| mask >> x & 1 == 1).collect();
                rectangle_probability(&green.submatrix(&sites)?, a, RECT_TOLERANCE)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { volume: v, a, entries })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn volume(&self) -> usize {
        self.volume
    }

    pub fn get(&self, mask: usize) -> RectProbability {
        self.entries[mask]
    }

    /// `Z^w / Z⁰ = Σ_A Π_{x∈A} (e^{w_x} - 1) · rect(A)` and the propagated
    /// quadrature error.
    pub fn partition_ratio(&self, rewards: &[f64]) -> Result<(f64, f64), OracleError> {
        if rewards.len() != self.volume {
            return Err(OracleError::VolumeMismatch {
                expected: self.volume,
                got: rewards.len(),
            });
        }
        let factors: Vec<f64> = rewards.iter().map(|w| w.exp_m1()).collect();
        let mut sum = 0.0;
        let mut err = 0.0;
        for (mask, rect) in self.entries.iter().enumerate() {
            let mut weight = 1.0;
            for (x, f) in factors.iter().enumerate() {
                if mask >> x & 1 == 1 {
                    weight *= f;
                }
            }
            if weight != 0.0 {
                sum += weight * rect.value;
                err += weight.abs() * rect.error;
            }
        }
        if !(sum > 0.0) {
            return Err(OracleError::NonPositiveSum { sum });
        }
        Ok((sum, err))
    }

    pub fn free_energy(&self, rewards: &[f64]) -> Result<FreeEnergyEstimate, OracleError> {
        let (sum, err) = self.partition_ratio(rewards)?;
        let v = self.volume as f64;
        Ok(FreeEnergyEstimate {
            value: sum.ln() / v,
            std_error: err / sum / v,
            method: Method::OracleExpansion,
            diagnostics: Diagnostics {
                terms: Some(self.entries.len()),
                ..Diagnostics::default()
            },
        })
    }
}

/// Free energy per site from the full subset expansion.
pub fn free_energy_expansion(
    lattice: &Lattice,
    rewards: &[f64],
    a: f64,
) -> Result<FreeEnergyEstimate, OracleError> {
    RectTable::new(lattice, a)?.free_energy(rewards)
}

/// A frozen oracle value together with everything needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFixture {
    pub d: usize,
    pub n: usize,
    pub a: f64,
    pub law: String,
    pub b: f64,
    pub h: f64,
    pub env_seed: u64,
    /// Rewards of the sampled environment, frozen alongside the value.
    pub rewards: Vec<f64>,
    pub f_exact: f64,
    pub tol: f64,
    pub generator_version: String,
}

pub const GENERATOR_VERSION: &str = concat!("gffpin-oracle ", env!("CARGO_PKG_VERSION"));
