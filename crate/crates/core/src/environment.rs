//! Disorder laws, quenched environment realizations and the annealed
//! pinning strength `ℓ = log E exp(b e + h)`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::Lattice;
use crate::normal;
use crate::quadrature;
use crate::rng::{Domain, Philox4x32};

#[derive(Debug, Error)]
pub enum EnvironmentError {
    #[error("well half-width a must be finite and > 0, got {0}")]
    BadWidth(f64),
    #[error("disorder intensity b must be finite and >= 0, got {0}")]
    BadIntensity(f64),
    #[error("disorder mean h must be finite, got {0}")]
    BadMean(f64),
    #[error("two-point law must have mean 0 and variance 1 (p={p}, low={low}, high={high})")]
    BadTwoPoint { p: f64, low: f64, high: f64 },
    #[error("E exp(b e + h) is not finite for law {law} at b={b}, h={h}")]
    MgfDivergent { law: DisorderLaw, b: f64, h: f64 },
    #[error("unknown disorder law `{0}` (expected bernoulli, gaussian, constant or two_point:p:low:high)")]
    UnknownLaw(String),
    #[error("environment has {got} sites, box has {expected}")]
    VolumeMismatch { expected: usize, got: usize },
    #[error("malformed environment file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Law of a single disorder variable `e_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisorderLaw {
    /// `P(e = ±1) = 1/2`.
    BernoulliPm1,
    StandardGaussian,
    /// `P(e = low) = p`, `P(e = high) = 1 - p`.
    TwoPoint { p: f64, low: f64, high: f64 },
    /// `e ≡ 0`: homogeneous pinning with reward `h`.
    Constant,
}

impl DisorderLaw {
    pub fn validate(&self) -> Result<(), EnvironmentError> {
        if let DisorderLaw::TwoPoint { p, low, high } = *self {
            let mean = p * low + (1.0 - p) * high;
            let var = p * low * low + (1.0 - p) * high * high;
            if !(p > 0.0 && p < 1.0) || mean.abs() > 1e-9 || (var - 1.0).abs() > 1e-9 {
                return Err(EnvironmentError::BadTwoPoint { p, low, high });
            }
        }
        Ok(())
    }

    /// Inverse-transform draw from a uniform on `(0, 1)`.
    #[inline]
    pub fn draw(&self, u: f64) -> f64 {
        match *self {
            DisorderLaw::BernoulliPm1 => {
                if u < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            DisorderLaw::StandardGaussian => normal::quantile(u),
            DisorderLaw::TwoPoint { p, low, high } => {
                if u < p {
                    low
                } else {
                    high
                }
            }
            DisorderLaw::Constant => 0.0,
        }
    }

    /// Atoms `(probability, value)` for discrete laws.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            DisorderLaw::BernoulliPm1 => Some(vec![(0.5, -1.0), (0.5, 1.0)]),
            DisorderLaw::TwoPoint { p, low, high } => Some(vec![(p, low), (1.0 - p, high)]),
            DisorderLaw::Constant => Some(vec![(1.0, 0.0)]),
            DisorderLaw::StandardGaussian => None,
        }
    }

    /// `E f(e)`; exact for discrete laws, adaptive quadrature (absolute
    /// tolerance `tol`) against the Gaussian density otherwise.
    pub fn expectation(&self, f: impl Fn(f64) -> f64, tol: f64) -> f64 {
        match self.atoms() {
            Some(atoms) => atoms.iter().map(|&(p, v)| p * f(v)).sum(),
            None => {
                // mass beyond |z| = 14 is ~1e-44
                quadrature::adaptive_gk15(|z| normal::pdf(z) * f(z), -14.0, 14.0, tol).0
            }
        }
    }
}

impl fmt::Display for DisorderLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DisorderLaw::BernoulliPm1 => write!(f, "bernoulli"),
            DisorderLaw::StandardGaussian => write!(f, "gaussian"),
            DisorderLaw::TwoPoint { p, low, high } => write!(f, "two_point:{p}:{low}:{high}"),
            DisorderLaw::Constant => write!(f, "constant"),
        }
    }
}

impl FromStr for DisorderLaw {
    type Err = EnvironmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let law = match t.as_str() {
            "bernoulli" | "bernoulli_pm1" | "bernoullipm1" => DisorderLaw::BernoulliPm1,
            "gaussian" | "normal" | "standard_gaussian" => DisorderLaw::StandardGaussian,
            "constant" | "homogeneous" | "none" => DisorderLaw::Constant,
            _ => {
                let parts: Vec<&str> = t.split(':').collect();
                if parts.len() != 4 || parts[0] != "two_point" {
                    return Err(EnvironmentError::UnknownLaw(s.to_string()));
                }
                let num = |x: &str| {
                    x.parse::<f64>()
                        .map_err(|_| EnvironmentError::UnknownLaw(s.to_string()))
                };
                DisorderLaw::TwoPoint {
                    p: num(parts[1])?,
                    low: num(parts[2])?,
                    high: num(parts[3])?,
                }
            }
        };
        law.validate()?;
        Ok(law)
    }
}

/// Square-well parameters: half-width `a`, disorder intensity `b` and mean `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinningParams {
    pub a: f64,
    pub b: f64,
    pub h: f64,
}

impl PinningParams {
    pub fn new(a: f64, b: f64, h: f64) -> Result<Self, EnvironmentError> {
        if !(a.is_finite() && a > 0.0) {
            return Err(EnvironmentError::BadWidth(a));
        }
        if !(b.is_finite() && b >= 0.0) {
            return Err(EnvironmentError::BadIntensity(b));
        }
        if !h.is_finite() {
            return Err(EnvironmentError::BadMean(h));
        }
        Ok(Self { a, b, h })
    }
}

/// `ℓ(e) = log E exp(b e + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealedStrength {
    pub ell: f64,
}

fn ln_cosh(b: f64) -> f64 {
    let b = b.abs();
    b + (-2.0 * b).exp().ln_1p() - std::f64::consts::LN_2
}

pub fn annealed_strength(
    law: &DisorderLaw,
    params: &PinningParams,
) -> Result<AnnealedStrength, EnvironmentError> {
    law.validate()?;
    let PinningParams { b, h, .. } = *params;
    let ell = match *law {
        DisorderLaw::BernoulliPm1 => h + ln_cosh(b),
        DisorderLaw::StandardGaussian => h + 0.5 * b * b,
        DisorderLaw::TwoPoint { p, low, high } => {
            h + normal::ln_add_exp(p.ln() + b * low, (1.0 - p).ln() + b * high)
        }
        DisorderLaw::Constant => h,
    };
    if !ell.is_finite() {
        return Err(EnvironmentError::MgfDivergent { law: *law, b, h });
    }
    Ok(AnnealedStrength { ell })
}

/// One frozen disorder configuration, stored as site rewards `w_x = b e_x + h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentRealization {
    pub law: DisorderLaw,
    pub params: PinningParams,
    pub seed: u64,
    rewards: Vec<f64>,
}

impl EnvironmentRealization {
    /// i.i.d. draws; site `x` always uses counter `x` of the environment
    /// stream, so the realization depends only on `(law, params, seed)`.
    pub fn sample(
        law: DisorderLaw,
        params: PinningParams,
        lattice: &Lattice,
        seed: u64,
    ) -> Result<Self, EnvironmentError> {
        law.validate()?;
        let gen = Philox4x32::new(seed, Domain::Environment);
        let rewards = (0..lattice.volume())
            .map(|x| {
                let e = law.draw(gen.stream(x as u64, 0).uniform());
                params.b * e + params.h
            })
            .collect();
        Ok(Self {
            law,
            params,
            seed,
            rewards,
        })
    }

    /// Every site carries the same reward `w`.
    pub fn homogeneous(a: f64, w: f64, lattice: &Lattice) -> Result<Self, EnvironmentError> {
        let params = PinningParams::new(a, 0.0, w)?;
        Ok(Self {
            law: DisorderLaw::Constant,
            params,
            seed: 0,
            rewards: vec![w; lattice.volume()],
        })
    }

    /// Wraps explicit rewards, keeping `law`/`params`/`seed` as provenance.
    pub fn from_rewards(
        law: DisorderLaw,
        params: PinningParams,
        seed: u64,
        rewards: Vec<f64>,
    ) -> Self {
        Self {
            law,
            params,
            seed,
            rewards,
        }
    }

    #[inline]
    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn volume(&self) -> usize {
        self.rewards.len()
    }

    pub fn check_volume(&self, lattice: &Lattice) -> Result<(), EnvironmentError> {
        if self.rewards.len() != lattice.volume() {
            return Err(EnvironmentError::VolumeMismatch {
                expected: lattice.volume(),
                got: self.rewards.len(),
            });
        }
        Ok(())
    }

    /// Restriction to a sub-box; `parent_sites[i]` is the parent index of
    /// sub-box site `i`.
    pub fn restrict(&self, parent_sites: &[usize]) -> Self {
        Self {
            rewards: parent_sites.iter().map(|&p| self.rewards[p]).collect(),
            ..self.clone()
        }
    }

    /// Rewards outside `[-cutoff, cutoff]` are set to zero.
    pub fn truncated(&self, cutoff: f64) -> Self {
        Self {
            rewards: self
                .rewards
                .iter()
                .map(|&w| if w.abs() <= cutoff { w } else { 0.0 })
                .collect(),
            ..self.clone()
        }
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<(), EnvironmentError> {
        writeln!(out, "# gffpin environment v1")?;
        writeln!(out, "law = {}", self.law)?;
        writeln!(out, "a = {}", self.params.a)?;
        writeln!(out, "b = {}", self.params.b)?;
        writeln!(out, "h = {}", self.params.h)?;
        writeln!(out, "seed = {}", self.seed)?;
        writeln!(out, "sites = {}", self.rewards.len())?;
        for w in &self.rewards {
            // shortest representation that round-trips exactly
            writeln!(out, "{w:?}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self, EnvironmentError> {
        let bad = |m: &str| EnvironmentError::Format(m.to_string());
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| bad("empty file"))??;
        if first.trim() != "# gffpin environment v1" {
            return Err(bad("missing header line"));
        }
        let mut header = std::collections::HashMap::new();
        for key in ["law", "a", "b", "h", "seed", "sites"] {
            let line = lines.next().ok_or_else(|| bad("truncated header"))??;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(&format!("expected `{key} = ...`")))?;
            if k.trim() != key {
                return Err(bad(&format!("expected key `{key}`, found `{}`", k.trim())));
            }
            header.insert(key, v.trim().to_string());
        }
        let num = |k: &str| -> Result<f64, EnvironmentError> {
            header[k]
                .parse()
                .map_err(|_| bad(&format!("`{k}` is not a number")))
        };
        let law: DisorderLaw = header["law"].parse()?;
        let params = PinningParams::new(num("a")?, num("b")?, num("h")?)?;
        let seed: u64 = header["seed"].parse().map_err(|_| bad("bad seed"))?;
        let sites: usize = header["sites"].parse().map_err(|_| bad("bad site count"))?;
        let mut rewards = Vec::with_capacity(sites);
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            rewards.push(t.parse().map_err(|_| bad(&format!("bad reward `{t}`")))?);
        }
        if rewards.len() != sites {
            return Err(EnvironmentError::VolumeMismatch {
                expected: sites,
                got: rewards.len(),
            });
        }
        Ok(Self {
            law,
            params,
            seed,
            rewards,
        })
    }
}

/// `γ_x = exp(w_x - ℓ)`; mean one under the disorder law.
pub fn tilt_factors(env: &EnvironmentRealization, ell: &AnnealedStrength) -> Vec<f64> {
    env.rewards().iter().map(|w| (w - ell.ell).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(d: usize, n: usize) -> Lattice {
        Lattice::new(d, n).unwrap()
    }

    #[test]
    fn constant_law_gives_flat_rewards() {
        let p = PinningParams::new(1.0, 3.0, 0.7).unwrap();
        let env = EnvironmentRealization::sample(DisorderLaw::Constant, p, &lat(2, 4), 1).unwrap();
        assert!(env.rewards().iter().all(|&w| w == 0.7));
    }

    #[test]
    fn bernoulli_rewards_are_signs() {
        let p = PinningParams::new(1.0, 1.0, 0.0).unwrap();
        let env =
            EnvironmentRealization::sample(DisorderLaw::BernoulliPm1, p, &lat(2, 16), 5).unwrap();
        assert!(env.rewards().iter().all(|&w| w == 1.0 || w == -1.0));
        let plus = env.rewards().iter().filter(|&&w| w > 0.0).count();
        assert!(plus > 90 && plus < 166);
    }

    #[test]
    fn gaussian_sample_mean_clt() {
        let p = PinningParams::new(1.0, 1.0, 0.0).unwrap();
        let env = EnvironmentRealization::sample(
            DisorderLaw::StandardGaussian,
            p,
            &lat(2, 1000),
            2024,
        )
        .unwrap();
        let mean = env.rewards().iter().sum::<f64>() / 1e6;
        assert!(mean.abs() < 0.004, "mean {mean}");
    }

    #[test]
    fn annealed_strength_closed_forms() {
        let bern = DisorderLaw::BernoulliPm1;
        let gauss = DisorderLaw::StandardGaussian;
        let p = |b, h| PinningParams::new(1.0, b, h).unwrap();
        assert_eq!(annealed_strength(&bern, &p(0.0, 0.3)).unwrap().ell, 0.3);
        assert!((annealed_strength(&gauss, &p(1.0, 0.0)).unwrap().ell - 0.5).abs() < 1e-15);
        let lc = annealed_strength(&bern, &p(1.0, 0.0)).unwrap().ell;
        assert!((lc - 0.433_780_830_483_027).abs() < 1e-12, "{lc}");
        // Bernoulli is the symmetric two-point law
        let tp = DisorderLaw::TwoPoint {
            p: 0.5,
            low: -1.0,
            high: 1.0,
        };
        assert!((annealed_strength(&tp, &p(1.0, 0.0)).unwrap().ell - lc).abs() < 1e-14);
        // huge intensities stay finite through log-sum-exp
        assert!(annealed_strength(&bern, &p(800.0, 0.0)).unwrap().ell.is_finite());
    }

    #[test]
    fn zero_intensity_gives_mean() {
        let p = PinningParams::new(1.0, 0.0, -0.4).unwrap();
        for law in [
            DisorderLaw::BernoulliPm1,
            DisorderLaw::StandardGaussian,
            DisorderLaw::Constant,
            DisorderLaw::TwoPoint {
                p: 0.8,
                low: -0.5,
                high: 2.0,
            },
        ] {
            assert_eq!(annealed_strength(&law, &p).unwrap().ell, -0.4);
        }
    }

    #[test]
    fn two_point_moment_check() {
        assert!(DisorderLaw::TwoPoint {
            p: 0.5,
            low: -2.0,
            high: 2.0
        }
        .validate()
        .is_err());
        assert!("two_point:0.8:-0.5:2".parse::<DisorderLaw>().is_ok());
        assert!("cauchy".parse::<DisorderLaw>().is_err());
    }

    #[test]
    fn bernoulli_tilt_values() {
        let p = PinningParams::new(1.0, 1.0, 0.0).unwrap();
        let env =
            EnvironmentRealization::sample(DisorderLaw::BernoulliPm1, p, &lat(1, 64), 3).unwrap();
        let ell = annealed_strength(&env.law, &p).unwrap();
        for g in tilt_factors(&env, &ell) {
            let near = |v: f64| (g - v).abs() < 1e-6;
            assert!(near(0.238_406) || near(1.761_594), "{g}");
        }
        assert!((0.5 * (0.238_405_844 + 1.761_594_156) - 1.0f64).abs() < 1e-8);
    }

    #[test]
    fn homogeneous_tilts_are_one() {
        let env = EnvironmentRealization::homogeneous(1.0, 0.25, &lat(2, 3)).unwrap();
        let ell = annealed_strength(&env.law, &env.params).unwrap();
        assert!(tilt_factors(&env, &ell).iter().all(|&g| g == 1.0));
    }

    #[test]
    fn params_reject_bad_width() {
        assert!(matches!(
            PinningParams::new(0.0, 1.0, 0.0),
            Err(EnvironmentError::BadWidth(_))
        ));
        assert!(PinningParams::new(1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let p = PinningParams::new(1.5, 0.7, -0.1).unwrap();
        let env = EnvironmentRealization::sample(DisorderLaw::StandardGaussian, p, &lat(2, 5), 9)
            .unwrap();
        let mut buf = Vec::new();
        env.write_text(&mut buf).unwrap();
        let back = EnvironmentRealization::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, env);
        assert!(EnvironmentRealization::read_text(&b"nope"[..]).is_err());
    }

    #[test]
    fn truncation_zeroes_large_rewards() {
        let env = EnvironmentRealization::from_rewards(
            DisorderLaw::StandardGaussian,
            PinningParams::new(1.0, 1.0, 0.0).unwrap(),
            0,
            vec![0.5, -2.5, 3.1, -0.9],
        );
        assert_eq!(env.truncated(2.0).rewards(), &[0.5, 0.0, 0.0, -0.9]);
        assert_eq!(env.truncated(10.0).rewards(), env.rewards());
    }

    #[test]
    fn gaussian_expectation_matches_mgf() {
        let v = DisorderLaw::StandardGaussian.expectation(|z| (0.8 * z).exp(), 1e-12);
        assert!((v - (0.32f64).exp()).abs() < 1e-10);
    }
}
