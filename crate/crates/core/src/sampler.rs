//! Heat-bath dynamics for the pinned free field.
//!
//! The single-site conditional of the Gibbs measure is `N(m, 1)` (with `m`
//! the average of the `2d` neighbors, boundary counted as zero) tilted by
//! `exp(w 1{|φ| <= a})`. That is a two-component mixture of truncated
//! normals, so the update samples it exactly: first the component, then the
//! height inside it.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::EnvironmentRealization;
use crate::lattice::{Lattice, Parity, BOUNDARY};
use crate::rng::{Domain, Philox4x32};
use crate::truncnorm;

/// Sweeps touching at least this many sites fan a parity class out over the
/// rayon pool. Results do not depend on it.
pub const PARALLEL_MIN_VOLUME: usize = 4096;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("well half-width a must be finite and > 0, got {0}")]
    BadWidth(f64),
    #[error("pin scale t must lie in [0, 1], got {0}")]
    BadPinScale(f64),
    #[error("reward array has {got} entries, box has {expected}")]
    VolumeMismatch { expected: usize, got: usize },
    #[error("reward at site {site} is not finite")]
    NonFiniteReward { site: usize },
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepOrder {
    Sequential,
    #[default]
    Checkerboard,
}

/// Box, well width and the effective per-site rewards `t · w_x`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    lattice: Arc<Lattice>,
    a: f64,
    pin_scale: f64,
    rewards: Vec<f64>,
}

impl ModelSpec {
    /// The model with rewards `t · w_x` from `env`; `t = 1` is the pinned
    /// model and `t = 0` the free field.
    pub fn new(
        lattice: Arc<Lattice>,
        env: &EnvironmentRealization,
        pin_scale: f64,
    ) -> Result<Self, SamplerError> {
        if !(0.0..=1.0).contains(&pin_scale) {
            return Err(SamplerError::BadPinScale(pin_scale));
        }
        let rewards = env.rewards().iter().map(|w| pin_scale * w).collect();
        let mut spec = Self::with_rewards(lattice, env.params.a, rewards)?;
        spec.pin_scale = pin_scale;
        Ok(spec)
    }

    /// Explicit effective rewards (used for interpolation paths that do not
    /// start at the free field).
    pub fn with_rewards(
        lattice: Arc<Lattice>,
        a: f64,
        rewards: Vec<f64>,
    ) -> Result<Self, SamplerError> {
        if !(a.is_finite() && a > 0.0) {
            return Err(SamplerError::BadWidth(a));
        }
        if rewards.len() != lattice.volume() {
            return Err(SamplerError::VolumeMismatch {
                expected: lattice.volume(),
                got: rewards.len(),
            });
        }
        if let Some(site) = rewards.iter().position(|w| w.is_nan()) {
            return Err(SamplerError::NonFiniteReward { site });
        }
        Ok(Self {
            lattice,
            a,
            pin_scale: 1.0,
            rewards,
        })
    }

    pub fn free_field(lattice: Arc<Lattice>, a: f64) -> Result<Self, SamplerError> {
        let v = lattice.volume();
        let mut spec = Self::with_rewards(lattice, a, vec![0.0; v])?;
        spec.pin_scale = 0.0;
        Ok(spec)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn lattice_arc(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn pin_scale(&self) -> f64 {
        self.pin_scale
    }

    /// Effective rewards `t · w_x`.
    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }
}

/// Heights on the box together with the address of the next random draw.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub phi: Vec<f64>,
    pub seed: u64,
    pub sweep_count: u64,
    gen: Philox4x32,
}

impl FieldState {
    pub fn zeros(volume: usize, seed: u64) -> Self {
        Self::from_heights(vec![0.0; volume], seed, 0)
    }

    pub fn from_heights(phi: Vec<f64>, seed: u64, sweep_count: u64) -> Self {
        Self {
            phi,
            seed,
            sweep_count,
            gen: Philox4x32::new(seed, Domain::Dynamics),
        }
    }

    /// Flat binary snapshot: magic `GFFSNAP1`, `d: u32`, `n: u64`,
    /// `sweep_count: u64`, `seed: u64`, then the site-ordered heights as
    /// little-endian `f64`.
    pub fn write_snapshot<W: Write>(&self, lattice: &Lattice, mut out: W) -> Result<(), SamplerError> {
        out.write_all(b"GFFSNAP1")?;
        out.write_all(&(lattice.dim() as u32).to_le_bytes())?;
        out.write_all(&(lattice.side() as u64).to_le_bytes())?;
        out.write_all(&self.sweep_count.to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        for v in &self.phi {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a snapshot, returning the box dimensions it was written for.
    pub fn read_snapshot<R: Read>(mut input: R) -> Result<(usize, usize, Self), SamplerError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != b"GFFSNAP1" {
            return Err(SamplerError::Snapshot("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        input.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        input.read_exact(&mut b8)?;
        let sweep_count = u64::from_le_bytes(b8);
        input.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let lattice =
            Lattice::new(d, n).map_err(|e| SamplerError::Snapshot(format!("bad header: {e}")))?;
        let mut phi = Vec::with_capacity(lattice.volume());
        for _ in 0..lattice.volume() {
            input.read_exact(&mut b8)?;
            phi.push(f64::from_le_bytes(b8));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(SamplerError::Snapshot(format!("{} trailing bytes", rest.len())));
        }
        Ok((d, n, Self::from_heights(phi, seed, sweep_count)))
    }
}

/// `H(φ) = (1/4d) Σ (φ_x - φ_y)²` over edges meeting the box, boundary
/// heights zero, each edge once.
pub fn hamiltonian(state: &FieldState, lattice: &Lattice) -> f64 {
    let mut sum = 0.0;
    for (x, &px) in state.phi.iter().enumerate() {
        for &y in lattice.neighbors(x) {
            if y == BOUNDARY {
                sum += px * px;
            } else if (y as usize) > x {
                let d = px - state.phi[y as usize];
                sum += d * d;
            }
        }
    }
    sum / (4 * lattice.dim()) as f64
}

/// Mean and standard deviation of the free-field conditional at `site`.
#[inline]
pub fn conditional_params(phi: &[f64], lattice: &Lattice, site: usize) -> (f64, f64) {
    let mut s = 0.0;
    for &y in lattice.neighbors(site) {
        if y != BOUNDARY {
            s += phi[y as usize];
        }
    }
    (s / lattice.degree() as f64, 1.0)
}

/// Posterior probability that the updated height lands in `[-a, a]`.
#[inline]
pub fn pin_probability(mean: f64, a: f64, w: f64) -> f64 {
    truncnorm::pin_probability_slow(mean, a, w)
}

#[inline]
fn draw_site(phi: &[f64], model: &ModelSpec, gen: &Philox4x32, sweep: u64, site: usize) -> f64 {
    let (mean, _) = conditional_params(phi, &model.lattice, site);
    let mut rng = gen.stream(sweep, site as u32);
    truncnorm::sample_tilted_well(mean, model.a, model.rewards[site], &mut rng)
}

/// Resamples one site from its exact conditional, using the random numbers
/// addressed by `(seed, sweep_count, site)`.
pub fn heat_bath_update(state: &mut FieldState, site: usize, model: &ModelSpec) {
    let v = draw_site(&state.phi, model, &state.gen, state.sweep_count, site);
    state.phi[site] = v;
}

/// Updates every site once and advances `sweep_count`.
pub fn sweep(state: &mut FieldState, model: &ModelSpec, order: SweepOrder) {
    let sweep_no = state.sweep_count;
    let gen = state.gen;
    match order {
        SweepOrder::Sequential => {
            for site in 0..state.phi.len() {
                state.phi[site] = draw_site(&state.phi, model, &gen, sweep_no, site);
            }
        }
        SweepOrder::Checkerboard => {
            for parity in [Parity::Even, Parity::Odd] {
                let sites = model.lattice.sites_of_parity(parity);
                if sites.len() >= PARALLEL_MIN_VOLUME / 2 && rayon::current_num_threads() > 1 {
                    let phi = &state.phi;
                    let fresh: Vec<f64> = sites
                        .par_iter()
                        .map(|&s| draw_site(phi, model, &gen, sweep_no, s as usize))
                        .collect();
                    for (&s, v) in sites.iter().zip(fresh) {
                        state.phi[s as usize] = v;
                    }
                } else {
                    for &s in sites {
                        state.phi[s as usize] = draw_site(&state.phi, model, &gen, sweep_no, s as usize);
                    }
                }
            }
        }
    }
    state.sweep_count += 1;
}

/// Default burn-in: `10 n²` sweeps in `d = 2` (and `d = 1`), `10 n` for `d >= 3`.
pub fn default_burn_in(d: usize, n: usize) -> u64 {
    let n = n as u64;
    if d >= 3 {
        10 * n
    } else {
        10 * n * n
    }
}

/// The set `{x : |φ_x| <= a}` as a bitmask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PinnedSet {
    words: Vec<u64>,
    volume: usize,
    cardinality: usize,
}

impl PinnedSet {
    pub fn contains(&self, site: usize) -> bool {
        site < self.volume && (self.words[site / 64] >> (site % 64)) & 1 == 1
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn volume(&self) -> usize {
        self.volume
    }

    pub fn density(&self) -> f64 {
        self.cardinality as f64 / self.volume as f64
    }

    pub fn sites(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.volume).filter(|&s| self.contains(s))
    }
}

pub fn pinned_set(phi: &[f64], a: f64) -> PinnedSet {
    let mut words = vec![0u64; phi.len().div_ceil(64)];
    let mut cardinality = 0;
    for (x, v) in phi.iter().enumerate() {
        if v.abs() <= a {
            words[x / 64] |= 1 << (x % 64);
            cardinality += 1;
        }
    }
    PinnedSet {
        words,
        volume: phi.len(),
        cardinality,
    }
}

/// Runs `burn_in` unobserved sweeps, then `sweeps` sweeps calling `observe`
/// after each.
pub fn run_chain(
    state: &mut FieldState,
    model: &ModelSpec,
    order: SweepOrder,
    burn_in: u64,
    sweeps: u64,
    mut observe: impl FnMut(&FieldState),
) {
    for _ in 0..burn_in {
        sweep(state, model, order);
    }
    for _ in 0..sweeps {
        sweep(state, model, order);
        observe(state);
    }
}
