//! Box geometry `{0, .., n-1}^d` with zero (Dirichlet) boundary.
//!
//! Sites are stored row-major with coordinate 0 varying fastest. Every site
//! owns exactly `2d` neighbor slots, ordered `(-e_0, +e_0, -e_1, +e_1, ..)`;
//! slots that leave the box hold [`BOUNDARY`] and stand for a virtual site
//! whose height is clamped to zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker stored in a neighbor slot that points outside the box.
pub const BOUNDARY: u32 = u32::MAX;

/// Largest volume accepted; site indices must fit in `u32` below [`BOUNDARY`].
pub const MAX_VOLUME: usize = (u32::MAX - 1) as usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("side length must be at least 1")]
    ZeroSide,
    #[error("volume {n}^{d} does not fit in memory")]
    VolumeOverflow { d: usize, n: usize },
    #[error("site {site} out of range for volume {volume}")]
    SiteOutOfRange { site: usize, volume: usize },
    #[error("coordinates {0:?} do not lie in the box")]
    BadCoordinates(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// The box `Λ_n ⊂ Z^d` with precomputed neighbor and parity tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lattice {
    d: usize,
    n: usize,
    volume: usize,
    strides: Vec<usize>,
    neighbors: Vec<u32>,
    even_sites: Vec<u32>,
    odd_sites: Vec<u32>,
}

impl Lattice {
    pub fn new(d: usize, n: usize) -> Result<Self, LatticeError> {
        if d == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        if n == 0 {
            return Err(LatticeError::ZeroSide);
        }
        let mut volume = 1usize;
        let mut strides = Vec::with_capacity(d);
        for _ in 0..d {
            strides.push(volume);
            volume = volume
                .checked_mul(n)
                .filter(|v| *v <= MAX_VOLUME)
                .ok_or(LatticeError::VolumeOverflow { d, n })?;
        }
        let degree = 2 * d;
        let slots = volume
            .checked_mul(degree)
            .ok_or(LatticeError::VolumeOverflow { d, n })?;
        let mut neighbors = Vec::with_capacity(slots);
        let mut even_sites = Vec::with_capacity(volume / 2 + 1);
        let mut odd_sites = Vec::with_capacity(volume / 2);
        let mut coords = vec![0usize; d];
        for site in 0..volume {
            for (axis, &stride) in strides.iter().enumerate() {
                let c = coords[axis];
                neighbors.push(if c == 0 { BOUNDARY } else { (site - stride) as u32 });
                neighbors.push(if c + 1 == n { BOUNDARY } else { (site + stride) as u32 });
            }
            if coords.iter().sum::<usize>() % 2 == 0 {
                even_sites.push(site as u32);
            } else {
                odd_sites.push(site as u32);
            }
            // odometer increment, coordinate 0 fastest
            for c in coords.iter_mut() {
                *c += 1;
                if *c < n {
                    break;
                }
                *c = 0;
            }
        }
        Ok(Self {
            d,
            n,
            volume,
            strides,
            neighbors,
            even_sites,
            odd_sites,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn volume(&self) -> usize {
        self.volume
    }

    /// Number of neighbor slots per site, always `2d`.
    #[inline]
    pub fn degree(&self) -> usize {
        2 * self.d
    }

    /// The `2d` neighbor slots of `site`; entries equal to [`BOUNDARY`] are
    /// outside the box.
    #[inline]
    pub fn neighbors(&self, site: usize) -> &[u32] {
        let k = self.degree();
        &self.neighbors[site * k..(site + 1) * k]
    }

    pub fn decode(&self, site: usize) -> Result<Vec<usize>, LatticeError> {
        if site >= self.volume {
            return Err(LatticeError::SiteOutOfRange {
                site,
                volume: self.volume,
            });
        }
        let mut rest = site;
        Ok((0..self.d)
            .map(|_| {
                let c = rest % self.n;
                rest /= self.n;
                c
            })
            .collect())
    }

    pub fn encode(&self, coords: &[usize]) -> Result<usize, LatticeError> {
        if coords.len() != self.d || coords.iter().any(|&c| c >= self.n) {
            return Err(LatticeError::BadCoordinates(coords.to_vec()));
        }
        Ok(coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum())
    }

    pub fn parity(&self, site: usize) -> Parity {
        let mut rest = site;
        let mut sum = 0;
        for _ in 0..self.d {
            sum += rest % self.n;
            rest /= self.n;
        }
        if sum % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn sites_of_parity(&self, parity: Parity) -> &[u32] {
        match parity {
            Parity::Even => &self.even_sites,
            Parity::Odd => &self.odd_sites,
        }
    }

    /// Site with every coordinate equal to `n / 2`.
    pub fn center(&self) -> usize {
        let half = self.n / 2;
        self.strides.iter().map(|s| half * s).sum()
    }

    /// Step of size `k` along `axis` from `site`, or `None` when it leaves the box.
    pub fn offset(&self, site: usize, axis: usize, k: isize) -> Option<usize> {
        let c = (site / self.strides[axis]) % self.n;
        let target = c as isize + k;
        if target < 0 || target >= self.n as isize {
            return None;
        }
        Some((site as isize + k * self.strides[axis] as isize) as usize)
    }

    /// Number of neighbor slots of `site` that point outside the box.
    pub fn boundary_slots(&self, site: usize) -> usize {
        self.neighbors(site)
            .iter()
            .filter(|&&y| y == BOUNDARY)
            .count()
    }

    /// Splits the box into `2^d` disjoint sub-boxes of side `n / 2`.
    ///
    /// Returns the sub-lattice together with, for each sub-box, the parent
    /// site of every sub-box site (in the sub-box's own ordering).
    pub fn split_in_halves(&self) -> Option<(Lattice, Vec<Vec<usize>>)> {
        if !self.n.is_multiple_of(2) || self.n < 2 {
            return None;
        }
        let half = self.n / 2;
        let sub = Lattice::new(self.d, half).ok()?;
        let mut maps = Vec::with_capacity(1 << self.d);
        for corner in 0..(1usize << self.d) {
            let origin: Vec<usize> = (0..self.d)
                .map(|axis| ((corner >> axis) & 1) * half)
                .collect();
            let map = (0..sub.volume())
                .map(|s| {
                    let local = sub.decode(s).expect("site in range");
                    local
                        .iter()
                        .zip(&origin)
                        .zip(&self.strides)
                        .map(|((l, o), st)| (l + o) * st)
                        .sum()
                })
                .collect();
            maps.push(map);
        }
        Some((sub, maps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_boxes() {
        assert_eq!(Lattice::new(0, 3), Err(LatticeError::ZeroDimension));
        assert_eq!(Lattice::new(2, 0), Err(LatticeError::ZeroSide));
        assert!(matches!(
            Lattice::new(64, 1 << 20),
            Err(LatticeError::VolumeOverflow { .. })
        ));
    }

    #[test]
    fn square_three_by_three() {
        let lat = Lattice::new(2, 3).unwrap();
        assert_eq!(lat.volume(), 9);
        for s in 0..9 {
            assert_eq!(lat.neighbors(s).len(), 4);
        }
        assert_eq!(lat.sites_of_parity(Parity::Even).len(), 5);
        assert_eq!(lat.sites_of_parity(Parity::Odd).len(), 4);
        assert_eq!(lat.center(), 4);
    }

    #[test]
    fn single_site_is_all_boundary() {
        let lat = Lattice::new(2, 1).unwrap();
        assert_eq!(lat.volume(), 1);
        assert_eq!(lat.neighbors(0), &[BOUNDARY; 4]);
    }

    #[test]
    fn cube_of_side_two() {
        let lat = Lattice::new(3, 2).unwrap();
        assert_eq!(lat.volume(), 8);
        for s in 0..8 {
            let interior = lat.neighbors(s).iter().filter(|&&y| y != BOUNDARY).count();
            assert_eq!(interior, 3);
            assert_eq!(lat.boundary_slots(s), 3);
        }
    }

    #[test]
    fn parity_of_small_sites() {
        let lat = Lattice::new(2, 4).unwrap();
        assert_eq!(lat.parity(lat.encode(&[0, 0]).unwrap()), Parity::Even);
        assert_eq!(lat.parity(lat.encode(&[1, 0]).unwrap()), Parity::Odd);
    }

    #[test]
    fn halves_cover_parent_once() {
        let lat = Lattice::new(2, 4).unwrap();
        let (sub, maps) = lat.split_in_halves().unwrap();
        assert_eq!(sub.side(), 2);
        let mut seen = vec![0; lat.volume()];
        for map in &maps {
            for &p in map {
                seen[p] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(Lattice::new(2, 3).unwrap().split_in_halves().is_none());
    }

    #[test]
    fn offset_stays_inside() {
        let lat = Lattice::new(2, 5).unwrap();
        let c = lat.center();
        assert_eq!(lat.offset(c, 0, 2), Some(c + 2));
        assert_eq!(lat.offset(c, 1, 2), Some(c + 10));
        assert_eq!(lat.offset(c, 0, 3), None);
        assert_eq!(lat.offset(c, 1, -3), None);
    }
}
