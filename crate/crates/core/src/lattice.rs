//! Periodic lattices and spin configurations.
//!
//! Sites are numbered row-major: on a square cluster site `(x, y)` has index
//! `y * lx + x`. All boundaries are periodic.

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a periodic cluster.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LatticeGeometry {
    Chain { sites: usize },
    /// Square-lattice cluster of `lx * ly` sites. `lx == ly` for the square
    /// clusters used in production; rectangular ones exist for small checks.
    Square { lx: usize, ly: usize },
}

/// Neighbor shell on the square lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shell {
    /// Distance 1.
    Nearest,
    /// Distance sqrt(2), both diagonals.
    Diagonal,
    /// Distance 2.
    Third,
}

impl LatticeGeometry {
    pub fn chain(sites: usize) -> Self {
        LatticeGeometry::Chain { sites }
    }

    pub fn square(side: usize) -> Self {
        LatticeGeometry::Square { lx: side, ly: side }
    }

    pub fn rectangle(lx: usize, ly: usize) -> Self {
        LatticeGeometry::Square { lx, ly }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LatticeGeometry::Chain { sites } if sites < 2 => Err(crate::error::invalid(
                "lattice.sites",
                "a chain needs at least 2 sites",
            )),
            LatticeGeometry::Square { lx, ly } if lx < 2 || ly < 2 => Err(crate::error::invalid(
                "lattice.side",
                "square clusters need at least 2 sites per side",
            )),
            _ => Ok(()),
        }
    }

    pub fn n_sites(&self) -> usize {
        match *self {
            LatticeGeometry::Chain { sites } => sites,
            LatticeGeometry::Square { lx, ly } => lx * ly,
        }
    }

    /// Extent along x and y (`ly == 1` for chains).
    pub fn extents(&self) -> (usize, usize) {
        match *self {
            LatticeGeometry::Chain { sites } => (sites, 1),
            LatticeGeometry::Square { lx, ly } => (lx, ly),
        }
    }

    pub fn coords(&self, site: usize) -> (usize, usize) {
        let (lx, _) = self.extents();
        (site % lx, site / lx)
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        let (lx, _) = self.extents();
        y * lx + x
    }

    /// Site reached from `site` by the displacement `(dx, dy)`, wrapping
    /// periodically.
    pub fn translate(&self, site: usize, dx: isize, dy: isize) -> usize {
        let (lx, ly) = self.extents();
        let (x, y) = self.coords(site);
        let nx = (x as isize + dx).rem_euclid(lx as isize) as usize;
        let ny = (y as isize + dy).rem_euclid(ly as isize) as usize;
        self.index(nx, ny)
    }

    /// Displacement `site_b - site_a` reduced to `[0, l)` per axis.
    pub fn displacement(&self, a: usize, b: usize) -> (usize, usize) {
        let (lx, ly) = self.extents();
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        ((bx + lx - ax) % lx, (by + ly - ay) % ly)
    }

    /// Distinct unordered site pairs `(i, i + d)` for every site `i`.
    ///
    /// Pairs that coincide on small clusters (e.g. `+2x` and `-2x` when
    /// `lx == 4`) are listed once.
    pub fn bonds(&self, displacement: (isize, isize)) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = (0..self.n_sites())
            .filter_map(|i| {
                let j = self.translate(i, displacement.0, displacement.1);
                (i != j).then(|| (i.min(j), i.max(j)))
            })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Displacement vectors generating a neighbor shell, one per bond
    /// orientation.
    pub fn shell_displacements(&self, shell: Shell) -> Vec<(isize, isize)> {
        match (self, shell) {
            (LatticeGeometry::Chain { .. }, Shell::Nearest) => vec![(1, 0)],
            (LatticeGeometry::Chain { .. }, Shell::Diagonal) => vec![],
            (LatticeGeometry::Chain { .. }, Shell::Third) => vec![(2, 0)],
            (LatticeGeometry::Square { .. }, Shell::Nearest) => vec![(1, 0), (0, 1)],
            (LatticeGeometry::Square { .. }, Shell::Diagonal) => vec![(1, 1), (1, -1)],
            (LatticeGeometry::Square { .. }, Shell::Third) => vec![(2, 0), (0, 2)],
        }
    }

    /// Distinct neighbors of `site` in a shell.
    pub fn neighbors(&self, site: usize, shell: Shell) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .shell_displacements(shell)
            .into_iter()
            .flat_map(|(dx, dy)| {
                [
                    self.translate(site, dx, dy),
                    self.translate(site, -dx, -dy),
                ]
            })
            .filter(|&j| j != site)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Checks a raw configuration: right length and entries in `{+1, -1}`.
    pub fn check_config(&self, sigma: &[i8]) -> Result<()> {
        if sigma.len() != self.n_sites() {
            return Err(Error::ConfigLength {
                expected: self.n_sites(),
                got: sigma.len(),
            });
        }
        if let Some((site, &value)) = sigma.iter().enumerate().find(|(_, &s)| s != 1 && s != -1) {
            return Err(Error::InvalidSpin { site, value });
        }
        Ok(())
    }
}

/// A basis state in the S^z basis.
///
/// Entries are stored as `+1`/`-1`, standing for `S^z = +1/2` and `-1/2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinConfiguration(Vec<i8>);

impl SpinConfiguration {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some((site, &value)) = values.iter().enumerate().find(|(_, &s)| s != 1 && s != -1) {
            return Err(Error::InvalidSpin { site, value });
        }
        Ok(SpinConfiguration(values))
    }

    pub fn all_up(n: usize) -> Self {
        SpinConfiguration(vec![1; n])
    }

    /// Staggered pattern `+ - + -` along the site index.
    pub fn alternating(n: usize) -> Self {
        SpinConfiguration((0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect())
    }

    /// Néel state on a square cluster: `+` where `x + y` is even.
    pub fn neel(lattice: &LatticeGeometry) -> Self {
        SpinConfiguration(
            (0..lattice.n_sites())
                .map(|i| {
                    let (x, y) = lattice.coords(i);
                    if (x + y) % 2 == 0 {
                        1
                    } else {
                        -1
                    }
                })
                .collect(),
        )
    }

    /// Uniformly random configuration, optionally restricted to zero total
    /// magnetization (`n` must then be even).
    pub fn random<R: Rng + ?Sized>(n: usize, zero_magnetization: bool, rng: &mut R) -> Self {
        let mut values: Vec<i8> = if zero_magnetization {
            (0..n).map(|i| if i < n / 2 { 1 } else { -1 }).collect()
        } else {
            (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()
        };
        if zero_magnetization {
            // Fisher-Yates
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                values.swap(i, j);
            }
        }
        SpinConfiguration(values)
    }

    /// `S^z` on a site, in units of hbar.
    pub fn sz(&self, site: usize) -> f64 {
        0.5 * f64::from(self.0[site])
    }

    /// Twice the total `S^z`.
    pub fn magnetization(&self) -> i32 {
        self.0.iter().map(|&s| i32::from(s)).sum()
    }

    pub fn into_inner(self) -> Vec<i8> {
        self.0
    }

    /// Bit pattern with bit `i` set when site `i` is down.
    pub fn to_index(&self) -> usize {
        config_index(&self.0)
    }

    pub fn from_index(index: usize, n: usize) -> Self {
        SpinConfiguration(
            (0..n)
                .map(|i| if (index >> i) & 1 == 1 { -1 } else { 1 })
                .collect(),
        )
    }
}

impl Deref for SpinConfiguration {
    type Target = [i8];

    fn deref(&self) -> &[i8] {
        &self.0
    }
}

/// Bit pattern of a raw configuration; bit `i` set when site `i` is down.
pub fn config_index(sigma: &[i8]) -> usize {
    sigma
        .iter()
        .enumerate()
        .fold(0usize, |acc, (i, &s)| if s < 0 { acc | (1 << i) } else { acc })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_neighbor_shells() {
        let lat = LatticeGeometry::square(6);
        assert_eq!(lat.n_sites(), 36);
        let s = lat.index(2, 3);
        assert_eq!(lat.neighbors(s, Shell::Nearest).len(), 4);
        assert_eq!(lat.neighbors(s, Shell::Diagonal).len(), 4);
        assert_eq!(lat.neighbors(s, Shell::Third).len(), 4);
        assert!(lat.neighbors(s, Shell::Nearest).contains(&lat.index(2, 2)));
        assert!(lat.neighbors(s, Shell::Third).contains(&lat.index(4, 3)));
    }

    #[test]
    fn bonds_are_deduplicated_on_small_clusters() {
        let lat = LatticeGeometry::square(4);
        assert_eq!(lat.bonds((1, 0)).len(), 16);
        assert_eq!(lat.bonds((1, 1)).len(), 16);
        // +2x and -2x reach the same site when lx = 4.
        assert_eq!(lat.bonds((2, 0)).len(), 8);
        assert_eq!(lat.neighbors(0, Shell::Third).len(), 2);
        let ladder = LatticeGeometry::rectangle(4, 2);
        assert_eq!(ladder.bonds((0, 1)).len(), 4);
    }

    #[test]
    fn translation_wraps() {
        let chain = LatticeGeometry::chain(5);
        assert_eq!(chain.translate(4, 1, 0), 0);
        assert_eq!(chain.translate(0, -1, 0), 4);
        let sq = LatticeGeometry::square(3);
        assert_eq!(sq.displacement(sq.index(2, 2), sq.index(0, 1)), (1, 2));
    }

    #[test]
    fn config_validation() {
        let chain = LatticeGeometry::chain(4);
        assert!(chain.check_config(&[1, -1, 1, -1]).is_ok());
        assert!(matches!(
            chain.check_config(&[1, -1, 1]),
            Err(Error::ConfigLength { expected: 4, got: 3 })
        ));
        assert!(matches!(
            chain.check_config(&[1, 0, 1, -1]),
            Err(Error::InvalidSpin { site: 1, .. })
        ));
    }

    #[test]
    fn index_round_trip() {
        for idx in 0..64 {
            assert_eq!(SpinConfiguration::from_index(idx, 6).to_index(), idx);
        }
        let mut rng = rand::rng();
        let s = SpinConfiguration::random(10, true, &mut rng);
        assert_eq!(s.magnetization(), 0);
    }
}
