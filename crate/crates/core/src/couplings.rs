//! Coupling vectors and the ensembles they are drawn from.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One point `gamma` in coupling space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingVector {
    pub values: Vec<f64>,
}

impl CouplingVector {
    pub fn new(values: Vec<f64>) -> Self {
        CouplingVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl std::ops::Deref for CouplingVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl From<Vec<f64>> for CouplingVector {
    fn from(values: Vec<f64>) -> Self {
        CouplingVector { values }
    }
}

/// Distribution over couplings. Discrete kinds return their support
/// exactly; random kinds are reproducible under `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CouplingDistribution {
    /// `points` evenly spaced values on `[start, stop]` (single coupling).
    Grid { start: f64, stop: f64, points: usize },
    /// Cartesian product of evenly spaced axes, first axis slowest.
    Grid2 {
        start: [f64; 2],
        stop: [f64; 2],
        points: [usize; 2],
    },
    /// `realizations` copies of one point.
    Delta { value: Vec<f64>, realizations: usize },
    /// Independent uniform draws inside a box.
    UniformBox {
        low: Vec<f64>,
        high: Vec<f64>,
        realizations: usize,
        seed: u64,
    },
    /// `sites` i.i.d. fields from `U[0, h0]` per realization.
    PerSiteUniform {
        h0: f64,
        sites: usize,
        realizations: usize,
        seed: u64,
    },
    /// Explicit list.
    Explicit { points: Vec<Vec<f64>> },
}

/// Evenly spaced values including both ends.
pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return if points == 1 { vec![start] } else { vec![] };
    }
    let step = (stop - start) / (points - 1) as f64;
    (0..points).map(|k| start + step * k as f64).collect()
}

impl CouplingDistribution {
    /// Number of realizations `R`.
    pub fn realizations(&self) -> usize {
        match self {
            CouplingDistribution::Grid { points, .. } => *points,
            CouplingDistribution::Grid2 { points, .. } => points[0] * points[1],
            CouplingDistribution::Delta { realizations, .. }
            | CouplingDistribution::UniformBox { realizations, .. }
            | CouplingDistribution::PerSiteUniform { realizations, .. } => *realizations,
            CouplingDistribution::Explicit { points } => points.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations() == 0 {
            return Err(invalid("couplings", "ensemble needs at least one realization"));
        }
        match self {
            CouplingDistribution::Grid { start, stop, .. } if !(start.is_finite() && stop.is_finite()) => {
                Err(invalid("couplings.start", "grid bounds must be finite"))
            }
            CouplingDistribution::UniformBox { low, high, .. } => {
                if low.is_empty() || low.len() != high.len() {
                    return Err(invalid("couplings.low", "low and high must be nonempty and equally long"));
                }
                if low.iter().zip(high).any(|(l, h)| !(l <= h)) {
                    return Err(invalid("couplings.high", "empty support: high < low"));
                }
                Ok(())
            }
            CouplingDistribution::PerSiteUniform { h0, sites, .. } => {
                if !(*h0 >= 0.0 && h0.is_finite()) || *sites == 0 {
                    return Err(invalid("couplings.h0", "need h0 >= 0 and at least one site"));
                }
                Ok(())
            }
            CouplingDistribution::Explicit { points } => {
                let n = points[0].len();
                if n == 0 || points.iter().any(|p| p.len() != n) {
                    return Err(invalid("couplings.points", "points must be nonempty and equally long"));
                }
                Ok(())
            }
            CouplingDistribution::Delta { value, .. } if value.is_empty() => {
                Err(invalid("couplings.value", "empty support"))
            }
            _ => Ok(()),
        }
    }

    /// Draws the `R` coupling vectors of the ensemble.
    pub fn sample_couplings(&self) -> Result<Vec<CouplingVector>> {
        self.validate()?;
        let out = match self {
            CouplingDistribution::Grid { start, stop, points } => linspace(*start, *stop, *points)
                .into_iter()
                .map(|g| CouplingVector::new(vec![g]))
                .collect(),
            CouplingDistribution::Grid2 { start, stop, points } => {
                let a = linspace(start[0], stop[0], points[0]);
                let b = linspace(start[1], stop[1], points[1]);
                a.iter()
                    .flat_map(|&x| b.iter().map(move |&y| CouplingVector::new(vec![x, y])))
                    .collect()
            }
            CouplingDistribution::Delta { value, realizations } => {
                vec![CouplingVector::new(value.clone()); *realizations]
            }
            CouplingDistribution::UniformBox {
                low,
                high,
                realizations,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*realizations)
                    .map(|_| {
                        CouplingVector::new(
                            low.iter()
                                .zip(high)
                                .map(|(&l, &h)| l + (h - l) * rng.random::<f64>())
                                .collect(),
                        )
                    })
                    .collect()
            }
            CouplingDistribution::PerSiteUniform {
                h0,
                sites,
                realizations,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*realizations)
                    .map(|_| CouplingVector::new((0..*sites).map(|_| h0 * rng.random::<f64>()).collect()))
                    .collect()
            }
            CouplingDistribution::Explicit { points } => {
                points.iter().cloned().map(CouplingVector::new).collect()
            }
        };
        Ok(out)
    }

    /// Number of coupling components per realization.
    pub fn n_couplings(&self) -> usize {
        match self {
            CouplingDistribution::Grid { .. } => 1,
            CouplingDistribution::Grid2 { .. } => 2,
            CouplingDistribution::Delta { value, .. } => value.len(),
            CouplingDistribution::UniformBox { low, .. } => low.len(),
            CouplingDistribution::PerSiteUniform { sites, .. } => *sites,
            CouplingDistribution::Explicit { points } => points.first().map_or(0, Vec::len),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_returns_exact_points() {
        let d = CouplingDistribution::Grid {
            start: 0.8,
            stop: 1.2,
            points: 5,
        };
        let g: Vec<f64> = d.sample_couplings().unwrap().iter().map(|c| c[0]).collect();
        let want = [0.8, 0.9, 1.0, 1.1, 1.2];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn delta_and_empty() {
        let d = CouplingDistribution::Delta {
            value: vec![0.5, 0.2],
            realizations: 3,
        };
        assert_eq!(d.sample_couplings().unwrap(), vec![CouplingVector::new(vec![0.5, 0.2]); 3]);
        let empty = CouplingDistribution::Delta {
            value: vec![0.5],
            realizations: 0,
        };
        assert!(empty.sample_couplings().is_err());
        let bad = CouplingDistribution::UniformBox {
            low: vec![1.0],
            high: vec![0.0],
            realizations: 2,
            seed: 0,
        };
        assert!(bad.sample_couplings().is_err());
    }

    #[test]
    fn per_site_fields_are_seeded() {
        let d = CouplingDistribution::PerSiteUniform {
            h0: 1.0,
            sites: 8,
            realizations: 4,
            seed: 9,
        };
        let a = d.sample_couplings().unwrap();
        assert_eq!(a, d.sample_couplings().unwrap());
        assert!(a.iter().flat_map(|c| c.values.iter()).all(|&h| (0.0..1.0).contains(&h)));
    }
}
