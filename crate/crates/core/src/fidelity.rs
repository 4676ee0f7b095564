//! Fidelity susceptibility from coupling derivatives of `log psi`, its
//! eigen-analysis and finite-size data collapse.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::couplings::CouplingVector;
#[cfg(test)]
use crate::couplings::linspace;
use crate::error::{invalid, Error, Result};
use crate::observables::system_statistic;
use crate::sampler::SampleSet;
use crate::vit::ViT;

/// `chi` at one coupling point with 1-sigma errors per entry and on the
/// leading eigenvalue.
#[derive(Clone, Debug)]
pub struct FidelitySusceptibility {
    pub gamma: Vec<f64>,
    pub matrix: DMatrix<f64>,
    pub errors: DMatrix<f64>,
    pub leading_error: f64,
}

impl FidelitySusceptibility {
    pub fn leading(&self) -> Result<LeadingDirection> {
        leading_direction(&self.matrix)
    }
}

/// `chi_ij = Re{ <O_i^* O_j> - <O_i>^* <O_j> }` for weighted rows.
fn chi_matrix(o: &[Complex64], nc: usize, it: &mut dyn Iterator<Item = (usize, f64)>) -> DMatrix<f64> {
    let mut mean = vec![Complex64::new(0.0, 0.0); nc];
    let mut second = DMatrix::<f64>::zeros(nc, nc);
    for (q, w) in it {
        let row = &o[q * nc..(q + 1) * nc];
        for i in 0..nc {
            mean[i] += row[i] * w;
            for j in 0..nc {
                second[(i, j)] += w * (row[i].conj() * row[j]).re;
            }
        }
    }
    let mut chi = second;
    for i in 0..nc {
        for j in 0..nc {
            chi[(i, j)] -= (mean[i].conj() * mean[j]).re;
        }
    }
    chi
}

/// Fidelity susceptibility of system `k` from the model's coupling
/// Jacobians at the sampled configurations.
pub fn chi(model: &ViT, samples: &SampleSet, k: usize, gamma: &CouplingVector) -> Result<FidelitySusceptibility> {
    if k >= samples.systems {
        return Err(invalid("system", "index out of range"));
    }
    model.family.check_couplings(gamma)?;
    let nc = model.n_couplings();
    let (_, o) = model.coupling_jacobians(samples.system_configs(k), gamma)?;
    if o.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite { primitive: "coupling jacobian" });
    }
    let matrix = chi_matrix(&o, nc, &mut samples.system_weights(k).into_iter().enumerate());
    let mut errors = DMatrix::zeros(nc, nc);
    for i in 0..nc {
        for j in 0..nc {
            errors[(i, j)] = system_statistic(samples, k, |it| chi_matrix(&o, nc, it)[(i, j)]).error;
        }
    }
    let leading_error = system_statistic(samples, k, |it| {
        let m = chi_matrix(&o, nc, it);
        m.symmetric_eigenvalues().max()
    })
    .error;
    Ok(FidelitySusceptibility {
        gamma: gamma.to_vec(),
        matrix,
        errors,
        leading_error,
    })
}

/// Largest eigenpair of a symmetric matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadingDirection {
    pub value: f64,
    /// Unit vector with a positive first nonzero component. When
    /// `degenerate` is set this is the first basis vector, not a computed
    /// direction.
    pub vector: Vec<f64>,
    pub degenerate: bool,
}

/// Relative gap below which the two largest eigenvalues count as tied.
pub const DEGENERACY_TOL: f64 = 1e-8;

pub fn leading_direction(chi: &DMatrix<f64>) -> Result<LeadingDirection> {
    let n = chi.nrows();
    if n == 0 || chi.ncols() != n {
        return Err(invalid("chi", "must be a non-empty square matrix"));
    }
    if chi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { primitive: "leading_direction" });
    }
    let sym = (chi + chi.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let value = eig.eigenvalues[order[0]];
    let degenerate = n > 1 && (value - eig.eigenvalues[order[1]]).abs() < DEGENERACY_TOL * value.abs();
    let vector = if degenerate {
        let mut e = vec![0.0; n];
        e[0] = 1.0;
        e
    } else {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[0]).iter().copied().collect();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-14) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        v
    };
    Ok(LeadingDirection {
        value,
        vector,
        degenerate,
    })
}

/// One row of the vector-field table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorFieldRow {
    pub gamma: Vec<f64>,
    pub lambda_max: f64,
    pub vector: Vec<f64>,
    pub sigma: f64,
    pub degenerate: bool,
}

impl VectorFieldRow {
    pub fn from_chi(chi: &FidelitySusceptibility) -> Result<Self> {
        let lead = chi.leading()?;
        Ok(VectorFieldRow {
            gamma: chi.gamma.clone(),
            lambda_max: lead.value,
            vector: lead.vector,
            sigma: chi.leading_error,
            degenerate: lead.degenerate,
        })
    }

    /// Copy with `lambda_max` clipped to a display interval.
    pub fn clipped(&self, lo: f64, hi: f64) -> Self {
        VectorFieldRow {
            lambda_max: self.lambda_max.clamp(lo, hi),
            ..self.clone()
        }
    }
}

/// `chi(h)` for one system size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiCurve {
    pub n_sites: usize,
    pub h: Vec<f64>,
    pub chi: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseFit {
    pub h_c: f64,
    pub nu: f64,
    /// Mean squared mismatch between interpolated curves relative to the
    /// mean squared scaled value; zero for a perfect collapse.
    pub quality: f64,
}

/// Collapse quality of `chi N^{-2/nu}` against `(h - h_c) N^{1/nu}`,
/// using only points with `h` in `window`.
pub fn collapse_quality(curves: &[ChiCurve], h_c: f64, nu: f64, window: (f64, f64)) -> f64 {
    let scaled: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|c| {
            let n = c.n_sites as f64;
            let mut pts: Vec<(f64, f64)> = c
                .h
                .iter()
                .zip(&c.chi)
                .filter(|(h, _)| **h >= window.0 && **h <= window.1)
                .map(|(h, x)| ((h - h_c) * n.powf(1.0 / nu), x * n.powf(-2.0 / nu)))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            pts
        })
        .collect();
    let mut mismatch = 0.0;
    let mut norm = 0.0;
    let mut count = 0usize;
    for (a, pa) in scaled.iter().enumerate() {
        for (b, pb) in scaled.iter().enumerate() {
            if a == b || pb.len() < 2 {
                continue;
            }
            for &(x, y) in pa {
                if let Some(yb) = interpolate(pb, x) {
                    mismatch += (y - yb).powi(2);
                    norm += 0.5 * (y * y + yb * yb);
                    count += 1;
                }
            }
        }
    }
    if count == 0 || norm == 0.0 {
        f64::INFINITY
    } else {
        mismatch / norm
    }
}

fn interpolate(pts: &[(f64, f64)], x: f64) -> Option<f64> {
    if x < pts[0].0 || x > pts[pts.len() - 1].0 {
        return None;
    }
    let i = pts.partition_point(|p| p.0 <= x).clamp(1, pts.len() - 1);
    let (x0, y0) = pts[i - 1];
    let (x1, y1) = pts[i];
    if x1 == x0 {
        return Some(0.5 * (y0 + y1));
    }
    Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

/// Grid search for the best collapse. Ties go to the first grid point in
/// `(h_c, nu)` order, so the result does not depend on curve order.
pub fn collapse_fit(curves: &[ChiCurve], h_c_grid: &[f64], nu_grid: &[f64], window: (f64, f64)) -> Result<CollapseFit> {
    let mut sizes: Vec<usize> = curves.iter().map(|c| c.n_sites).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 {
        return Err(invalid("curves", "collapse needs at least two system sizes"));
    }
    if h_c_grid.is_empty() || nu_grid.is_empty() || nu_grid.iter().any(|nu| *nu <= 0.0) {
        return Err(invalid("grid", "h_c and nu grids must be non-empty with nu > 0"));
    }
    for c in curves {
        if c.h.len() != c.chi.len() || c.h.len() < 2 {
            return Err(invalid("curves", "each curve needs at least two (h, chi) points"));
        }
        let max = c.chi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = c.chi.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(max - min > 1e-12 * max.abs()) {
            return Err(invalid("curves", format!("chi is constant for N = {}", c.n_sites)));
        }
    }
    // Sort curves so the floating-point sums are order independent.
    let mut sorted = curves.to_vec();
    sorted.sort_by(|a, b| a.n_sites.cmp(&b.n_sites).then(a.h.len().cmp(&b.h.len())));
    let mut best = CollapseFit {
        h_c: f64::NAN,
        nu: f64::NAN,
        quality: f64::INFINITY,
    };
    for &h_c in h_c_grid {
        for &nu in nu_grid {
            let q = collapse_quality(&sorted, h_c, nu, window);
            if q < best.quality {
                best = CollapseFit { h_c, nu, quality: q };
            }
        }
    }
    if !best.quality.is_finite() {
        return Err(invalid("window", "no overlapping points inside the collapse window"));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_isotropic() {
        let d = leading_direction(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!((d.value, d.vector.clone(), d.degenerate), (2.0, vec![1.0, 0.0], false));
        let iso = leading_direction(&(DMatrix::identity(2, 2) * 0.7)).unwrap();
        assert!(iso.degenerate && (iso.value - 0.7).abs() < 1e-15 && iso.vector == vec![1.0, 0.0]);
    }

    #[test]
    fn collapse_recovers_synthetic_scaling() {
        let f = |x: f64| 1.0 / (1.0 + x * x);
        let curves: Vec<ChiCurve> = [8usize, 12, 16]
            .iter()
            .map(|&n| {
                let h = linspace(0.7, 1.3, 61);
                let chi = h.iter().map(|&h| (n as f64).powi(2) * f((h - 1.0) * n as f64)).collect();
                ChiCurve { n_sites: n, h, chi }
            })
            .collect();
        let fit = collapse_fit(&curves, &linspace(0.9, 1.1, 21), &linspace(0.7, 1.3, 25), (0.7, 1.3)).unwrap();
        assert!((fit.h_c - 1.0).abs() < 1e-9 && (fit.nu - 1.0).abs() < 1e-9);
        let mut rev = curves.clone();
        rev.reverse();
        let fit2 = collapse_fit(&rev, &linspace(0.9, 1.1, 21), &linspace(0.7, 1.3, 25), (0.7, 1.3)).unwrap();
        assert_eq!(fit, fit2);
    }

    #[test]
    fn constant_curves_are_rejected() {
        let c = |n| ChiCurve {
            n_sites: n,
            h: vec![0.9, 1.0, 1.1],
            chi: vec![2.0; 3],
        };
        assert!(collapse_fit(&[c(8), c(12)], &[1.0], &[1.0], (0.0, 2.0)).is_err());
    }
}
