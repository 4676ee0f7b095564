//! Exact reference solvers: free fermions for Ising chains, exact
//! diagonalization for small clusters, and ground-state fidelities.

pub mod cache;
pub mod ed;
pub mod free_fermion;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianFamily, LogAmplitude};

pub use cache::OracleCache;
pub use ed::{exact_diagonalize, Basis, EdSolution, SparseMatrix};
pub use free_fermion::{solve_tfi_chain, FreeFermionSolution};

/// An explicit state vector usable wherever a wavefunction is expected.
///
/// Couplings passed to [`LogAmplitude::log_amplitudes`] are ignored.
#[derive(Clone, Debug)]
pub struct DenseState {
    pub basis: Basis,
    pub amplitudes: Vec<f64>,
}

impl DenseState {
    pub fn new(basis: Basis, amplitudes: Vec<f64>) -> Self {
        DenseState { basis, amplitudes }
    }

    /// `|psi(sigma)|^2` over the basis (normalized).
    pub fn probabilities(&self) -> Vec<f64> {
        let norm: f64 = self.amplitudes.iter().map(|a| a * a).sum();
        self.amplitudes.iter().map(|a| a * a / norm).collect()
    }

    /// All basis configurations, row-major.
    pub fn configs(&self) -> Vec<i8> {
        (0..self.basis.dim()).flat_map(|k| self.basis.config(k)).collect()
    }
}

impl From<EdSolution> for DenseState {
    fn from(sol: EdSolution) -> Self {
        DenseState {
            basis: sol.basis,
            amplitudes: sol.vector,
        }
    }
}

impl LogAmplitude for DenseState {
    fn log_amplitudes(&self, configs: &[i8], _couplings: &[f64]) -> Result<Vec<Complex64>> {
        let n = self.basis.n_sites();
        if n == 0 || configs.len() % n != 0 {
            return Err(Error::ConfigLength {
                expected: n,
                got: configs.len(),
            });
        }
        Ok(configs
            .chunks_exact(n)
            .map(|sigma| {
                let a = self
                    .basis
                    .find(crate::lattice::config_index(sigma))
                    .map_or(0.0, |k| self.amplitudes[k]);
                Complex64::new(a, 0.0).ln()
            })
            .collect())
    }
}

/// Gaps below this make a finite-difference stencil unreliable.
const MIN_GAP: f64 = 1e-6;

/// Fidelity susceptibility along a unit direction `u` in coupling space,
/// `chi_u = -d^2 ln F / d eps^2`, from the overlap of exact ground states
/// at `gamma - eps u` and `gamma + eps u`.
pub fn exact_fidelity_along(
    family: &HamiltonianFamily,
    gamma: &[f64],
    direction: &[f64],
    eps: f64,
) -> Result<f64> {
    family.check_couplings(gamma)?;
    if direction.len() != gamma.len() {
        return Err(Error::CouplingMismatch {
            family: family.kind.name(),
            expected: gamma.len(),
            got: direction.len(),
        });
    }
    if !(eps > 0.0) {
        return Err(crate::error::invalid("eps", "step must be positive"));
    }
    let shifted = |s: f64| -> Vec<f64> { gamma.iter().zip(direction).map(|(g, u)| g + s * eps * u).collect() };
    let lo = exact_diagonalize(family, &shifted(-1.0))?;
    let hi = exact_diagonalize(family, &shifted(1.0))?;
    for sol in [&lo, &hi] {
        if let Some(gap) = sol.gap() {
            if gap < MIN_GAP {
                return Err(Error::LevelCrossing { gap });
            }
        }
    }
    let overlap = ed::dot(&lo.vector, &hi.vector).abs();
    if overlap < 0.5 {
        // A smooth ground state cannot lose half its overlap over a small
        // stencil; the tracked level changed.
        return Err(Error::LevelCrossing {
            gap: lo.gap().unwrap_or(0.0).min(hi.gap().unwrap_or(0.0)),
        });
    }
    // ln F(2 eps) = -chi (2 eps)^2 / 2
    Ok(-overlap.ln() / (2.0 * eps * eps))
}

/// Full `N_c x N_c` fidelity-susceptibility matrix by polarization of the
/// directional values.
pub fn exact_fidelity_susceptibility(family: &HamiltonianFamily, gamma: &[f64], eps: f64) -> Result<DMatrix<f64>> {
    let nc = gamma.len();
    let unit = |i: usize| -> Vec<f64> { (0..nc).map(|k| if k == i { 1.0 } else { 0.0 }).collect() };
    let mut chi = DMatrix::zeros(nc, nc);
    for i in 0..nc {
        chi[(i, i)] = exact_fidelity_along(family, gamma, &unit(i), eps)?;
    }
    for i in 0..nc {
        for j in i + 1..nc {
            let mut u: Vec<f64> = unit(i);
            u[j] = 1.0;
            let s = std::f64::consts::FRAC_1_SQRT_2;
            u.iter_mut().for_each(|x| *x *= s);
            // u^T chi u = (chi_ii + chi_jj)/2 + chi_ij
            let along = exact_fidelity_along(family, gamma, &u, eps)?;
            let c = along - 0.5 * (chi[(i, i)] + chi[(j, j)]);
            chi[(i, j)] = c;
            chi[(j, i)] = c;
        }
    }
    Ok(chi)
}
