//! Exact diagonalization: sparse Hamiltonians in the `S^z` basis, Lanczos
//! with full reorthogonalization, and dense diagonalization for small
//! spaces.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianFamily;
use crate::lattice::config_index;

/// Largest Hilbert-space dimension the solvers accept.
pub const MAX_DIM: usize = 1 << 20;

/// Spaces up to this size are diagonalized densely.
const DENSE_LIMIT: usize = 1024;

/// Residual target `||H v - E v||` for ground states.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Basis states, encoded as bit patterns with bit `i` set when site `i` is
/// down.
#[derive(Clone, Debug)]
pub enum Basis {
    Full { n: usize },
    /// Fixed number of down spins, states sorted ascending.
    Sector { n: usize, states: Vec<usize> },
}

impl Basis {
    pub fn full(n: usize) -> Result<Self> {
        if n >= usize::BITS as usize || (1usize << n) > MAX_DIM {
            return Err(Error::DimensionOverflow {
                dim: 1usize.checked_shl(n as u32).unwrap_or(usize::MAX),
                limit: MAX_DIM,
            });
        }
        Ok(Basis::Full { n })
    }

    /// States with `n_down` down spins.
    pub fn sector(n: usize, n_down: usize) -> Result<Self> {
        let dim = binomial(n, n_down);
        if dim > MAX_DIM as u128 {
            return Err(Error::DimensionOverflow {
                dim: dim.min(usize::MAX as u128) as usize,
                limit: MAX_DIM,
            });
        }
        let mut states = Vec::with_capacity(dim as usize);
        if n_down <= n {
            // Gosper's hack enumerates fixed-popcount patterns in order.
            let mut s: usize = (1usize << n_down) - 1;
            let limit = 1usize << n;
            while s < limit {
                states.push(s);
                if s == 0 {
                    break;
                }
                let c = s & s.wrapping_neg();
                let r = s + c;
                s = (((r ^ s) >> 2) / c) | r;
            }
        }
        Ok(Basis::Sector { n, states })
    }

    /// Basis appropriate for a family: zero magnetization for Heisenberg
    /// models, everything for Ising chains.
    pub fn for_family(family: &HamiltonianFamily) -> Result<Self> {
        let n = family.n_sites();
        if family.kind.conserves_magnetization() {
            if n % 2 != 0 {
                return Err(crate::error::invalid(
                    "lattice",
                    "zero-magnetization sector needs an even number of sites",
                ));
            }
            Basis::sector(n, n / 2)
        } else {
            Basis::full(n)
        }
    }

    pub fn n_sites(&self) -> usize {
        match self {
            Basis::Full { n } | Basis::Sector { n, .. } => *n,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Basis::Full { n } => 1 << n,
            Basis::Sector { states, .. } => states.len(),
        }
    }

    pub fn state(&self, k: usize) -> usize {
        match self {
            Basis::Full { .. } => k,
            Basis::Sector { states, .. } => states[k],
        }
    }

    pub fn find(&self, bits: usize) -> Option<usize> {
        match self {
            Basis::Full { n } => (bits < (1 << n)).then_some(bits),
            Basis::Sector { states, .. } => states.binary_search(&bits).ok(),
        }
    }

    /// Spin configuration of basis state `k`.
    pub fn config(&self, k: usize) -> Vec<i8> {
        let bits = self.state(k);
        (0..self.n_sites())
            .map(|i| if (bits >> i) & 1 == 1 { -1 } else { 1 })
            .collect()
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Real symmetric matrix in compressed-row form.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    pub dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Assembles `H_gamma` on a basis from the family's row enumeration.
    pub fn from_family(family: &HamiltonianFamily, gamma: &[f64], basis: &Basis) -> Result<Self> {
        let ham = family.resolve(gamma)?;
        let dim = basis.dim();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        let mut buf = vec![0i8; basis.n_sites()];
        for k in 0..dim {
            let sigma = basis.config(k);
            buf.copy_from_slice(&sigma);
            let mut missing = false;
            let diag = ham.for_each_connected(&sigma, &mut buf, |s, m| match basis.find(config_index(s)) {
                Some(col) => {
                    cols.push(col as u32);
                    vals.push(m);
                }
                None => missing = true,
            });
            if missing {
                return Err(Error::Unsupported(
                    "Hamiltonian leaves the chosen basis sector".into(),
                ));
            }
            if diag != 0.0 {
                cols.push(k as u32);
                vals.push(diag);
            }
            row_ptr.push(cols.len());
        }
        Ok(SparseMatrix {
            dim,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[p] * x[self.cols[p] as usize];
            }
            *out = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[p] as usize)] += self.vals[p];
            }
        }
        m
    }

    /// `<x|H|x>`
    pub fn expectation(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; self.dim];
        self.matvec(x, &mut y);
        dot(x, &y)
    }
}

/// Ground state from exact diagonalization.
#[derive(Clone, Debug)]
pub struct EdSolution {
    pub energy: f64,
    /// Normalized ground vector on `basis`.
    pub vector: Vec<f64>,
    pub basis: Basis,
    /// Lowest energies found (ascending, starting with `energy`). Dense
    /// solves return the full spectrum; Lanczos returns its Ritz values.
    pub spectrum: Vec<f64>,
    pub residual: f64,
}

impl EdSolution {
    /// Gap to the next level visible to the solver.
    pub fn gap(&self) -> Option<f64> {
        self.spectrum.get(1).map(|e1| e1 - self.energy)
    }

    /// Amplitude of a raw configuration (zero outside the basis).
    pub fn amplitude(&self, sigma: &[i8]) -> f64 {
        self.basis.find(config_index(sigma)).map_or(0.0, |k| self.vector[k])
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Ground state of `H_gamma`: dense for small spaces, Lanczos otherwise.
pub fn exact_diagonalize(family: &HamiltonianFamily, gamma: &[f64]) -> Result<EdSolution> {
    let basis = Basis::for_family(family)?;
    let h = SparseMatrix::from_family(family, gamma, &basis)?;
    if basis.dim() <= DENSE_LIMIT {
        dense_ground_state(&h, basis)
    } else {
        // Ising chains are stoquastic, so the uniform vector overlaps the
        // ground state and keeps Lanczos inside the symmetric sector.
        // Heisenberg ground states can be orthogonal to it (Marshall signs).
        let start = if family.kind.is_ising() {
            vec![1.0; basis.dim()]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            (0..basis.dim()).map(|_| rng.random::<f64>() - 0.5).collect()
        };
        lanczos_ground_state(&h, basis, start)
    }
}

pub fn dense_ground_state(h: &SparseMatrix, basis: Basis) -> Result<EdSolution> {
    let eig = SymmetricEigen::new(h.to_dense());
    let mut order: Vec<usize> = (0..h.dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let k0 = order[0];
    let vector: Vec<f64> = eig.eigenvectors.column(k0).iter().copied().collect();
    let energy = eig.eigenvalues[k0];
    let spectrum = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let residual = residual(h, &vector, energy);
    Ok(EdSolution {
        energy,
        vector: fix_sign(vector),
        basis,
        spectrum,
        residual,
    })
}

fn residual(h: &SparseMatrix, v: &[f64], e: f64) -> f64 {
    let mut hv = vec![0.0; h.dim];
    h.matvec(v, &mut hv);
    hv.iter().zip(v).map(|(a, b)| (a - e * b).powi(2)).sum::<f64>().sqrt()
}

/// Global sign convention: largest-magnitude entry positive.
fn fix_sign(mut v: Vec<f64>) -> Vec<f64> {
    let k = (0..v.len())
        .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
        .unwrap_or(0);
    if v.get(k).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Restarted Lanczos with full reorthogonalization.
pub fn lanczos_ground_state(h: &SparseMatrix, basis: Basis, start: Vec<f64>) -> Result<EdSolution> {
    let dim = h.dim;
    let krylov = dim.min(160);
    let mut x = start;
    let nx = norm(&x);
    if nx == 0.0 {
        return Err(crate::error::invalid("lanczos", "zero start vector"));
    }
    x.iter_mut().for_each(|v| *v /= nx);

    let mut best = (f64::INFINITY, Vec::new(), Vec::new(), f64::INFINITY);
    for _restart in 0..60 {
        let mut vs: Vec<Vec<f64>> = vec![x.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut w = vec![0.0; dim];
        let mut ritz: Option<(Vec<f64>, DMatrix<f64>, usize)> = None;
        for j in 0..krylov {
            h.matvec(&vs[j], &mut w);
            let a = dot(&vs[j], &w);
            alpha.push(a);
            // Two rounds of Gram-Schmidt against the whole basis.
            for _ in 0..2 {
                for v in &vs {
                    let c = dot(v, &w);
                    w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
                }
            }
            let b = norm(&w);
            let m = alpha.len();
            let check = b < 1e-12 || j + 1 == krylov || m % 8 == 0;
            if check {
                let t = tridiagonal(&alpha, &beta);
                let eig = SymmetricEigen::new(t);
                let mut order: Vec<usize> = (0..m).collect();
                order.sort_by(|&p, &q| eig.eigenvalues[p].total_cmp(&eig.eigenvalues[q]));
                let y_last = eig.eigenvectors[(m - 1, order[0])];
                let estimate = (b * y_last).abs();
                ritz = Some((order.iter().map(|&k| eig.eigenvalues[k]).collect(), eig.eigenvectors, order[0]));
                if b < 1e-12 || estimate < 0.1 * RESIDUAL_TOL {
                    break;
                }
            }
            beta.push(b);
            vs.push(w.iter().map(|v| v / b).collect());
        }
        let (values, vectors, k0) = ritz.expect("at least one Ritz check");
        let m = values.len();
        let mut y = vec![0.0; dim];
        for (i, v) in vs.iter().take(m).enumerate() {
            let c = vectors[(i, k0)];
            y.iter_mut().zip(v).for_each(|(yi, vi)| *yi += c * vi);
        }
        let ny = norm(&y);
        y.iter_mut().for_each(|v| *v /= ny);
        let energy = h.expectation(&y);
        let res = residual(h, &y, energy);
        if res < best.3 {
            best = (energy, y.clone(), values, res);
        }
        if res <= RESIDUAL_TOL {
            break;
        }
        x = y;
    }
    let (energy, vector, spectrum, residual) = best;
    if residual > RESIDUAL_TOL {
        return Err(Error::LinearSolve {
            reason: format!("Lanczos did not reach residual {RESIDUAL_TOL:e} (got {residual:.3e})"),
            condition: f64::NAN,
        });
    }
    Ok(EdSolution {
        energy,
        vector: fix_sign(vector),
        basis,
        spectrum,
        residual,
    })
}

fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::FamilyKind;

    #[test]
    fn sector_enumeration() {
        let b = Basis::sector(6, 3).unwrap();
        assert_eq!(b.dim(), 20);
        for k in 0..b.dim() {
            assert_eq!(b.state(k).count_ones(), 3);
            assert_eq!(b.find(b.state(k)), Some(k));
        }
        assert!(Basis::full(30).is_err());
    }

    #[test]
    fn matrix_is_symmetric() {
        let fam = HamiltonianFamily::square(FamilyKind::J1J2J3Square, 4, 2);
        let basis = Basis::for_family(&fam).unwrap();
        let h = SparseMatrix::from_family(&fam, &[0.4, 0.3], &basis).unwrap().to_dense();
        assert!((&h - h.transpose()).amax() < 1e-15);
    }

    #[test]
    fn lanczos_matches_dense_on_tfi() {
        let fam = HamiltonianFamily::tfi_chain(10);
        let basis = Basis::for_family(&fam).unwrap();
        let h = SparseMatrix::from_family(&fam, &[0.9], &basis).unwrap();
        let dense = dense_ground_state(&h, basis.clone()).unwrap();
        let lz = lanczos_ground_state(&h, basis, vec![1.0; 1024]).unwrap();
        assert!((dense.energy - lz.energy).abs() < 1e-10);
        assert!(lz.residual <= RESIDUAL_TOL);
        let overlap: f64 = dot(&dense.vector, &lz.vector);
        assert!((overlap.abs() - 1.0).abs() < 1e-9);
    }
}
