//! Hamiltonian construction and local energies against dense operators
//! built from Kronecker products of Pauli matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use fnqs::exact::{Basis, DenseState, SparseMatrix};
use fnqs::hamiltonian::{FamilyKind, HamiltonianFamily};
use fnqs::lattice::LatticeGeometry;

type CMat = DMatrix<Complex64>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn pauli(which: char) -> CMat {
    let z = c(0.0, 0.0);
    let o = c(1.0, 0.0);
    match which {
        'x' => CMat::from_row_slice(2, 2, &[z, o, o, z]),
        'y' => CMat::from_row_slice(2, 2, &[z, c(0.0, -1.0), c(0.0, 1.0), z]),
        // Basis state 0 is spin up.
        'z' => CMat::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => unreachable!(),
    }
}

/// `op` on `site` of `n`; site `i` is bit `i` of the basis index.
fn on_site(n: usize, site: usize, op: &CMat) -> CMat {
    let mut out = CMat::identity(1, 1);
    for s in (0..n).rev() {
        let f = if s == site { op.clone() } else { CMat::identity(2, 2) };
        out = out.kronecker(&f);
    }
    out
}

fn ising_dense(n: usize, j: f64, fields: &[f64]) -> DMatrix<f64> {
    let dim = 1 << n;
    let mut h = CMat::zeros(dim, dim);
    let (x, z) = (pauli('x'), pauli('z'));
    for i in 0..n {
        h -= (on_site(n, i, &z) * on_site(n, (i + 1) % n, &z)) * c(j, 0.0);
        h -= on_site(n, i, &x) * c(fields[i], 0.0);
    }
    h.map(|v| v.re)
}

/// Heisenberg `sum_b J_b S_i . S_j` with `S = sigma / 2`.
fn heisenberg_dense(n: usize, bonds: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let dim = 1 << n;
    let mut h = CMat::zeros(dim, dim);
    for &(a, b, jb) in bonds {
        for p in ['x', 'y', 'z'] {
            let s = pauli(p);
            h += (on_site(n, a, &s) * on_site(n, b, &s)) * c(jb / 4.0, 0.0);
        }
    }
    h.map(|v| v.re)
}

/// Periodic bonds for the given displacements on an `lx x ly` torus, each
/// unordered pair once per displacement.
fn torus_bonds(lx: usize, ly: usize, shells: &[((isize, isize), f64)]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for &((dx, dy), jb) in shells {
        let mut pairs = Vec::new();
        for y in 0..ly {
            for x in 0..lx {
                let i = y * lx + x;
                let nx = (x as isize + dx).rem_euclid(lx as isize) as usize;
                let ny = (y as isize + dy).rem_euclid(ly as isize) as usize;
                let k = ny * lx + nx;
                if i != k {
                    pairs.push((i.min(k), i.max(k)));
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        out.extend(pairs.into_iter().map(|(a, b)| (a, b, jb)));
    }
    out
}

fn sparse_dense(family: &HamiltonianFamily, gamma: &[f64]) -> DMatrix<f64> {
    let basis = Basis::full(family.n_sites()).unwrap();
    SparseMatrix::from_family(family, gamma, &basis).unwrap().to_dense()
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn tfi_chain_matches_kronecker_form() {
    let family = HamiltonianFamily::tfi_chain(6);
    let got = sparse_dense(&family, &[0.7]);
    let want = ising_dense(6, 1.0, &[0.7; 6]);
    assert!(max_abs_diff(&got, &want) < 1e-12);
}

#[test]
fn random_fields_match_kronecker_form() {
    let family = HamiltonianFamily::random_tfi_chain(6);
    let fields = [0.1, 0.9, 0.35, 0.0, 0.6, 0.25];
    let got = sparse_dense(&family, &fields);
    let want = ising_dense(6, family.j, &fields);
    assert!(max_abs_diff(&got, &want) < 1e-12);
}

#[test]
fn j1j2_rectangle_matches_kronecker_form() {
    let family = HamiltonianFamily::square(FamilyKind::J1J2Square, 4, 2);
    let j2 = 0.45;
    let bonds = torus_bonds(4, 2, &[((1, 0), 1.0), ((0, 1), 1.0), ((1, 1), j2), ((1, -1), j2)]);
    let got = sparse_dense(&family, &[j2]);
    let want = heisenberg_dense(8, &bonds);
    assert!(max_abs_diff(&got, &want) < 1e-12);
}

#[test]
fn generalized_j1j2_distinguishes_diagonals() {
    let family = HamiltonianFamily::square(FamilyKind::GeneralizedJ1J2Square, 4, 2);
    let bonds = torus_bonds(4, 2, &[((1, 0), 1.0), ((0, 1), 1.0), ((1, -1), 0.3), ((1, 1), 0.8)]);
    let got = sparse_dense(&family, &[0.3, 0.8]);
    let want = heisenberg_dense(8, &bonds);
    assert!(max_abs_diff(&got, &want) < 1e-12);
}

#[test]
fn sector_matrix_is_the_full_matrix_restricted() {
    let family = HamiltonianFamily::square(FamilyKind::J1J2J3Square, 4, 2);
    let gamma = [0.4, 0.2];
    let full = sparse_dense(&family, &gamma);
    let sector = Basis::for_family(&family).unwrap();
    let restricted = SparseMatrix::from_family(&family, &gamma, &sector).unwrap().to_dense();
    for a in 0..sector.dim() {
        for b in 0..sector.dim() {
            assert_eq!(restricted[(a, b)], full[(sector.state(a), sector.state(b))]);
        }
    }
}

/// `E_L(sigma) = (H psi)(sigma) / psi(sigma)` with the dense matrix.
fn check_local_energies(family: &HamiltonianFamily, gamma: &[f64], amplitudes: Vec<f64>) {
    let n = family.n_sites();
    let basis = Basis::full(n).unwrap();
    let h = sparse_dense(family, gamma);
    let psi = nalgebra::DVector::from_vec(amplitudes.clone());
    let hpsi = &h * &psi;
    let state = DenseState::new(basis, amplitudes);
    let configs = state.configs();
    let log_psi: Vec<Complex64> = state.amplitudes.iter().map(|a| c(*a, 0.0).ln()).collect();
    let e = family.local_energies(gamma, &configs, &log_psi, &state).unwrap();
    for k in 0..psi.len() {
        let want = hpsi[k] / psi[k];
        assert!((e[k].re - want).abs() < 1e-9 * want.abs().max(1.0), "row {k}: {} vs {want}", e[k]);
        assert!(e[k].im.abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tfi_local_energy_matches_dense(h in 0.0f64..2.0, amps in prop::collection::vec(0.1f64..1.0, 64)) {
        let family = HamiltonianFamily::tfi_chain(6);
        check_local_energies(&family, &[h], amps);
    }

    #[test]
    fn heisenberg_local_energy_matches_dense(
        j2 in 0.0f64..1.0,
        j3 in 0.0f64..0.5,
        amps in prop::collection::vec(prop_oneof![0.1f64..1.0, -1.0f64..-0.1], 256),
    ) {
        let family = HamiltonianFamily::square(FamilyKind::J1J2J3Square, 4, 2);
        check_local_energies(&family, &[j2, j3], amps);
    }

    #[test]
    fn spectrum_is_translation_covariant(fields in prop::collection::vec(0.0f64..1.5, 6), shift in 1usize..6) {
        // Rotating the fields rotates the chain; the spectrum is unchanged.
        let family = HamiltonianFamily::random_tfi_chain(6);
        let rotated: Vec<f64> = (0..6).map(|i| fields[(i + shift) % 6]).collect();
        let mut a: Vec<f64> = sparse_dense(&family, &fields).symmetric_eigenvalues().iter().cloned().collect();
        let mut b: Vec<f64> = sparse_dense(&family, &rotated).symmetric_eigenvalues().iter().cloned().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn lattice_rejects_degenerate_shapes() {
    assert!(LatticeGeometry::chain(1).validate().is_err());
    assert!(HamiltonianFamily::new(FamilyKind::J1J2Square, LatticeGeometry::chain(8)).is_err());
}
