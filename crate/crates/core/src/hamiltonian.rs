//! Hamiltonian families and their sparse action on basis states.
//!
//! Ising families use Pauli operators,
//! `H = -J sum_<ij> s^z_i s^z_j - sum_i h_i s^x_i`, which puts the uniform
//! chain's critical point at `h = J`. Heisenberg families use spin-1/2
//! operators, `H = sum_b J_b S_i . S_j`, so a two-site singlet has energy
//! `-3J/4`. In both cases the computational basis is the `S^z` basis.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{LatticeGeometry, Shell, SpinConfiguration};

/// Energy scale of the random transverse-field chain, `J = 1/e`.
pub const RANDOM_TFI_J: f64 = 1.0 / std::f64::consts::E;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// Uniform transverse-field Ising chain, `gamma = [h]` in units of `J`.
    TfiChain,
    /// Transverse-field Ising chain with site fields, `gamma = [h_1, .., h_N]`.
    RandomTfiChain,
    /// Heisenberg model with first, second and third neighbor couplings,
    /// `gamma = [J2/J1, J3/J1]`.
    J1J2J3Square,
    /// `J1` plus two distinct diagonal couplings,
    /// `gamma = [J2 along x-y, J2 along x+y]` in units of `J1`.
    GeneralizedJ1J2Square,
    /// `gamma = [J2/J1]`.
    J1J2Square,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::TfiChain => "tfi-chain",
            FamilyKind::RandomTfiChain => "random-tfi-chain",
            FamilyKind::J1J2J3Square => "j1j2j3-square",
            FamilyKind::GeneralizedJ1J2Square => "generalized-j1j2-square",
            FamilyKind::J1J2Square => "j1j2-square",
        }
    }

    pub fn is_ising(self) -> bool {
        matches!(self, FamilyKind::TfiChain | FamilyKind::RandomTfiChain)
    }

    /// Heisenberg families conserve total `S^z`; sampling stays in the
    /// zero-magnetization sector.
    pub fn conserves_magnetization(self) -> bool {
        !self.is_ising()
    }
}

/// A Hamiltonian family on a fixed lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianFamily {
    pub kind: FamilyKind,
    pub lattice: LatticeGeometry,
    /// Energy unit: `J` of the Ising term or `J1` of the Heisenberg term.
    pub j: f64,
}

/// Nonzero matrix elements of one row `<sigma| H`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectedElements {
    pub diagonal: f64,
    pub off_diagonal: Vec<(SpinConfiguration, f64)>,
}

/// Something that maps configurations and couplings to `log psi`.
///
/// `configs` holds `rows * n_sites` spins and `couplings` holds
/// `rows * n_couplings` values, one coupling vector per row.
pub trait LogAmplitude {
    fn log_amplitudes(&self, configs: &[i8], couplings: &[f64]) -> Result<Vec<Complex64>>;
}

/// A family with its couplings expanded into explicit bonds and fields.
#[derive(Clone, Debug)]
pub struct ResolvedHamiltonian {
    /// `(i, j, coefficient)`; Ising: `-J s_i s_j`; Heisenberg: `J_b S_i . S_j`.
    bonds: Vec<(usize, usize, f64)>,
    /// Transverse fields (empty for Heisenberg families).
    fields: Vec<f64>,
    exchange: bool,
}

impl HamiltonianFamily {
    pub fn new(kind: FamilyKind, lattice: LatticeGeometry) -> Result<Self> {
        lattice.validate()?;
        let chain = matches!(lattice, LatticeGeometry::Chain { .. });
        if kind.is_ising() != chain {
            return Err(invalid(
                "hamiltonian.family",
                format!("{} is not defined on this lattice", kind.name()),
            ));
        }
        let j = if kind == FamilyKind::RandomTfiChain {
            RANDOM_TFI_J
        } else {
            1.0
        };
        Ok(HamiltonianFamily { kind, lattice, j })
    }

    pub fn tfi_chain(n: usize) -> Self {
        HamiltonianFamily {
            kind: FamilyKind::TfiChain,
            lattice: LatticeGeometry::chain(n),
            j: 1.0,
        }
    }

    pub fn random_tfi_chain(n: usize) -> Self {
        HamiltonianFamily {
            kind: FamilyKind::RandomTfiChain,
            lattice: LatticeGeometry::chain(n),
            j: RANDOM_TFI_J,
        }
    }

    pub fn square(kind: FamilyKind, lx: usize, ly: usize) -> Self {
        HamiltonianFamily {
            kind,
            lattice: LatticeGeometry::rectangle(lx, ly),
            j: 1.0,
        }
    }

    pub fn with_j(mut self, j: f64) -> Self {
        self.j = j;
        self
    }

    pub fn n_sites(&self) -> usize {
        self.lattice.n_sites()
    }

    pub fn n_couplings(&self) -> usize {
        match self.kind {
            FamilyKind::TfiChain | FamilyKind::J1J2Square => 1,
            FamilyKind::J1J2J3Square | FamilyKind::GeneralizedJ1J2Square => 2,
            FamilyKind::RandomTfiChain => self.n_sites(),
        }
    }

    pub fn coupling_labels(&self) -> Vec<String> {
        match self.kind {
            FamilyKind::TfiChain => vec!["h/J".into()],
            FamilyKind::RandomTfiChain => (0..self.n_sites()).map(|i| format!("h_{i}")).collect(),
            FamilyKind::J1J2J3Square => vec!["J2/J1".into(), "J3/J1".into()],
            FamilyKind::GeneralizedJ1J2Square => vec!["J2L/J1".into(), "J2R/J1".into()],
            FamilyKind::J1J2Square => vec!["J2/J1".into()],
        }
    }

    pub fn check_couplings(&self, gamma: &[f64]) -> Result<()> {
        if gamma.len() != self.n_couplings() {
            return Err(Error::CouplingMismatch {
                family: self.kind.name(),
                expected: self.n_couplings(),
                got: gamma.len(),
            });
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(invalid("couplings", "coupling values must be finite"));
        }
        Ok(())
    }

    /// Expands `gamma` into explicit bonds and fields.
    pub fn resolve(&self, gamma: &[f64]) -> Result<ResolvedHamiltonian> {
        self.check_couplings(gamma)?;
        let lat = &self.lattice;
        let j = self.j;
        let mut bonds = Vec::new();
        let mut push_shell = |disp: (isize, isize), coeff: f64| {
            if coeff != 0.0 {
                bonds.extend(lat.bonds(disp).into_iter().map(|(a, b)| (a, b, coeff)));
            }
        };
        match self.kind {
            FamilyKind::TfiChain | FamilyKind::RandomTfiChain => {
                push_shell((1, 0), -j);
            }
            FamilyKind::J1J2Square | FamilyKind::J1J2J3Square => {
                for d in lat.shell_displacements(Shell::Nearest) {
                    push_shell(d, j);
                }
                for d in lat.shell_displacements(Shell::Diagonal) {
                    push_shell(d, j * gamma[0]);
                }
                if self.kind == FamilyKind::J1J2J3Square {
                    for d in lat.shell_displacements(Shell::Third) {
                        push_shell(d, j * gamma[1]);
                    }
                }
            }
            FamilyKind::GeneralizedJ1J2Square => {
                for d in lat.shell_displacements(Shell::Nearest) {
                    push_shell(d, j);
                }
                push_shell((1, -1), j * gamma[0]);
                push_shell((1, 1), j * gamma[1]);
            }
        }
        let fields = match self.kind {
            FamilyKind::TfiChain => vec![gamma[0]; self.n_sites()],
            FamilyKind::RandomTfiChain => gamma.to_vec(),
            _ => Vec::new(),
        };
        Ok(ResolvedHamiltonian {
            bonds,
            fields,
            exchange: !self.kind.is_ising(),
        })
    }

    /// All nonzero elements `<sigma|H|sigma'>` of one row.
    pub fn connected_configurations(&self, gamma: &[f64], sigma: &[i8]) -> Result<ConnectedElements> {
        self.lattice.check_config(sigma)?;
        let ham = self.resolve(gamma)?;
        let mut off_diagonal = Vec::new();
        let mut buf = sigma.to_vec();
        let diagonal = ham.for_each_connected(sigma, &mut buf, |s, m| {
            off_diagonal.push((SpinConfiguration::new(s.to_vec()).expect("valid spins"), m));
        });
        Ok(ConnectedElements {
            diagonal,
            off_diagonal,
        })
    }

    /// `E_L(sigma) = sum_sigma' H_{sigma sigma'} psi(sigma') / psi(sigma)`.
    pub fn local_energy<A: LogAmplitude + ?Sized>(
        &self,
        gamma: &[f64],
        sigma: &[i8],
        psi: &A,
    ) -> Result<Complex64> {
        self.lattice.check_config(sigma)?;
        let log_psi = psi.log_amplitudes(sigma, gamma)?;
        let out = self.local_energies(gamma, sigma, &log_psi, psi)?;
        Ok(out[0])
    }

    /// Batched local energies. `couplings` holds either one coupling vector
    /// shared by all rows or one per row; `log_psi` are the amplitudes of
    /// `configs`.
    pub fn local_energies<A: LogAmplitude + ?Sized>(
        &self,
        couplings: &[f64],
        configs: &[i8],
        log_psi: &[Complex64],
        psi: &A,
    ) -> Result<Vec<Complex64>> {
        let n = self.n_sites();
        let nc = self.n_couplings();
        let rows = log_psi.len();
        if configs.len() != rows * n {
            return Err(Error::ConfigLength {
                expected: rows * n,
                got: configs.len(),
            });
        }
        let shared = couplings.len() == nc;
        if !shared && couplings.len() != rows * nc {
            return Err(Error::CouplingMismatch {
                family: self.kind.name(),
                expected: rows * nc,
                got: couplings.len(),
            });
        }
        let gamma_of = |r: usize| {
            if shared {
                couplings
            } else {
                &couplings[r * nc..(r + 1) * nc]
            }
        };

        let mut resolved: Option<ResolvedHamiltonian> = None;
        let mut diagonal = Vec::with_capacity(rows);
        let mut conn_configs = Vec::new();
        let mut conn_couplings = Vec::new();
        let mut conn_elems = Vec::new();
        let mut conn_owner = Vec::new();
        let mut buf = vec![0i8; n];
        for r in 0..rows {
            let sigma = &configs[r * n..(r + 1) * n];
            let gamma = gamma_of(r);
            if !shared || resolved.is_none() {
                resolved = Some(self.resolve(gamma)?);
            }
            let ham = resolved.as_ref().expect("resolved above");
            buf.copy_from_slice(sigma);
            let d = ham.for_each_connected(sigma, &mut buf, |s, m| {
                conn_configs.extend_from_slice(s);
                conn_couplings.extend_from_slice(gamma);
                conn_elems.push(m);
                conn_owner.push(r);
            });
            diagonal.push(d);
        }

        let mut out: Vec<Complex64> = diagonal.into_iter().map(|d| Complex64::new(d, 0.0)).collect();
        if conn_elems.is_empty() {
            return Ok(out);
        }
        let conn_log = psi.log_amplitudes(&conn_configs, &conn_couplings)?;
        for (k, &r) in conn_owner.iter().enumerate() {
            let delta = conn_log[k] - log_psi[r];
            let ratio = delta.exp();
            if !ratio.re.is_finite() || !ratio.im.is_finite() {
                return Err(Error::NonFiniteRatio {
                    sample: r,
                    delta: delta.re,
                });
            }
            out[r] += conn_elems[k] * ratio;
        }
        Ok(out)
    }

    /// Number of nonzero off-diagonal elements an upper bound allows per row.
    pub fn max_connections(&self) -> usize {
        match self.kind {
            FamilyKind::TfiChain | FamilyKind::RandomTfiChain => self.n_sites(),
            _ => self
                .resolve(&vec![1.0; self.n_couplings()])
                .map(|h| h.bonds.len())
                .unwrap_or(0),
        }
    }
}

impl ResolvedHamiltonian {
    pub fn bonds(&self) -> &[(usize, usize, f64)] {
        &self.bonds
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    /// Calls `f(sigma', element)` for every off-diagonal entry and returns
    /// the diagonal element. `buf` must hold a copy of `sigma` and is
    /// restored on return.
    pub fn for_each_connected(&self, sigma: &[i8], buf: &mut [i8], mut f: impl FnMut(&[i8], f64)) -> f64 {
        let mut diagonal = 0.0;
        if self.exchange {
            for &(i, j, c) in &self.bonds {
                let zz = f64::from(sigma[i] * sigma[j]);
                diagonal += 0.25 * c * zz;
                if zz < 0.0 {
                    buf.swap(i, j);
                    f(buf, 0.5 * c);
                    buf.swap(i, j);
                }
            }
        } else {
            for &(i, j, c) in &self.bonds {
                diagonal += c * f64::from(sigma[i] * sigma[j]);
            }
            for (i, &h) in self.fields.iter().enumerate() {
                if h != 0.0 {
                    buf[i] = -buf[i];
                    f(buf, -h);
                    buf[i] = -buf[i];
                }
            }
        }
        diagonal
    }
}
