//! Metropolis-Hastings sampling of `|psi(sigma | gamma_k)|^2`, independently
//! for every member of the ensemble.
//!
//! Chains persist between calls: burn-in is paid once when a chain is
//! created and later calls continue from the previous states, so the
//! per-call work depends on the total budget `M` only.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::couplings::CouplingVector;
use crate::error::{invalid, Error, Result};
use crate::exact::DenseState;
use crate::hamiltonian::{HamiltonianFamily, LogAmplitude};
use crate::lattice::SpinConfiguration;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Total samples `M` per call, split evenly over the ensemble.
    pub samples: usize,
    #[serde(default = "default_chains")]
    pub chains_per_system: usize,
    /// Sweeps discarded when a chain starts (one sweep = N proposals).
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Sweeps between kept samples.
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Set by the runner from the run seed.
    #[serde(skip)]
    pub seed: u64,
    #[serde(default = "default_floor")]
    pub acceptance_floor: f64,
}

fn default_chains() -> usize {
    8
}
fn default_burn_in() -> usize {
    100
}
fn default_stride() -> usize {
    1
}
fn default_floor() -> f64 {
    1e-3
}

impl SamplerConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        SamplerConfig {
            samples,
            chains_per_system: default_chains(),
            burn_in: default_burn_in(),
            stride: default_stride(),
            seed,
            acceptance_floor: default_floor(),
        }
    }

    pub fn validate(&self, systems: usize) -> Result<()> {
        if systems == 0 {
            return Err(invalid("couplings", "ensemble is empty"));
        }
        if self.samples == 0 || self.samples % systems != 0 {
            return Err(invalid(
                "sampler.samples",
                format!("{} samples cannot be split evenly over {systems} systems", self.samples),
            ));
        }
        if self.stride == 0 {
            return Err(invalid("sampler.stride", "must be at least 1"));
        }
        if self.chains_per_system == 0 {
            return Err(invalid("sampler.chains_per_system", "must be at least 1"));
        }
        Ok(())
    }

    /// Chains per system: the largest divisor of `M / R` not above the
    /// configured count, so every chain keeps the same number of samples.
    pub fn effective_chains(&self, systems: usize) -> usize {
        let per = self.samples / systems;
        (1..=self.chains_per_system.min(per)).rev().find(|c| per % c == 0).unwrap_or(1)
    }
}

/// Move set of a family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveKind {
    /// Flip one uniformly chosen spin.
    SpinFlip,
    /// Swap a uniformly chosen up spin with a uniformly chosen down spin.
    Exchange,
}

impl MoveKind {
    pub fn for_family(family: &HamiltonianFamily) -> Self {
        if family.kind.conserves_magnetization() {
            MoveKind::Exchange
        } else {
            MoveKind::SpinFlip
        }
    }
}

/// Applies one symmetric proposal to `sigma` in place; returns the touched
/// sites.
pub fn propose<R: Rng + ?Sized>(sigma: &mut [i8], kind: MoveKind, rng: &mut R) -> Result<(usize, Option<usize>)> {
    let n = sigma.len();
    match kind {
        MoveKind::SpinFlip => {
            let i = rng.random_range(0..n);
            sigma[i] = -sigma[i];
            Ok((i, None))
        }
        MoveKind::Exchange => {
            let ups = sigma.iter().filter(|&&s| s > 0).count();
            let downs = n - ups;
            if ups == 0 || downs == 0 {
                return Err(Error::NoAntiparallelPair);
            }
            let a = nth_with(sigma, 1, rng.random_range(0..ups));
            let b = nth_with(sigma, -1, rng.random_range(0..downs));
            sigma.swap(a, b);
            Ok((a, Some(b)))
        }
    }
}

fn nth_with(sigma: &[i8], value: i8, k: usize) -> usize {
    sigma
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == value)
        .nth(k)
        .map(|(i, _)| i)
        .expect("k below count")
}

/// Serializable position of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSnapshot {
    pub sigma: Vec<i8>,
    pub stream: u64,
    pub word_pos: u128,
}

struct Chain {
    sigma: Vec<i8>,
    log_psi: Complex64,
    rng: ChaCha8Rng,
}

/// Samples of one call, grouped by system and, within a system, by chain.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub n_sites: usize,
    pub systems: usize,
    pub per_system: usize,
    pub chains_per_system: usize,
    /// `systems * per_system * n_sites` spins.
    pub configs: Vec<i8>,
    pub log_psi: Vec<Complex64>,
    /// Probability weights per row (sum to one within a system) for exact
    /// enumeration; `None` for Monte Carlo samples.
    pub weights: Option<Vec<f64>>,
    pub acceptance: Vec<f64>,
}

impl SampleSet {
    pub fn rows(&self) -> usize {
        self.systems * self.per_system
    }

    pub fn system_rows(&self, k: usize) -> std::ops::Range<usize> {
        k * self.per_system..(k + 1) * self.per_system
    }

    pub fn config(&self, r: usize) -> &[i8] {
        &self.configs[r * self.n_sites..(r + 1) * self.n_sites]
    }

    pub fn system_configs(&self, k: usize) -> &[i8] {
        let r = self.system_rows(k);
        &self.configs[r.start * self.n_sites..r.end * self.n_sites]
    }

    /// Weight of row `r` within its system.
    pub fn weight(&self, r: usize) -> f64 {
        match &self.weights {
            Some(w) => w[r],
            None => 1.0 / self.per_system as f64,
        }
    }

    pub fn system_weights(&self, k: usize) -> Vec<f64> {
        self.system_rows(k).map(|r| self.weight(r)).collect()
    }

    /// Couplings of every row, flattened.
    pub fn row_couplings(&self, couplings: &[CouplingVector]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * couplings.first().map_or(0, |c| c.len()));
        for c in couplings.iter().take(self.systems) {
            for _ in 0..self.per_system {
                out.extend_from_slice(c);
            }
        }
        out
    }

    /// Blocks used for error bars within one system.
    pub fn blocks(&self) -> usize {
        if self.weights.is_some() {
            1
        } else {
            self.chains_per_system.max(16).min(self.per_system)
        }
    }

    /// Exact "samples": every basis state of each system weighted by
    /// `|psi|^2`. `model` supplies the amplitudes.
    pub fn exact<A: LogAmplitude + ?Sized>(
        family: &HamiltonianFamily,
        model: &A,
        couplings: &[CouplingVector],
    ) -> Result<Self> {
        let basis = crate::exact::Basis::for_family(family)?;
        let n = family.n_sites();
        let dim = basis.dim();
        let all: Vec<i8> = (0..dim).flat_map(|k| basis.config(k)).collect();
        let mut configs = Vec::with_capacity(couplings.len() * all.len());
        let mut log_psi = Vec::with_capacity(couplings.len() * dim);
        let mut weights = Vec::with_capacity(couplings.len() * dim);
        for gamma in couplings {
            let lp = model.log_amplitudes(&all, gamma)?;
            let max = lp.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = lp.iter().map(|l| (2.0 * (l.re - max)).exp()).collect();
            let z: f64 = w.iter().sum();
            weights.extend(w.iter().map(|x| x / z));
            configs.extend_from_slice(&all);
            log_psi.extend(lp);
        }
        Ok(SampleSet {
            n_sites: n,
            systems: couplings.len(),
            per_system: dim,
            chains_per_system: 1,
            configs,
            log_psi,
            weights: Some(weights),
            acceptance: vec![1.0; couplings.len()],
        })
    }

    /// Exact weights from a dense state, for a single system. Basis states
    /// with zero amplitude are dropped.
    pub fn from_dense(state: &DenseState, gamma: &CouplingVector) -> Result<Self> {
        let n = state.basis.n_sites();
        let probs = state.probabilities();
        let keep: Vec<usize> = (0..probs.len()).filter(|&k| probs[k] > 0.0).collect();
        let configs: Vec<i8> = keep.iter().flat_map(|&k| state.basis.config(k)).collect();
        let log_psi = state.log_amplitudes(&configs, gamma)?;
        Ok(SampleSet {
            n_sites: n,
            systems: 1,
            per_system: keep.len(),
            chains_per_system: 1,
            configs,
            log_psi,
            weights: Some(keep.iter().map(|&k| probs[k]).collect()),
            acceptance: vec![1.0],
        })
    }
}

/// Persistent Markov chains for an ensemble.
pub struct Sampler {
    pub config: SamplerConfig,
    n_sites: usize,
    moves: MoveKind,
    systems: usize,
    chains_per_system: usize,
    chains: Vec<Chain>,
    started: bool,
}

impl Sampler {
    pub fn new(config: SamplerConfig, family: &HamiltonianFamily, systems: usize) -> Result<Self> {
        config.validate(systems)?;
        let c = config.effective_chains(systems);
        let n = family.n_sites();
        let zero = family.kind.conserves_magnetization();
        if zero && n % 2 != 0 {
            return Err(invalid("lattice", "zero-magnetization sampling needs an even number of sites"));
        }
        let chains = (0..systems * c)
            .map(|idx| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(idx as u64);
                let sigma = SpinConfiguration::random(n, zero, &mut rng).into_inner();
                Chain {
                    sigma,
                    log_psi: Complex64::new(0.0, 0.0),
                    rng,
                }
            })
            .collect();
        Ok(Sampler {
            config,
            n_sites: n,
            moves: MoveKind::for_family(family),
            systems,
            chains_per_system: c,
            chains,
            started: false,
        })
    }

    pub fn systems(&self) -> usize {
        self.systems
    }

    pub fn chains_per_system(&self) -> usize {
        self.chains_per_system
    }

    pub fn moves(&self) -> MoveKind {
        self.moves
    }

    pub fn snapshot(&self) -> (bool, Vec<ChainSnapshot>) {
        (
            self.started,
            self.chains
                .iter()
                .map(|c| ChainSnapshot {
                    sigma: c.sigma.clone(),
                    stream: c.rng.get_stream(),
                    word_pos: c.rng.get_word_pos(),
                })
                .collect(),
        )
    }

    pub fn restore(&mut self, started: bool, snaps: &[ChainSnapshot]) -> Result<()> {
        if snaps.len() != self.chains.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "sampler state has {} chains, expected {}",
                snaps.len(),
                self.chains.len()
            )));
        }
        for (chain, s) in self.chains.iter_mut().zip(snaps) {
            if s.sigma.len() != self.n_sites {
                return Err(Error::CorruptCheckpoint("chain configuration has wrong length".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(s.stream);
            rng.set_word_pos(s.word_pos);
            chain.sigma = s.sigma.clone();
            chain.rng = rng;
        }
        self.started = started;
        Ok(())
    }

    fn chain_couplings(&self, couplings: &[CouplingVector]) -> Vec<f64> {
        let mut out = Vec::new();
        for gamma in couplings {
            for _ in 0..self.chains_per_system {
                out.extend_from_slice(gamma);
            }
        }
        out
    }

    fn refresh(&mut self, model: &(impl LogAmplitude + ?Sized), gammas: &[f64]) -> Result<()> {
        let configs: Vec<i8> = self.chains.iter().flat_map(|c| c.sigma.iter().copied()).collect();
        let lp = model.log_amplitudes(&configs, gammas)?;
        for (c, l) in self.chains.iter_mut().zip(lp) {
            c.log_psi = l;
        }
        Ok(())
    }

    /// One lockstep sweep; returns accepted moves per chain.
    fn sweep(&mut self, model: &(impl LogAmplitude + ?Sized), gammas: &[f64], accepted: &mut [u64]) -> Result<()> {
        let n = self.n_sites;
        let mut proposal = vec![0i8; self.chains.len() * n];
        for _ in 0..n {
            for (c, chain) in self.chains.iter_mut().enumerate() {
                let dst = &mut proposal[c * n..(c + 1) * n];
                dst.copy_from_slice(&chain.sigma);
                propose(dst, self.moves, &mut chain.rng)?;
            }
            let lp = model.log_amplitudes(&proposal, gammas)?;
            for (c, chain) in self.chains.iter_mut().enumerate() {
                let ratio = (2.0 * (lp[c].re - chain.log_psi.re)).exp();
                let u: f64 = chain.rng.random();
                if u < ratio {
                    chain.sigma.copy_from_slice(&proposal[c * n..(c + 1) * n]);
                    chain.log_psi = lp[c];
                    accepted[c] += 1;
                }
            }
        }
        Ok(())
    }

    /// Draws `M / R` samples for each system.
    pub fn sample(&mut self, model: &(impl LogAmplitude + ?Sized), couplings: &[CouplingVector]) -> Result<SampleSet> {
        if couplings.len() != self.systems {
            return Err(invalid(
                "couplings",
                format!("sampler was built for {} systems, got {}", self.systems, couplings.len()),
            ));
        }
        let gammas = self.chain_couplings(couplings);
        let n = self.n_sites;
        let c = self.chains_per_system;
        let per_system = self.config.samples / self.systems;
        let per_chain = per_system / c;
        let n_chains = self.chains.len();

        self.refresh(model, &gammas)?;
        let mut accepted = vec![0u64; n_chains];
        if !self.started {
            for _ in 0..self.config.burn_in {
                self.sweep(model, &gammas, &mut accepted)?;
            }
            self.started = true;
            accepted.fill(0);
        }

        let mut configs = vec![0i8; self.config.samples * n];
        let mut log_psi = vec![Complex64::new(0.0, 0.0); self.config.samples];
        for t in 0..per_chain {
            for _ in 0..self.config.stride {
                self.sweep(model, &gammas, &mut accepted)?;
            }
            for (idx, chain) in self.chains.iter().enumerate() {
                let (sys, ch) = (idx / c, idx % c);
                let row = sys * per_system + ch * per_chain + t;
                configs[row * n..(row + 1) * n].copy_from_slice(&chain.sigma);
                log_psi[row] = chain.log_psi;
            }
        }

        #[cfg(debug_assertions)]
        {
            let configs: Vec<i8> = self.chains.iter().flat_map(|c| c.sigma.iter().copied()).collect();
            let fresh = model.log_amplitudes(&configs, &gammas)?;
            for (chain, f) in self.chains.iter().zip(fresh) {
                debug_assert!((chain.log_psi - f).norm() <= 1e-9 * (1.0 + f.norm()), "stale cached log psi");
            }
        }

        let proposals = (per_chain * self.config.stride * n * c) as f64;
        let acceptance: Vec<f64> = (0..self.systems)
            .map(|k| accepted[k * c..(k + 1) * c].iter().sum::<u64>() as f64 / proposals)
            .collect();
        for (k, &a) in acceptance.iter().enumerate() {
            if a < self.config.acceptance_floor {
                return Err(Error::DegenerateSampling {
                    system: k,
                    acceptance: a,
                    floor: self.config.acceptance_floor,
                });
            }
        }
        Ok(SampleSet {
            n_sites: n,
            systems: self.systems,
            per_system,
            chains_per_system: c,
            configs,
            log_psi,
            weights: None,
            acceptance,
        })
    }
}
