//! Batch runs: configuration, training with checkpoints, evaluation,
//! susceptibility sweeps, exact baselines and the oracle self-check.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{checkpoint_dir, Checkpoint, TrainingState};
use crate::couplings::{CouplingDistribution, CouplingVector};
use crate::error::{invalid, Error, Result};
use crate::exact::{exact_diagonalize, solve_tfi_chain, DenseState, OracleCache};
use crate::fidelity::{chi, VectorFieldRow};
use crate::hamiltonian::{FamilyKind, HamiltonianFamily};
use crate::lattice::LatticeGeometry;
use crate::observables::{self, SpinCorrelations};
use crate::sampler::{SampleSet, Sampler, SamplerConfig};
use crate::sr::{RunRecord, SRConfig, Trainer};
use crate::stats::Estimate;
use crate::vit::{ViT, ViTConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Evaluate,
    ChiSweep,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub lattice: LatticeGeometry,
    /// Energy unit; defaults to the family's conventional value.
    #[serde(default)]
    pub j: Option<f64>,
}

impl FamilySpec {
    pub fn build(&self) -> Result<HamiltonianFamily> {
        let f = HamiltonianFamily::new(self.kind, self.lattice.clone())?;
        Ok(match self.j {
            Some(j) => f.with_j(j),
            None => f,
        })
    }
}

/// Couplings and sample budget for evaluation or a susceptibility sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    /// Checkpoint to load; defaults to the run's own checkpoint.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    pub couplings: CouplingDistribution,
    /// Samples per coupling point.
    pub samples: usize,
    /// Display interval applied to `lambda_max` in an extra table column.
    #[serde(default)]
    pub clip: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub output: PathBuf,
    pub family: FamilySpec,
    /// Training ensemble (train) or the points to solve exactly (oracle).
    pub couplings: CouplingDistribution,
    pub model: ViTConfig,
    pub sr: SRConfig,
    pub sampler: SamplerConfig,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub evaluate: Option<ProbeSpec>,
    #[serde(default)]
    pub chi_sweep: Option<ProbeSpec>,
}

fn default_checkpoint_every() -> usize {
    50
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Checks every cross-field constraint before any work starts.
    pub fn validate(&self) -> Result<()> {
        let family = self.family.build()?;
        self.couplings.validate()?;
        if self.couplings.n_couplings() != family.n_couplings() {
            return Err(invalid(
                "couplings",
                format!(
                    "{} expects {} couplings per point, distribution gives {}",
                    family.kind.name(),
                    family.n_couplings(),
                    self.couplings.n_couplings()
                ),
            ));
        }
        self.model.validate(&family)?;
        self.sr.validate()?;
        if self.checkpoint_every == 0 {
            return Err(invalid("checkpoint_every", "must be at least 1"));
        }
        let check_probe = |name: &str, p: &ProbeSpec| -> Result<()> {
            p.couplings.validate()?;
            if p.couplings.n_couplings() != family.n_couplings() {
                return Err(invalid(name, "coupling dimension does not match the family"));
            }
            if p.samples == 0 {
                return Err(invalid(name, "samples must be positive"));
            }
            if let Some([lo, hi]) = p.clip {
                if !(lo < hi) {
                    return Err(invalid(name, "clip interval must satisfy lo < hi"));
                }
            }
            Ok(())
        };
        match self.mode {
            Mode::Train => self.sampler.validate(self.couplings.realizations())?,
            Mode::Evaluate => {
                let p = self.evaluate.as_ref().ok_or_else(|| invalid("evaluate", "section required in evaluate mode"))?;
                check_probe("evaluate", p)?;
            }
            Mode::ChiSweep => {
                let p = self.chi_sweep.as_ref().ok_or_else(|| invalid("chi_sweep", "section required in chi-sweep mode"))?;
                check_probe("chi_sweep", p)?;
            }
            Mode::Oracle => {}
        }
        Ok(())
    }

    fn sampler_config(&self, samples: usize, offset: u64) -> SamplerConfig {
        SamplerConfig {
            samples,
            seed: self.seed.wrapping_add(offset),
            ..self.sampler.clone()
        }
    }
}

/// Result of a run, also written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub output: PathBuf,
    pub files: Vec<PathBuf>,
    pub steps: Option<usize>,
    pub final_energies: Option<Vec<f64>>,
}

/// Validates and executes a configuration.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(&config.output)?;
    let summary = match config.mode {
        Mode::Train => train(config)?,
        Mode::Evaluate => evaluate(config)?,
        Mode::ChiSweep => chi_sweep(config)?,
        Mode::Oracle => oracle(config)?,
    };
    write_atomic(&config.output.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Builds the trainer for `config`, resuming from the checkpoint in the
/// output directory when one exists for the same configuration.
pub fn prepare_trainer(config: &RunConfig) -> Result<Trainer> {
    let family = config.family.build()?;
    let couplings = config.couplings.sample_couplings()?;
    let ckpt = checkpoint_dir(&config.output);
    let sampler = Sampler::new(config.sampler_config(config.sampler.samples, 1), &family, couplings.len())?;
    if ckpt.join("weights.fnqs").exists() {
        let cp = Checkpoint::load(&ckpt)?;
        let stored = RunConfig::from_toml(&cp.config_toml)?;
        if stored != *config {
            return Err(invalid(
                "output",
                format!("{} holds a checkpoint of a different configuration", config.output.display()),
            ));
        }
        let model = cp.to_model()?;
        let mut trainer = Trainer::new(model, cp.state.couplings.clone(), config.sr.clone(), sampler)?;
        trainer.sampler.restore(cp.state.sampler_started, &cp.state.chains)?;
        trainer.step = cp.state.step;
        trainer.guard = cp.state.guard;
        return Ok(trainer);
    }
    let model = ViT::new(config.model.clone(), family, config.seed)?;
    Trainer::new(model, couplings, config.sr.clone(), sampler)
}

/// Current trainer state as a checkpoint.
pub fn snapshot(trainer: &Trainer, config_toml: &str) -> Checkpoint {
    let (started, chains) = trainer.sampler.snapshot();
    Checkpoint::from_model(
        &trainer.model,
        TrainingState {
            step: trainer.step,
            guard: trainer.guard,
            couplings: trainer.couplings.clone(),
            sampler_started: started,
            chains,
        },
        config_toml.to_string(),
    )
}

/// Keeps the first `steps` records of a resumed run.
fn truncate_records(path: &Path, steps: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let mut kept = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = serde_json::from_str(&line)?;
        if rec.step < steps {
            kept.extend_from_slice(line.as_bytes());
            kept.push(b'\n');
        }
    }
    write_atomic(path, &kept)
}

fn train(config: &RunConfig) -> Result<RunSummary> {
    let toml_text = config.to_toml()?;
    let mut trainer = prepare_trainer(config)?;
    let records_path = config.output.join("records.jsonl");
    truncate_records(&records_path, trainer.step)?;
    let mut records = fs::OpenOptions::new().create(true).append(true).open(&records_path)?;
    let ckpt = checkpoint_dir(&config.output);
    let mut last_energy = None;
    while trainer.step < config.sr.steps {
        let before = snapshot(&trainer, &toml_text);
        let rec = match trainer.step() {
            Ok(r) => r,
            Err(e @ Error::Diverged { .. }) => {
                before.save(&ckpt)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        serde_json::to_writer(&mut records, &rec)?;
        records.write_all(b"\n")?;
        last_energy = Some(rec.energy.clone());
        if trainer.step % config.checkpoint_every == 0 || trainer.step == config.sr.steps {
            records.flush()?;
            snapshot(&trainer, &toml_text).save(&ckpt)?;
        }
    }
    records.flush()?;
    if !ckpt.exists() {
        snapshot(&trainer, &toml_text).save(&ckpt)?;
    }
    Ok(RunSummary {
        mode: Mode::Train,
        output: config.output.clone(),
        files: vec![records_path, ckpt],
        steps: Some(trainer.step),
        final_energies: last_energy,
    })
}

fn load_probe_model(config: &RunConfig, probe: &ProbeSpec) -> Result<ViT> {
    let dir = probe.checkpoint.clone().unwrap_or_else(|| checkpoint_dir(&config.output));
    let model = Checkpoint::load(&dir)?.to_model()?;
    if model.family != config.family.build()? {
        return Err(invalid("family", "checkpoint was trained on a different family or lattice"));
    }
    Ok(model)
}

/// Observables of one coupling point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub gamma: Vec<f64>,
    pub energy: Estimate,
    pub variance: f64,
    pub v_score: Estimate,
    pub acceptance: f64,
    pub observables: BTreeMap<String, Estimate>,
}

/// Samples `model` at every point and estimates the family's observables.
pub fn evaluate_points(model: &ViT, points: &[CouplingVector], sampler: &SamplerConfig) -> Result<Vec<EvaluationRow>> {
    let family = &model.family;
    let mut rows = Vec::with_capacity(points.len());
    for gamma in points {
        let mut s = Sampler::new(sampler.clone(), family, 1)?;
        let samples = s.sample(model, std::slice::from_ref(gamma))?;
        rows.push(evaluate_samples(model, family, &samples, gamma)?);
    }
    Ok(rows)
}

/// Observables from an existing single-system sample set.
pub fn evaluate_samples(
    model: &(impl crate::hamiltonian::LogAmplitude + ?Sized),
    family: &HamiltonianFamily,
    samples: &SampleSet,
    gamma: &CouplingVector,
) -> Result<EvaluationRow> {
    let e_loc = family.local_energies(gamma, &samples.configs, &samples.log_psi, model)?;
    let energy = observables::energy(samples, 0, &e_loc)?;
    let mean: num_complex::Complex64 = samples
        .system_rows(0)
        .map(|r| e_loc[r] * samples.weight(r))
        .sum();
    let variance = samples
        .system_rows(0)
        .map(|r| samples.weight(r) * (e_loc[r] - mean).norm_sqr())
        .sum();
    let mut obs = BTreeMap::new();
    if family.kind.is_ising() {
        obs.insert("m2".to_string(), observables::zz_m2(samples, 0)?);
        if family.n_sites() % 2 == 0 {
            obs.insert("m2_half_chain".to_string(), observables::zz_long_range_m2(samples, 0)?);
        }
    } else {
        let corr = SpinCorrelations::compute(model, samples, 0, gamma)?;
        obs.insert("m2_neel".to_string(), corr.m2_neel(samples, &family.lattice)?);
        obs.insert("m2_stripe".to_string(), corr.m2_stripe(samples, &family.lattice)?);
        obs.insert("d2".to_string(), observables::dimer_order_d2(samples, 0, &family.lattice)?);
    }
    Ok(EvaluationRow {
        gamma: gamma.to_vec(),
        energy,
        variance,
        v_score: observables::v_score(samples, 0, &e_loc)?,
        acceptance: samples.acceptance[0],
        observables: obs,
    })
}

fn tsv_header(nc: usize, extra: &[&str]) -> String {
    let mut cols: Vec<String> = (1..=nc).map(|i| format!("gamma{i}")).collect();
    cols.extend(extra.iter().map(|s| s.to_string()));
    cols.join("\t") + "\n"
}

fn evaluate(config: &RunConfig) -> Result<RunSummary> {
    let probe = config.evaluate.as_ref().expect("validated");
    let model = load_probe_model(config, probe)?;
    let points = probe.couplings.sample_couplings()?;
    let rows = evaluate_points(&model, &points, &config.sampler_config(probe.samples, 2))?;
    let jsonl = config.output.join("evaluation.jsonl");
    write_atomic(&jsonl, &to_jsonl(&rows)?)?;
    // Flat table: gamma columns, observable, value, error.
    let mut table = tsv_header(model.n_couplings(), &["observable", "value", "error"]);
    for r in &rows {
        let g: Vec<String> = r.gamma.iter().map(|x| x.to_string()).collect();
        let mut emit = |name: &str, e: &Estimate| {
            table.push_str(&format!("{}\t{name}\t{}\t{}\n", g.join("\t"), e.value, e.error));
        };
        emit("energy", &r.energy);
        emit("v_score", &r.v_score);
        for (k, v) in &r.observables {
            emit(k, v);
        }
    }
    let tsv = config.output.join("evaluation.tsv");
    write_atomic(&tsv, table.as_bytes())?;
    Ok(RunSummary {
        mode: Mode::Evaluate,
        output: config.output.clone(),
        files: vec![jsonl, tsv],
        steps: None,
        final_energies: Some(rows.iter().map(|r| r.energy.value).collect()),
    })
}

/// Vector-field rows over a set of coupling points.
pub fn chi_rows(model: &ViT, points: &[CouplingVector], sampler: &SamplerConfig) -> Result<Vec<VectorFieldRow>> {
    let mut rows = Vec::with_capacity(points.len());
    for gamma in points {
        let mut s = Sampler::new(sampler.clone(), &model.family, 1)?;
        let samples = s.sample(model, std::slice::from_ref(gamma))?;
        rows.push(VectorFieldRow::from_chi(&chi(model, &samples, 0, gamma)?)?);
    }
    Ok(rows)
}

fn chi_sweep(config: &RunConfig) -> Result<RunSummary> {
    let probe = config.chi_sweep.as_ref().expect("validated");
    let model = load_probe_model(config, probe)?;
    let points = probe.couplings.sample_couplings()?;
    let rows = chi_rows(&model, &points, &config.sampler_config(probe.samples, 3))?;
    let nc = model.n_couplings();
    let jsonl = config.output.join("chi_sweep.jsonl");
    write_atomic(&jsonl, &to_jsonl(&rows)?)?;
    let vcols: Vec<String> = (1..=nc).map(|i| format!("v{i}")).collect();
    let mut extra: Vec<&str> = vec!["lambda_max"];
    extra.extend(vcols.iter().map(|s| s.as_str()));
    extra.push("sigma_stat");
    if probe.clip.is_some() {
        extra.push("lambda_clipped");
    }
    let mut table = tsv_header(nc, &extra);
    for r in &rows {
        let mut cols: Vec<String> = r.gamma.iter().map(|x| x.to_string()).collect();
        cols.push(r.lambda_max.to_string());
        cols.extend(r.vector.iter().map(|x| x.to_string()));
        cols.push(r.sigma.to_string());
        if let Some([lo, hi]) = probe.clip {
            cols.push(r.clipped(lo, hi).lambda_max.to_string());
        }
        table.push_str(&(cols.join("\t") + "\n"));
    }
    let tsv = config.output.join("chi_sweep.tsv");
    write_atomic(&tsv, table.as_bytes())?;
    Ok(RunSummary {
        mode: Mode::ChiSweep,
        output: config.output.clone(),
        files: vec![jsonl, tsv],
        steps: None,
        final_energies: None,
    })
}

/// Exact energy and observables at one coupling point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub gamma: Vec<f64>,
    pub method: String,
    pub energy: f64,
    pub observables: BTreeMap<String, f64>,
}

/// Free fermions for Ising chains, exact diagonalization otherwise.
pub fn oracle_row(family: &HamiltonianFamily, gamma: &CouplingVector) -> Result<OracleRow> {
    family.check_couplings(gamma)?;
    let mut obs = BTreeMap::new();
    if family.kind.is_ising() {
        let n = family.n_sites();
        let fields = match family.kind {
            FamilyKind::TfiChain => vec![gamma[0]; n],
            _ => gamma.to_vec(),
        };
        let ff = solve_tfi_chain(&fields, family.j)?;
        obs.insert("m2".to_string(), ff.m2_uniform());
        if n % 2 == 0 {
            obs.insert("m2_half_chain".to_string(), ff.m2_half_chain());
        }
        return Ok(OracleRow {
            gamma: gamma.to_vec(),
            method: "free-fermion".into(),
            energy: ff.energy,
            observables: obs,
        });
    }
    let ed = exact_diagonalize(family, gamma)?;
    let energy = ed.energy;
    let state = DenseState::from(ed);
    let samples = SampleSet::from_dense(&state, gamma)?;
    let corr = SpinCorrelations::compute(&state, &samples, 0, gamma)?;
    obs.insert("m2_neel".to_string(), corr.m2_neel(&samples, &family.lattice)?.value);
    obs.insert("m2_stripe".to_string(), corr.m2_stripe(&samples, &family.lattice)?.value);
    obs.insert(
        "d2".to_string(),
        observables::dimer_order_d2(&samples, 0, &family.lattice)?.value,
    );
    Ok(OracleRow {
        gamma: gamma.to_vec(),
        method: "exact-diagonalization".into(),
        energy,
        observables: obs,
    })
}

/// [`oracle_row`] through an on-disk cache.
pub fn cached_oracle_row(cache: &OracleCache, family: &HamiltonianFamily, gamma: &CouplingVector) -> Result<OracleRow> {
    cache.get_or_compute("oracle-row", family, gamma, || oracle_row(family, gamma))
}

fn oracle(config: &RunConfig) -> Result<RunSummary> {
    let family = config.family.build()?;
    let cache = OracleCache::new(config.output.join("oracle-cache"))?;
    let rows: Vec<OracleRow> = config
        .couplings
        .sample_couplings()?
        .iter()
        .map(|g| cached_oracle_row(&cache, &family, g))
        .collect::<Result<_>>()?;
    let jsonl = config.output.join("oracle.jsonl");
    write_atomic(&jsonl, &to_jsonl(&rows)?)?;
    let mut table = tsv_header(family.n_couplings(), &["method", "observable", "value"]);
    for r in &rows {
        let g: Vec<String> = r.gamma.iter().map(|x| x.to_string()).collect();
        table.push_str(&format!("{}\t{}\tenergy\t{}\n", g.join("\t"), r.method, r.energy));
        for (k, v) in &r.observables {
            table.push_str(&format!("{}\t{}\t{k}\t{v}\n", g.join("\t"), r.method));
        }
    }
    let tsv = config.output.join("oracle.tsv");
    write_atomic(&tsv, table.as_bytes())?;
    Ok(RunSummary {
        mode: Mode::Oracle,
        output: config.output.clone(),
        files: vec![jsonl, tsv],
        steps: None,
        final_energies: Some(rows.iter().map(|r| r.energy).collect()),
    })
}

/// Outcome of one oracle-equivalence check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, err: f64, tol: f64) -> VerifyCheck {
    VerifyCheck {
        name: name.to_string(),
        passed: err <= tol,
        detail: format!("max deviation {err:.3e} (tolerance {tol:.0e})"),
    }
}

/// Cross-checks the independent exact solvers against each other.
pub fn verify() -> Result<Vec<VerifyCheck>> {
    let mut out = Vec::new();

    // Free fermions against exact diagonalization, uniform and random fields.
    let mut de = 0.0f64;
    let mut dc = 0.0f64;
    let cases: Vec<(HamiltonianFamily, Vec<f64>)> = vec![
        (HamiltonianFamily::tfi_chain(10), vec![0.5]),
        (HamiltonianFamily::tfi_chain(10), vec![1.0]),
        (HamiltonianFamily::tfi_chain(10), vec![1.7]),
        (
            HamiltonianFamily::random_tfi_chain(10),
            (0..10).map(|i| 0.1 + 0.09 * ((i * 7) % 10) as f64).collect(),
        ),
    ];
    for (family, gamma) in &cases {
        let n = family.n_sites();
        let fields = if gamma.len() == 1 { vec![gamma[0]; n] } else { gamma.clone() };
        let ff = solve_tfi_chain(&fields, family.j)?;
        let ed = exact_diagonalize(family, gamma)?;
        de = de.max((ff.energy - ed.energy).abs());
        let state = DenseState::from(ed);
        let samples = SampleSet::from_dense(&state, &CouplingVector::new(gamma.clone()))?;
        let w = samples.weights.as_ref().expect("exact weights");
        for j in 1..n {
            let exact: f64 = (0..samples.rows())
                .map(|r| w[r] * f64::from(samples.config(r)[0] * samples.config(r)[j]) / 4.0)
                .sum();
            dc = dc.max((exact - ff.szsz(0, j)).abs());
        }
    }
    out.push(check("free-fermion vs ED ground-state energy", de, 1e-9));
    out.push(check("free-fermion vs ED zz correlations", dc, 1e-9));

    // Lanczos against dense diagonalization on a 2x4 cluster.
    let family = HamiltonianFamily::square(FamilyKind::J1J2Square, 4, 2);
    let mut dl = 0.0f64;
    for j2 in [0.0, 0.5, 1.0] {
        let gamma = [j2];
        let basis = crate::exact::Basis::for_family(&family)?;
        let h = crate::exact::SparseMatrix::from_family(&family, &gamma, &basis)?;
        let dense = crate::exact::ed::dense_ground_state(&h, basis.clone())?;
        let start: Vec<f64> = (0..basis.dim()).map(|k| 1.0 + 0.01 * (k % 7) as f64).collect();
        let lz = crate::exact::ed::lanczos_ground_state(&h, basis, start)?;
        dl = dl.max((dense.energy - lz.energy).abs());
    }
    out.push(check("Lanczos vs dense on 2x4 J1-J2", dl, 1e-9));

    // Uniform and random chains through the same solver agree.
    let u = solve_tfi_chain(&[0.9; 12], 1.0)?.energy;
    let r = exact_diagonalize(&HamiltonianFamily::random_tfi_chain(12).with_j(1.0), &[0.9; 12])?.energy;
    out.push(check("uniform field via random-field family", (u - r).abs(), 1e-9));
    Ok(out)
}
