//! Ensemble stochastic reconfiguration.
//!
//! For each system `k` the centered log-derivatives `O - <O>_k` and local
//! energies `E_L - <E_L>_k` give the energy gradient
//! `G_k = 2 Re <(E_L - E)^* (O - <O>)>` and the metric
//! `S_k = Re <(O - <O>)^dagger (O - <O>)>`. The ensemble uses the equal
//! weight average over systems, and the update is
//! `delta = -eta (S + lambda I)^{-1} G`.
//!
//! Both averages are built from one factor `Y` with `2M` rows (real and
//! imaginary parts, each row scaled by `sqrt(w_r / R)`), so `S = Y^T Y` and
//! `G = 2 Y^T e`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::gemm;
use crate::couplings::CouplingVector;
use crate::error::{invalid, Error, Result};
use crate::hamiltonian::HamiltonianFamily;
use crate::sampler::{SampleSet, Sampler};
use crate::vit::{Jacobians, ViT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMode {
    /// Factor the `P x P` system.
    Direct,
    /// Factor the `2M x 2M` Gram system of centered Jacobians.
    Kernel,
    /// Whichever system is smaller.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SRConfig {
    pub learning_rate: f64,
    pub diag_shift: f64,
    pub steps: usize,
    #[serde(default = "default_solver")]
    pub solver: SolverMode,
}

fn default_solver() -> SolverMode {
    SolverMode::Auto
}

impl SRConfig {
    pub fn new(learning_rate: f64, diag_shift: f64, steps: usize) -> Self {
        SRConfig {
            learning_rate,
            diag_shift,
            steps,
            solver: SolverMode::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("sr.learning_rate", "must be positive"));
        }
        if !(self.diag_shift > 0.0 && self.diag_shift.is_finite()) {
            return Err(invalid("sr.diag_shift", "must be positive"));
        }
        Ok(())
    }
}

/// Ensemble gradient with its per-system parts.
#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub total: Vec<f64>,
    /// `G(gamma_k)` for each system.
    pub per_system: Vec<Vec<f64>>,
}

/// Ensemble metric in factor form, `S = Y^T Y`.
#[derive(Clone, Debug)]
pub struct QgtEstimate {
    /// `rows x n_params`, row-major.
    pub factor: Vec<f64>,
    pub rows: usize,
    pub n_params: usize,
}

impl QgtEstimate {
    /// Dense `P x P` matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        const BLOCK: usize = 192;
        let p = self.n_params;
        let mut s = vec![0.0; p * p];
        // Only blocks on or above the diagonal; the rest is mirrored.
        for i0 in (0..p).step_by(BLOCK) {
            let bi = BLOCK.min(p - i0);
            for j0 in (i0..p).step_by(BLOCK) {
                let bj = BLOCK.min(p - j0);
                // SAFETY: all offsets and strides stay inside `factor`
                // (rows x p) and `s` (p x p).
                unsafe {
                    matrixmultiply::dgemm(
                        bi,
                        self.rows,
                        bj,
                        1.0,
                        self.factor.as_ptr().add(i0),
                        1,
                        p as isize,
                        self.factor.as_ptr().add(j0),
                        p as isize,
                        1,
                        0.0,
                        s.as_mut_ptr().add(i0 * p + j0),
                        p as isize,
                        1,
                    );
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                s[i * p + j] = s[j * p + i];
            }
        }
        DMatrix::from_vec(p, p, s)
    }

    /// `S x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut yx = vec![0.0; self.rows];
        gemm(self.rows, self.n_params, 1, 1.0, &self.factor, false, x, false, 0.0, &mut yx);
        let mut out = vec![0.0; self.n_params];
        gemm(self.n_params, self.rows, 1, 1.0, &self.factor, true, &yx, false, 0.0, &mut out);
        out
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn check_aligned(samples: &SampleSet, jac: &Jacobians) -> Result<()> {
    if jac.batch != samples.rows() || samples.per_system == 0 {
        return Err(invalid(
            "jacobians",
            format!("{} Jacobian rows for {} samples", jac.batch, samples.rows()),
        ));
    }
    Ok(())
}

/// Per-system weighted means of the Jacobian columns (real, imaginary).
fn column_means(samples: &SampleSet, jac: &Jacobians, k: usize) -> (Vec<f64>, Vec<f64>) {
    let p = jac.n_params;
    let mut re = vec![0.0; p];
    let mut im = vec![0.0; p];
    for r in samples.system_rows(k) {
        let w = samples.weight(r);
        re.iter_mut().zip(&jac.re[r * p..(r + 1) * p]).for_each(|(m, v)| *m += w * v);
        im.iter_mut().zip(&jac.im[r * p..(r + 1) * p]).for_each(|(m, v)| *m += w * v);
    }
    (re, im)
}

/// Centered, weighted QGT factor.
pub fn estimate_qgt(samples: &SampleSet, jac: &Jacobians) -> Result<QgtEstimate> {
    check_aligned(samples, jac)?;
    let p = jac.n_params;
    let m = samples.rows();
    let r_inv = 1.0 / samples.systems as f64;
    let mut factor = vec![0.0; 2 * m * p];
    for k in 0..samples.systems {
        let (mre, mim) = column_means(samples, jac, k);
        for r in samples.system_rows(k) {
            let s = (samples.weight(r) * r_inv).sqrt();
            let src_re = &jac.re[r * p..(r + 1) * p];
            let src_im = &jac.im[r * p..(r + 1) * p];
            let (top, bottom) = factor.split_at_mut(m * p);
            let dst_re = &mut top[r * p..(r + 1) * p];
            let dst_im = &mut bottom[r * p..(r + 1) * p];
            for a in 0..p {
                dst_re[a] = s * (src_re[a] - mre[a]);
                dst_im[a] = s * (src_im[a] - mim[a]);
            }
        }
    }
    Ok(QgtEstimate {
        factor,
        rows: 2 * m,
        n_params: p,
    })
}

/// Per-system mean local energies.
pub fn mean_energies(samples: &SampleSet, e_loc: &[Complex64]) -> Vec<Complex64> {
    (0..samples.systems)
        .map(|k| {
            samples
                .system_rows(k)
                .map(|r| e_loc[r] * samples.weight(r))
                .sum::<Complex64>()
        })
        .collect()
}

/// `G_k = 2 Re <(E_L - E_k)^* (O - <O>_k)>`, averaged with weight `1/R`.
pub fn estimate_gradient(samples: &SampleSet, e_loc: &[Complex64], jac: &Jacobians) -> Result<GradientEstimate> {
    check_aligned(samples, jac)?;
    if e_loc.len() != samples.rows() {
        return Err(invalid("local_energies", "length does not match the samples"));
    }
    if let Some(r) = e_loc.iter().position(|e| !e.re.is_finite() || !e.im.is_finite()) {
        return Err(Error::NonFiniteRatio {
            sample: r,
            delta: e_loc[r].re,
        });
    }
    let p = jac.n_params;
    let means = mean_energies(samples, e_loc);
    let mut per_system = Vec::with_capacity(samples.systems);
    let mut total = vec![0.0; p];
    for k in 0..samples.systems {
        let (mre, mim) = column_means(samples, jac, k);
        let mut g = vec![0.0; p];
        for r in samples.system_rows(k) {
            let w = samples.weight(r);
            let de = e_loc[r] - means[k];
            let (a, b) = (2.0 * w * de.re, 2.0 * w * de.im);
            let re = &jac.re[r * p..(r + 1) * p];
            let im = &jac.im[r * p..(r + 1) * p];
            for q in 0..p {
                g[q] += a * (re[q] - mre[q]) + b * (im[q] - mim[q]);
            }
        }
        total.iter_mut().zip(&g).for_each(|(t, v)| *t += v / samples.systems as f64);
        per_system.push(g);
    }
    Ok(GradientEstimate { total, per_system })
}

/// `delta = -eta (S + lambda I)^{-1} G`.
pub fn sr_step(qgt: &QgtEstimate, gradient: &[f64], config: &SRConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let p = qgt.n_params;
    if gradient.len() != p {
        return Err(invalid("gradient", "length does not match the metric"));
    }
    let lambda = config.diag_shift;
    let kernel = match config.solver {
        SolverMode::Direct => false,
        SolverMode::Kernel => true,
        SolverMode::Auto => qgt.rows < p,
    };
    let rhs: Vec<f64> = gradient.iter().map(|g| -config.learning_rate * g).collect();
    let scale = norm(&rhs);
    if scale == 0.0 {
        return Ok(vec![0.0; p]);
    }
    let solver = ShiftedSolver::new(qgt, lambda, kernel)?;
    let mut delta = solver.solve(&rhs);
    // Iterative refinement with the same factorization; cheap next to the
    // factorization and keeps the residual at the solver floor when the
    // shifted metric is poorly conditioned.
    let mut res = residual(qgt, &delta, &rhs, lambda);
    for _ in 0..3 {
        if norm(&res) <= 1e-11 * scale {
            break;
        }
        let corr = solver.solve(&res);
        delta.iter_mut().zip(&corr).for_each(|(d, c)| *d -= c);
        res = residual(qgt, &delta, &rhs, lambda);
    }
    let r = norm(&res);
    if !(r <= 1e-8 * scale) {
        return Err(Error::LinearSolve {
            reason: format!("relative residual {:.3e} above 1e-8", r / scale),
            condition: solver.condition,
        });
    }
    Ok(delta)
}

/// `(S + lambda I) x - rhs`
fn residual(qgt: &QgtEstimate, x: &[f64], rhs: &[f64], lambda: f64) -> Vec<f64> {
    let sx = qgt.apply(x);
    sx.iter()
        .zip(x)
        .zip(rhs)
        .map(|((s, xi), b)| s + lambda * xi - b)
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Factorized `S + lambda I`, either directly or through the Woodbury
/// identity `(Y^T Y + l I)^{-1} b = (b - Y^T (Y Y^T + l I)^{-1} Y b) / l`.
struct ShiftedSolver<'a> {
    qgt: &'a QgtEstimate,
    lambda: f64,
    kernel: bool,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Ratio of the largest to smallest Cholesky pivot, squared.
    condition: f64,
}

impl<'a> ShiftedSolver<'a> {
    fn new(qgt: &'a QgtEstimate, lambda: f64, kernel: bool) -> Result<Self> {
        let mut a = if kernel {
            let m = qgt.rows;
            let mut k = vec![0.0; m * m];
            gemm(m, qgt.n_params, m, 1.0, &qgt.factor, false, &qgt.factor, true, 0.0, &mut k);
            let mut km = DMatrix::from_vec(m, m, k);
            symmetrize(&mut km);
            km
        } else {
            qgt.dense()
        };
        for i in 0..a.nrows() {
            a[(i, i)] += lambda;
        }
        let chol = a.cholesky().ok_or_else(|| Error::LinearSolve {
            reason: "shifted metric is not positive definite".into(),
            condition: f64::INFINITY,
        })?;
        let d = chol.l_dirty().diagonal();
        let condition = (d.max() / d.min()).powi(2);
        Ok(ShiftedSolver {
            qgt,
            lambda,
            kernel,
            chol,
            condition,
        })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        if !self.kernel {
            return self.chol.solve(&DVector::from_column_slice(rhs)).iter().copied().collect();
        }
        let (m, p) = (self.qgt.rows, self.qgt.n_params);
        let mut yb = vec![0.0; m];
        gemm(m, p, 1, 1.0, &self.qgt.factor, false, rhs, false, 0.0, &mut yb);
        let a = self.chol.solve(&DVector::from_vec(yb));
        let mut yta = vec![0.0; p];
        gemm(p, m, 1, 1.0, &self.qgt.factor, true, a.as_slice(), false, 0.0, &mut yta);
        rhs.iter().zip(&yta).map(|(b, v)| (b - v) / self.lambda).collect()
    }
}

/// Telemetry of one optimization step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: usize,
    /// Ensemble loss: mean of the per-system energies.
    pub loss: f64,
    pub energy: Vec<f64>,
    pub variance: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub update_norm: f64,
    pub wall_time: f64,
}

/// Drives sampling, estimation and parameter updates.
pub struct Trainer {
    pub model: ViT,
    pub couplings: Vec<CouplingVector>,
    pub sampler: Sampler,
    pub config: SRConfig,
    pub step: usize,
    /// Initial loss and spread for the divergence guard.
    pub guard: Option<(f64, f64)>,
}

impl Trainer {
    pub fn new(model: ViT, couplings: Vec<CouplingVector>, config: SRConfig, sampler: Sampler) -> Result<Self> {
        config.validate()?;
        for c in &couplings {
            model.family.check_couplings(c)?;
        }
        if sampler.systems() != couplings.len() {
            return Err(invalid("couplings", "sampler and ensemble sizes differ"));
        }
        Ok(Trainer {
            model,
            couplings,
            sampler,
            config,
            step: 0,
            guard: None,
        })
    }

    pub fn family(&self) -> &HamiltonianFamily {
        &self.model.family
    }

    /// Samples, local energies and Jacobians at the current parameters.
    pub fn estimate(&mut self) -> Result<(SampleSet, Vec<Complex64>, Jacobians)> {
        let samples = self.sampler.sample(&self.model, &self.couplings)?;
        let rows = samples.row_couplings(&self.couplings);
        let e_loc = self
            .model
            .family
            .local_energies(&rows, &samples.configs, &samples.log_psi, &self.model)?;
        let jac = self.model.amplitude_jacobians(&samples.configs, &rows)?;
        Ok((samples, e_loc, jac))
    }

    /// One SR step.
    pub fn step(&mut self) -> Result<RunRecord> {
        let t0 = Instant::now();
        let (samples, e_loc, jac) = self.estimate()?;
        let means = mean_energies(&samples, &e_loc);
        let variance: Vec<f64> = (0..samples.systems)
            .map(|k| {
                samples
                    .system_rows(k)
                    .map(|r| samples.weight(r) * (e_loc[r] - means[k]).norm_sqr())
                    .sum()
            })
            .collect();
        let energy: Vec<f64> = means.iter().map(|m| m.re).collect();
        let loss = energy.iter().sum::<f64>() / energy.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { primitive: "local_energy" });
        }
        match self.guard {
            None => {
                let spread = e_loc.iter().map(|e| (e.re - loss).powi(2)).sum::<f64>() / e_loc.len() as f64;
                self.guard = Some((loss, spread.sqrt().max(1e-12)));
            }
            Some((l0, s0)) => {
                let limit = l0 + 10.0 * s0;
                if loss > limit {
                    return Err(Error::Diverged {
                        step: self.step,
                        loss,
                        limit,
                    });
                }
            }
        }
        let grad = estimate_gradient(&samples, &e_loc, &jac)?;
        let qgt = estimate_qgt(&samples, &jac)?;
        let delta = sr_step(&qgt, &grad.total, &self.config)?;
        self.model
            .params
            .values
            .iter_mut()
            .zip(&delta)
            .for_each(|(t, d)| *t += d);
        let record = RunRecord {
            step: self.step,
            loss,
            energy,
            variance,
            acceptance: samples.acceptance.clone(),
            update_norm: norm(&delta),
            wall_time: t0.elapsed().as_secs_f64(),
        };
        self.step += 1;
        Ok(record)
    }

    /// Runs until `config.steps` steps are done, calling `on_step` after
    /// each one.
    pub fn run<F>(&mut self, mut on_step: F) -> Result<()>
    where
        F: FnMut(&RunRecord, &Trainer) -> Result<()>,
    {
        while self.step < self.config.steps {
            let rec = self.step()?;
            on_step(&rec, self)?;
        }
        Ok(())
    }
}

/// Trains `model` on the ensemble and returns it with the step records.
pub fn optimize(
    model: ViT,
    couplings: Vec<CouplingVector>,
    config: SRConfig,
    sampler: crate::sampler::SamplerConfig,
) -> Result<(ViT, Vec<RunRecord>)> {
    let s = Sampler::new(sampler, &model.family, couplings.len())?;
    let mut trainer = Trainer::new(model, couplings, config, s)?;
    let mut records = Vec::new();
    trainer.run(|r, _| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok((trainer.model, records))
}
