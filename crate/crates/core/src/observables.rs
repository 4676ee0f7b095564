//! Estimators for correlation functions, order parameters, disorder
//! averages and the V-score.
//!
//! Every estimator works on one system `k` of a [`SampleSet`]. Monte Carlo
//! sets get blocked error bars (contiguous blocks of each system's rows,
//! which follow the chains); exactly weighted sets return zero error.
//! Spin operators are `S = sigma / 2`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::couplings::CouplingVector;
use crate::error::{invalid, Error, Result};
use crate::hamiltonian::LogAmplitude;
use crate::lattice::LatticeGeometry;
use crate::sampler::SampleSet;
use crate::stats::{self, Estimate};

/// Weighted mean of per-row values of system `k`.
pub fn system_mean(samples: &SampleSet, k: usize, values: &[f64]) -> Estimate {
    let rows = samples.system_rows(k);
    assert_eq!(values.len(), rows.len(), "one value per row of the system");
    match &samples.weights {
        Some(w) => Estimate::exact(values.iter().zip(&w[rows]).map(|(v, w)| v * w).sum()),
        None => stats::blocked_mean(values, samples.blocks()),
    }
}

/// Weighted statistic of system `k`; jackknife over blocks for Monte Carlo
/// sets. `stat` gets `(row index within the system, weight)` pairs whose
/// weights sum to one.
pub fn system_statistic<F>(samples: &SampleSet, k: usize, stat: F) -> Estimate
where
    F: Fn(&mut dyn Iterator<Item = (usize, f64)>) -> f64,
{
    let n = samples.per_system;
    match &samples.weights {
        Some(w) => {
            let w = &w[samples.system_rows(k)];
            Estimate::exact(stat(&mut (0..n).map(|i| (i, w[i]))))
        }
        None => stats::jackknife(n, samples.blocks(), |it| {
            let idx: Vec<usize> = it.collect();
            let w = 1.0 / idx.len() as f64;
            stat(&mut idx.into_iter().map(|i| (i, w)))
        }),
    }
}

fn check_system(samples: &SampleSet, k: usize) -> Result<()> {
    if k >= samples.systems {
        return Err(invalid("system", format!("index {k} out of {} systems", samples.systems)));
    }
    Ok(())
}

fn chain_length(samples: &SampleSet) -> Result<usize> {
    let n = samples.n_sites;
    if n % 2 != 0 {
        return Err(invalid("n_sites", format!("half-chain correlator needs even N, got {n}")));
    }
    Ok(n)
}

/// `(1/N) sum_i <S^z_i S^z_{i+N/2}>` on a periodic chain.
pub fn zz_long_range_m2(samples: &SampleSet, k: usize) -> Result<Estimate> {
    check_system(samples, k)?;
    let n = chain_length(samples)?;
    let values: Vec<f64> = samples
        .system_rows(k)
        .map(|r| {
            let s = samples.config(r);
            (0..n).map(|i| f64::from(s[i] * s[(i + n / 2) % n])).sum::<f64>() / (4.0 * n as f64)
        })
        .collect();
    Ok(system_mean(samples, k, &values))
}

/// Translation-averaged `C(r) = (1/N) sum_i <S^z_i S^z_{i+r}>` on a
/// periodic chain for `r = 0..N`.
pub fn zz_profile(samples: &SampleSet, k: usize) -> Result<Vec<Estimate>> {
    check_system(samples, k)?;
    let n = samples.n_sites;
    let rows = samples.system_rows(k);
    let mut per_r = vec![Vec::with_capacity(rows.len()); n];
    for r in rows {
        let s = samples.config(r);
        for (d, col) in per_r.iter_mut().enumerate() {
            col.push((0..n).map(|i| f64::from(s[i] * s[(i + d) % n])).sum::<f64>() / (4.0 * n as f64));
        }
    }
    Ok(per_r.iter().map(|v| system_mean(samples, k, v)).collect())
}

/// `m^2 = (1/N^2) sum_ij <S^z_i S^z_j>`, i.e. `(1/N) sum_r C(r)`.
pub fn zz_m2(samples: &SampleSet, k: usize) -> Result<Estimate> {
    check_system(samples, k)?;
    let n = samples.n_sites as f64;
    let values: Vec<f64> = samples
        .system_rows(k)
        .map(|r| {
            let m: f64 = samples.config(r).iter().map(|&s| f64::from(s)).sum();
            m * m / (4.0 * n * n)
        })
        .collect();
    Ok(system_mean(samples, k, &values))
}

/// Disorder average of per-realization profiles. The error is the spread
/// over realizations, which dominates the per-realization sampling error.
pub fn disorder_average(profiles: &[Vec<Estimate>]) -> Result<Vec<Estimate>> {
    let first = profiles.first().ok_or_else(|| invalid("realizations", "empty realization set"))?;
    if profiles.iter().any(|p| p.len() != first.len()) {
        return Err(invalid("realizations", "profiles have different lengths"));
    }
    let r = profiles.len() as f64;
    Ok((0..first.len())
        .map(|d| {
            let v: Vec<f64> = profiles.iter().map(|p| p[d].value).collect();
            let sampling = profiles.iter().map(|p| p[d].error.powi(2)).sum::<f64>().sqrt() / r;
            let spread = (stats::variance(&v) / r).sqrt();
            Estimate {
                value: stats::mean(&v),
                error: if profiles.len() > 1 { spread } else { sampling },
            }
        })
        .collect())
}

/// `m^2_{h0} = (1/N) sum_r C_av(r)` over a full profile `r = 0..N`.
pub fn m2_from_profile(profile: &[Estimate]) -> Estimate {
    let n = profile.len() as f64;
    Estimate {
        value: profile.iter().map(|e| e.value).sum::<f64>() / n,
        error: profile.iter().map(|e| e.error).sum::<f64>() / n,
    }
}

/// Power-law exponent of a periodic-chain profile, `C(r) ~ d(r)^(-eta)`
/// with the chord distance `d(r) = (N/pi) sin(pi r / N)`, fitted by least
/// squares in log-log over `r = 1..=N/2`. Returns `(eta, standard error)`.
pub fn decay_exponent(profile: &[Estimate]) -> Result<(f64, f64)> {
    let n = profile.len();
    if n < 6 {
        return Err(invalid("profile", "need at least 6 distances for a power-law fit"));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (r, e) in profile.iter().enumerate().take(n / 2 + 1).skip(1) {
        if e.value <= 0.0 {
            return Err(invalid("profile", format!("non-positive correlation at r = {r}")));
        }
        let chord = n as f64 / std::f64::consts::PI * (std::f64::consts::PI * r as f64 / n as f64).sin();
        x.push(chord.ln());
        y.push(e.value.ln());
    }
    let (_, slope, se) = stats::linear_fit(&x, &y);
    Ok((-slope, se))
}

/// Per-row isotropic correlators `S_i . S_j` of one system, from the
/// diagonal `zz` part and amplitude ratios of exchanged configurations.
#[derive(Clone, Debug)]
pub struct SpinCorrelations {
    pub n_sites: usize,
    /// `rows x N x N`; `values[(r * N + i) * N + j]`.
    pub values: Vec<f64>,
    system: usize,
}

impl SpinCorrelations {
    pub fn compute<A: LogAmplitude + ?Sized>(
        model: &A,
        samples: &SampleSet,
        k: usize,
        gamma: &CouplingVector,
    ) -> Result<Self> {
        check_system(samples, k)?;
        let n = samples.n_sites;
        let rows: Vec<usize> = samples.system_rows(k).collect();
        let mut values = vec![0.0; rows.len() * n * n];
        let mut swapped = Vec::new();
        let mut slots = Vec::new();
        for (q, &r) in rows.iter().enumerate() {
            let s = samples.config(r);
            for i in 0..n {
                values[(q * n + i) * n + i] = 0.75;
                for j in i + 1..n {
                    let zz = f64::from(s[i] * s[j]) / 4.0;
                    values[(q * n + i) * n + j] = zz;
                    values[(q * n + j) * n + i] = zz;
                    if s[i] != s[j] {
                        let mut t = s.to_vec();
                        t.swap(i, j);
                        swapped.extend_from_slice(&t);
                        slots.push((q, i, j));
                    }
                }
            }
        }
        if !slots.is_empty() {
            let lp = model.log_amplitudes(&swapped, gamma)?;
            for (&(q, i, j), l) in slots.iter().zip(&lp) {
                let ratio = (l - samples.log_psi[rows[q]]).exp();
                if !ratio.re.is_finite() {
                    return Err(Error::NonFiniteRatio {
                        sample: rows[q],
                        delta: ratio.re,
                    });
                }
                // (S+S- + S-S+)/2 moves the pair to the exchanged state
                // with matrix element 1/2.
                let xy = 0.5 * ratio.re;
                values[(q * n + i) * n + j] += xy;
                values[(q * n + j) * n + i] += xy;
            }
        }
        Ok(SpinCorrelations { n_sites: n, values, system: k })
    }

    /// `C(k) = (1/N) sum_ij e^{i k (r_j - r_i)} <S_i . S_j>`, which equals
    /// `sum_r e^{i k r} <S_0 . S_r>` for translation-invariant states.
    pub fn structure_factor(&self, samples: &SampleSet, lattice: &LatticeGeometry, kvec: (f64, f64)) -> Result<Estimate> {
        let n = self.n_sites;
        check_momentum(lattice, kvec)?;
        let phase = phase_table(lattice, kvec);
        let rows = samples.per_system;
        let values: Vec<f64> = (0..rows)
            .map(|q| {
                let block = &self.values[q * n * n..(q + 1) * n * n];
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += (phase[j] * phase[i].conj()).re * block[i * n + j];
                    }
                }
                acc / n as f64
            })
            .collect();
        Ok(system_mean(samples, self.system, &values))
    }

    /// `C(pi, pi) / N`.
    pub fn m2_neel(&self, samples: &SampleSet, lattice: &LatticeGeometry) -> Result<Estimate> {
        let pi = std::f64::consts::PI;
        let c = self.structure_factor(samples, lattice, (pi, pi))?;
        let n = self.n_sites as f64;
        Ok(Estimate {
            value: c.value / n,
            error: c.error / n,
        })
    }

    /// `[C(0, pi) + C(pi, 0)] / (2N)`.
    pub fn m2_stripe(&self, samples: &SampleSet, lattice: &LatticeGeometry) -> Result<Estimate> {
        let pi = std::f64::consts::PI;
        let n = self.n_sites;
        check_momentum(lattice, (0.0, pi))?;
        check_momentum(lattice, (pi, 0.0))?;
        let (px, py) = (phase_table(lattice, (pi, 0.0)), phase_table(lattice, (0.0, pi)));
        let values: Vec<f64> = (0..samples.per_system)
            .map(|q| {
                let block = &self.values[q * n * n..(q + 1) * n * n];
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let w = (px[j] * px[i].conj()).re + (py[j] * py[i].conj()).re;
                        acc += w * block[i * n + j];
                    }
                }
                acc / (2.0 * (n * n) as f64)
            })
            .collect();
        Ok(system_mean(samples, self.system, &values))
    }
}

fn check_momentum(lattice: &LatticeGeometry, (kx, ky): (f64, f64)) -> Result<()> {
    let (lx, ly) = lattice.extents();
    let on_grid = |k: f64, l: usize| {
        let m = k * l as f64 / (2.0 * std::f64::consts::PI);
        (m - m.round()).abs() < 1e-9
    };
    if !on_grid(kx, lx) || !on_grid(ky, ly) {
        return Err(invalid("k", format!("({kx}, {ky}) is not on the reciprocal lattice")));
    }
    Ok(())
}

fn phase_table(lattice: &LatticeGeometry, (kx, ky): (f64, f64)) -> Vec<Complex64> {
    (0..lattice.n_sites())
        .map(|i| {
            let (x, y) = lattice.coords(i);
            Complex64::from_polar(1.0, kx * x as f64 + ky * y as f64)
        })
        .collect()
}

/// Dimer order parameter `d^2 = [D_x(pi, 0) + D_y(0, pi)] / (2N)` from
/// the z-only connected bond correlator with the factor 9 that restores
/// the isotropic normalization.
pub fn dimer_order_d2(samples: &SampleSet, k: usize, lattice: &LatticeGeometry) -> Result<Estimate> {
    check_system(samples, k)?;
    if !matches!(lattice, LatticeGeometry::Square { .. }) {
        return Err(invalid("lattice", "dimer order needs a square lattice"));
    }
    let pi = std::f64::consts::PI;
    let n = lattice.n_sites();
    // Per row: F_alpha = sum_j e^{i k r_j} B_alpha(j), B = S^z_j S^z_{j+alpha}.
    let mut fx = Vec::with_capacity(samples.per_system);
    let mut fy = Vec::with_capacity(samples.per_system);
    let (phx, phy) = (phase_table(lattice, (pi, 0.0)), phase_table(lattice, (0.0, pi)));
    for r in samples.system_rows(k) {
        let s = samples.config(r);
        let mut ax = Complex64::new(0.0, 0.0);
        let mut ay = Complex64::new(0.0, 0.0);
        for j in 0..n {
            ax += phx[j] * f64::from(s[j] * s[lattice.translate(j, 1, 0)]) / 4.0;
            ay += phy[j] * f64::from(s[j] * s[lattice.translate(j, 0, 1)]) / 4.0;
        }
        fx.push(ax);
        fy.push(ay);
    }
    Ok(system_statistic(samples, k, |it| {
        let mut sq = 0.0;
        let mut mx = Complex64::new(0.0, 0.0);
        let mut my = Complex64::new(0.0, 0.0);
        for (q, w) in it {
            sq += w * (fx[q].norm_sqr() + fy[q].norm_sqr());
            mx += fx[q] * w;
            my += fy[q] * w;
        }
        9.0 * (sq - mx.norm_sqr() - my.norm_sqr()) / (2.0 * (n * n) as f64)
    }))
}

/// Mean local energy of system `k`.
pub fn energy(samples: &SampleSet, k: usize, e_loc: &[Complex64]) -> Result<Estimate> {
    check_system(samples, k)?;
    let vals: Vec<f64> = e_loc[samples.system_rows(k)].iter().map(|e| e.re).collect();
    Ok(system_mean(samples, k, &vals))
}

/// `N Var(H) / <H>^2` with `Var(H) = <|E_L|^2> - |<E_L>|^2`, which is
/// `<H^dagger H> - <H>^2` and equals the energy variance for Hermitian `H`.
pub fn v_score(samples: &SampleSet, k: usize, e_loc: &[Complex64]) -> Result<Estimate> {
    check_system(samples, k)?;
    let e = &e_loc[samples.system_rows(k)];
    let mean_all: Complex64 = match &samples.weights {
        Some(w) => e.iter().zip(&w[samples.system_rows(k)]).map(|(x, w)| x * w).sum(),
        None => e.iter().sum::<Complex64>() / e.len() as f64,
    };
    if mean_all.norm() == 0.0 {
        return Err(invalid("energy", "V-score is undefined for zero energy"));
    }
    let n = samples.n_sites as f64;
    Ok(system_statistic(samples, k, |it| {
        let mut m = Complex64::new(0.0, 0.0);
        let mut sq = 0.0;
        for (q, w) in it {
            m += e[q] * w;
            sq += w * e[q].norm_sqr();
        }
        n * (sq - m.norm_sqr()).max(0.0) / (m.re * m.re)
    }))
}

/// Row of an exported observable table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableRow {
    pub gamma: Vec<f64>,
    pub observable: String,
    pub value: f64,
    pub error: f64,
}
