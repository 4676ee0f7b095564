//! Vision-transformer wavefunction conditioned on Hamiltonian couplings.
//!
//! The lattice is cut into patches that become tokens. Each token is
//! embedded linearly together with the couplings, passed through pre-norm
//! encoder blocks whose attention weights are learned token-mixing
//! coefficients, and the token outputs are summed into one hidden vector
//! `z`. A linear complex head gives `log psi = (w_re + i w_im) . z`.

use num_complex::Complex64;
use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradMode, MixWeights, ParameterSet, Segment, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{FamilyKind, HamiltonianFamily, LogAmplitude};
use crate::lattice::LatticeGeometry;

/// How couplings enter the token embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Embedding {
    /// Append the few scalar couplings to every spin patch.
    ConcatScalar,
    /// Patch the per-site couplings like the spins; embed both into `d/2`
    /// and concatenate.
    SplitPatches,
}

/// Constraint on the token-mixing weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    /// Weights depend only on the relative patch displacement, which makes
    /// the amplitude invariant under patch translations.
    Translation,
    /// One free weight per token pair.
    None,
}

/// Fixed sign prefactor multiplying the network amplitude.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignRule {
    #[default]
    None,
    /// `(-1)^(up spins on the even sublattice)`, exact for the unfrustrated
    /// Heisenberg antiferromagnet on a bipartite lattice. Adds `i pi` to
    /// `log psi` and leaves parameter derivatives unchanged.
    Marshall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViTConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    /// Patch side: `b` sites on chains, `b x b` on square lattices.
    pub patch: usize,
    pub embedding: Embedding,
    pub symmetry: Symmetry,
    /// Hidden width of the encoder MLP in units of `dim`.
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default)]
    pub sign: SignRule,
}

fn default_mlp_ratio() -> usize {
    4
}

impl ViTConfig {
    /// Small configuration used for the desk-scale experiments.
    pub fn desk(patch: usize) -> Self {
        ViTConfig {
            layers: 1,
            heads: 2,
            dim: 12,
            patch,
            embedding: Embedding::ConcatScalar,
            symmetry: Symmetry::Translation,
            mlp_ratio: 4,
            sign: SignRule::None,
        }
    }

    /// Checks the configuration against a Hamiltonian family.
    pub fn validate(&self, family: &HamiltonianFamily) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.dim == 0 || self.patch == 0 || self.mlp_ratio == 0 {
            return Err(invalid("model", "layers, heads, dim, patch and mlp_ratio must be positive"));
        }
        if self.dim % self.heads != 0 {
            return Err(invalid("model.dim", "must be divisible by model.heads"));
        }
        if self.embedding == Embedding::SplitPatches && self.dim % 2 != 0 {
            return Err(invalid("model.dim", "must be even for split-patches embedding"));
        }
        let (lx, ly) = family.lattice.extents();
        let divisible = match family.lattice {
            LatticeGeometry::Chain { .. } => lx % self.patch == 0,
            LatticeGeometry::Square { .. } => lx % self.patch == 0 && ly % self.patch == 0,
        };
        if !divisible {
            return Err(invalid("model.patch", "lattice extent is not divisible by the patch size"));
        }
        if self.sign == SignRule::Marshall && (lx % 2 != 0 || (ly > 1 && ly % 2 != 0)) {
            return Err(invalid("model.sign", "the Marshall rule needs even lattice extents"));
        }
        let per_site = family.kind == FamilyKind::RandomTfiChain;
        match (self.embedding, per_site) {
            (Embedding::ConcatScalar, true) => Err(invalid(
                "model.embedding",
                "per-site couplings need split-patches embedding",
            )),
            (Embedding::SplitPatches, false) => Err(invalid(
                "model.embedding",
                "split-patches embedding needs one coupling per site",
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: (Segment, Segment),
    wv: Segment,
    alpha: Segment,
    wo: Segment,
    bo: Segment,
    ln2: (Segment, Segment),
    w1: Segment,
    b1: Segment,
    w2: Segment,
    b2: Segment,
}

#[derive(Clone, Debug)]
enum EmbedSegments {
    Concat { w: Segment, b: Segment },
    Split { ws: Segment, bs: Segment, wg: Segment, bg: Segment },
}

/// Per-sample derivatives of `log psi`.
#[derive(Clone, Debug)]
pub struct Jacobians {
    pub batch: usize,
    pub n_params: usize,
    pub n_couplings: usize,
    pub log_psi: Vec<Complex64>,
    /// `Re d log psi / d theta`, `batch x P` row-major.
    pub re: Vec<f64>,
    /// `Im d log psi / d theta`, `batch x P` row-major.
    pub im: Vec<f64>,
    /// `d log psi / d gamma`, `batch x N_c` row-major.
    pub couplings: Vec<Complex64>,
}

/// The transformer wavefunction `psi_theta(sigma | gamma)`.
#[derive(Clone, Debug)]
pub struct ViT {
    pub config: ViTConfig,
    pub family: HamiltonianFamily,
    pub params: ParameterSet,
    embed: EmbedSegments,
    blocks: Vec<Block>,
    ln_final: (Segment, Segment),
    head: Segment,
    /// Sites covered by each token, in patch order.
    patches: Vec<Vec<usize>>,
    mix_index: Vec<usize>,
    mix_per_head: usize,
}

/// Samples per forward chunk; bounds tape memory.
const CHUNK: usize = 512;

impl ViT {
    /// Builds the model and draws initial weights from `seed`.
    pub fn new(config: ViTConfig, family: HamiltonianFamily, seed: u64) -> Result<Self> {
        let mut model = Self::build(config, family)?;
        model.initialize(seed);
        Ok(model)
    }

    /// Builds the model with all parameters zero.
    pub fn build(config: ViTConfig, family: HamiltonianFamily) -> Result<Self> {
        config.validate(&family)?;
        let patches = patch_sites(&family.lattice, config.patch);
        let n_tokens = patches.len();
        let p = patches[0].len();
        let d = config.dim;
        let nc = family.n_couplings();
        let hidden = config.mlp_ratio * d;
        let (mix_index, mix_per_head) = match config.symmetry {
            Symmetry::Translation => relative_index(&family.lattice, config.patch),
            Symmetry::None => ((0..n_tokens * n_tokens).collect(), n_tokens * n_tokens),
        };

        let mut ps = ParameterSet::new();
        let embed = match config.embedding {
            Embedding::ConcatScalar => EmbedSegments::Concat {
                w: ps.add("embed.w", p + nc, d),
                b: ps.add("embed.b", 1, d),
            },
            Embedding::SplitPatches => EmbedSegments::Split {
                ws: ps.add("embed.spin.w", p, d / 2),
                bs: ps.add("embed.spin.b", 1, d / 2),
                wg: ps.add("embed.coupling.w", p, d / 2),
                bg: ps.add("embed.coupling.b", 1, d / 2),
            },
        };
        let blocks = (0..config.layers)
            .map(|l| Block {
                ln1: (ps.add(format!("block{l}.ln1.gain"), 1, d), ps.add(format!("block{l}.ln1.bias"), 1, d)),
                wv: ps.add(format!("block{l}.attn.value"), d, d),
                alpha: ps.add(format!("block{l}.attn.weights"), config.heads, mix_per_head),
                wo: ps.add(format!("block{l}.attn.out.w"), d, d),
                bo: ps.add(format!("block{l}.attn.out.b"), 1, d),
                ln2: (ps.add(format!("block{l}.ln2.gain"), 1, d), ps.add(format!("block{l}.ln2.bias"), 1, d)),
                w1: ps.add(format!("block{l}.mlp.w1"), d, hidden),
                b1: ps.add(format!("block{l}.mlp.b1"), 1, hidden),
                w2: ps.add(format!("block{l}.mlp.w2"), hidden, d),
                b2: ps.add(format!("block{l}.mlp.b2"), 1, d),
            })
            .collect();
        let ln_final = (ps.add("final.ln.gain", 1, d), ps.add("final.ln.bias", 1, d));
        // Column 0 is the real part of the head, column 1 the imaginary part.
        let head = ps.add("head", d, 2);
        Ok(ViT {
            config,
            family,
            params: ps,
            embed,
            blocks,
            ln_final,
            head,
            patches,
            mix_index,
            mix_per_head,
        })
    }

    /// Weights ~ N(0, 1/fan_in), layer-norm gains 1, biases 0, mixing
    /// weights ~ N(0, 1/tokens), head ~ N(0, 1e-4) so `|psi|` starts nearly
    /// uniform.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_tokens = self.n_tokens() as f64;
        let segments = self.params.segments.clone();
        for (name, seg) in segments {
            let values = self.params.slice_mut(seg);
            if name.ends_with(".gain") {
                values.fill(1.0);
            } else if name.ends_with(".b") || name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2") {
                values.fill(0.0);
            } else {
                let std = if name == "head" {
                    1e-2
                } else if name.ends_with("attn.weights") {
                    1.0 / n_tokens.sqrt()
                } else {
                    1.0 / (seg.rows as f64).sqrt()
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                values.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.patches.len()
    }

    pub fn n_sites(&self) -> usize {
        self.family.n_sites()
    }

    pub fn n_couplings(&self) -> usize {
        self.family.n_couplings()
    }

    pub fn head_segment(&self) -> Segment {
        self.head
    }

    /// Segment of the weights that read the couplings.
    pub fn coupling_embedding(&self) -> Vec<std::ops::Range<usize>> {
        match &self.embed {
            EmbedSegments::Concat { w, .. } => {
                let p = self.patches[0].len();
                (p..p + self.n_couplings())
                    .map(|r| w.offset + r * w.cols..w.offset + (r + 1) * w.cols)
                    .collect()
            }
            EmbedSegments::Split { wg, .. } => vec![wg.range()],
        }
    }

    fn check_batch(&self, configs: &[i8], couplings: &[f64]) -> Result<usize> {
        let n = self.n_sites();
        let nc = self.n_couplings();
        if configs.is_empty() || configs.len() % n != 0 {
            return Err(Error::ConfigLength {
                expected: n,
                got: configs.len(),
            });
        }
        let b = configs.len() / n;
        if couplings.len() != b * nc && couplings.len() != nc {
            return Err(Error::CouplingMismatch {
                family: self.family.kind.name(),
                expected: b * nc,
                got: couplings.len(),
            });
        }
        Ok(b)
    }

    fn gamma_row<'a>(couplings: &'a [f64], nc: usize, s: usize) -> &'a [f64] {
        if couplings.len() == nc {
            couplings
        } else {
            &couplings[s * nc..(s + 1) * nc]
        }
    }

    /// Records the forward pass; returns the tape, the `batch x 2` output
    /// and the differentiable coupling input.
    fn record<'a>(&self, params: &'a [f64], configs: &[i8], couplings: &[f64], b: usize) -> Result<(Tape<'a>, Var, Var)> {
        let n = self.n_sites();
        let nc = self.n_couplings();
        let t = self.n_tokens();
        let p = self.patches[0].len();
        let mut tape = Tape::new(params, b);
        let (x, gamma_var) = match &self.embed {
            EmbedSegments::Concat { w, b: bias } => {
                let width = p + nc;
                let mut data = vec![0.0; b * t * width];
                for s in 0..b {
                    let sigma = &configs[s * n..(s + 1) * n];
                    let gamma = Self::gamma_row(couplings, nc, s);
                    for (k, sites) in self.patches.iter().enumerate() {
                        let row = &mut data[(s * t + k) * width..(s * t + k + 1) * width];
                        for (q, &site) in sites.iter().enumerate() {
                            row[q] = f64::from(sigma[site]);
                        }
                        row[p..].copy_from_slice(gamma);
                    }
                }
                let inp = tape.input(Tensor::from_vec(b * t, width, data)?, true)?;
                (tape.linear(inp, *w, Some(*bias))?, inp)
            }
            EmbedSegments::Split { ws, bs, wg, bg } => {
                let mut spins = vec![0.0; b * t * p];
                let mut fields = vec![0.0; b * t * p];
                for s in 0..b {
                    let sigma = &configs[s * n..(s + 1) * n];
                    let gamma = Self::gamma_row(couplings, nc, s);
                    for (k, sites) in self.patches.iter().enumerate() {
                        for (q, &site) in sites.iter().enumerate() {
                            spins[(s * t + k) * p + q] = f64::from(sigma[site]);
                            fields[(s * t + k) * p + q] = gamma[site];
                        }
                    }
                }
                let si = tape.input(Tensor::from_vec(b * t, p, spins)?, false)?;
                let gi = tape.input(Tensor::from_vec(b * t, p, fields)?, true)?;
                let es = tape.linear(si, *ws, Some(*bs))?;
                let eg = tape.linear(gi, *wg, Some(*bg))?;
                (tape.concat_cols(es, eg)?, gi)
            }
        };
        let mut x = x;
        for blk in &self.blocks {
            let a = tape.layer_norm(x, blk.ln1.0, blk.ln1.1)?;
            let v = tape.linear(a, blk.wv, None)?;
            let mix = MixWeights::relative(blk.alpha, self.config.heads, t, self.mix_index.clone(), self.mix_per_head);
            let m = tape.token_mix(v, mix)?;
            let o = tape.linear(m, blk.wo, Some(blk.bo))?;
            x = tape.add(x, o)?;
            let h = tape.layer_norm(x, blk.ln2.0, blk.ln2.1)?;
            let h = tape.linear(h, blk.w1, Some(blk.b1))?;
            let h = tape.gelu(h)?;
            let h = tape.linear(h, blk.w2, Some(blk.b2))?;
            x = tape.add(x, h)?;
        }
        let y = tape.layer_norm(x, self.ln_final.0, self.ln_final.1)?;
        let z = tape.sum_tokens(y, t)?;
        let out = tape.linear(z, self.head, None)?;
        Ok((tape, out, gamma_var))
    }

    /// `log psi` for a batch, evaluated with explicit parameters.
    pub fn log_amplitudes_with(&self, params: &[f64], configs: &[i8], couplings: &[f64]) -> Result<Vec<Complex64>> {
        let b = self.check_batch(configs, couplings)?;
        let n = self.n_sites();
        let nc = self.n_couplings();
        let shared = couplings.len() == nc && b > 1;
        let chunks: Vec<Vec<Complex64>> = (0..b)
            .step_by(CHUNK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                let end = (start + CHUNK).min(b);
                let gamma = if shared { couplings } else { &couplings[start * nc..end * nc] };
                let (tape, o, _) = self.record(params, &configs[start * n..end * n], gamma, end - start)?;
                let v = tape.value(o);
                Ok((0..end - start)
                    .map(|s| self.output(v, s, &configs[(start + s) * n..(start + s + 1) * n]))
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.concat())
    }

    /// Per-sample Jacobians of `log psi` with respect to parameters and
    /// couplings, from one forward and one two-channel backward pass per
    /// chunk.
    pub fn amplitude_jacobians(&self, configs: &[i8], couplings: &[f64]) -> Result<Jacobians> {
        let b = self.check_batch(configs, couplings)?;
        let n = self.n_sites();
        let nc = self.n_couplings();
        let pn = self.n_params();
        let shared = couplings.len() == nc && b > 1;
        let mut jac = Jacobians {
            batch: b,
            n_params: pn,
            n_couplings: nc,
            log_psi: Vec::with_capacity(b),
            re: vec![0.0; b * pn],
            im: vec![0.0; b * pn],
            couplings: vec![Complex64::new(0.0, 0.0); b * nc],
        };
        let Jacobians {
            log_psi, re, im, couplings: cj, ..
        } = &mut jac;
        log_psi.resize(b, Complex64::new(0.0, 0.0));
        re.par_chunks_mut(CHUNK * pn)
            .zip(im.par_chunks_mut(CHUNK * pn))
            .zip(cj.par_chunks_mut(CHUNK * nc))
            .zip(log_psi.par_chunks_mut(CHUNK))
            .enumerate()
            .try_for_each(|(ci, (((re, im), cj), lp))| -> Result<()> {
                let start = ci * CHUNK;
                let cb = lp.len();
                let end = start + cb;
                let gamma = if shared { couplings } else { &couplings[start * nc..end * nc] };
                let (tape, out, gvar) = self.record(&self.params.values, &configs[start * n..end * n], gamma, cb)?;
                let v = tape.value(out);
                for (s, l) in lp.iter_mut().enumerate() {
                    *l = self.output(&v, s, &configs[(start + s) * n..(start + s + 1) * n]);
                }
                let g = tape.backward(out, &Self::channel_seeds(cb), GradMode::PerSample)?;
                re.copy_from_slice(&g.params[..cb * pn]);
                im.copy_from_slice(&g.params[cb * pn..2 * cb * pn]);
                self.collect_coupling_adjoints(g.input(gvar).expect("coupling input is differentiable"), cj);
                Ok(())
            })?;
        Ok(jac)
    }

    /// Folds per-token input adjoints (one tensor per output channel) into
    /// `d log psi / d gamma` rows.
    fn collect_coupling_adjoints(&self, adj: &[Tensor], out: &mut [Complex64]) {
        let nc = self.n_couplings();
        let t = self.n_tokens();
        let p = self.patches[0].len();
        for (s, row) in out.chunks_exact_mut(nc).enumerate() {
            for (c, a) in adj.iter().enumerate() {
                let unit = if c == 0 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 1.0) };
                for k in 0..t {
                    let r = s * t + k;
                    match &self.embed {
                        EmbedSegments::Concat { .. } => {
                            for (q, slot) in row.iter_mut().enumerate() {
                                *slot += unit * a.get(r, p + q);
                            }
                        }
                        EmbedSegments::Split { .. } => {
                            for (q, &site) in self.patches[k].iter().enumerate() {
                                row[site] += unit * a.get(r, q);
                            }
                        }
                    }
                }
            }
        }
    }

    /// `log psi` and `d log psi / d gamma` per sample, without the
    /// per-sample parameter Jacobian.
    pub fn coupling_jacobians(&self, configs: &[i8], couplings: &[f64]) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let b = self.check_batch(configs, couplings)?;
        let n = self.n_sites();
        let nc = self.n_couplings();
        let shared = couplings.len() == nc && b > 1;
        let mut log_psi = vec![Complex64::new(0.0, 0.0); b];
        let mut cj = vec![Complex64::new(0.0, 0.0); b * nc];
        cj.par_chunks_mut(CHUNK * nc)
            .zip(log_psi.par_chunks_mut(CHUNK))
            .enumerate()
            .try_for_each(|(ci, (cj, lp))| -> Result<()> {
                let start = ci * CHUNK;
                let cb = lp.len();
                let end = start + cb;
                let gamma = if shared { couplings } else { &couplings[start * nc..end * nc] };
                let (tape, out, gvar) = self.record(&self.params.values, &configs[start * n..end * n], gamma, cb)?;
                let v = tape.value(out);
                for (s, l) in lp.iter_mut().enumerate() {
                    *l = self.output(&v, s, &configs[(start + s) * n..(start + s + 1) * n]);
                }
                let g = tape.backward(out, &Self::channel_seeds(cb), GradMode::Summed)?;
                self.collect_coupling_adjoints(g.input(gvar).expect("coupling input is differentiable"), cj);
                Ok(())
            })?;
        Ok((log_psi, cj))
    }

    /// Head output of sample `s` plus the fixed sign phase.
    fn output(&self, v: &Tensor, s: usize, sigma: &[i8]) -> Complex64 {
        let mut phase = v.get(s, 1);
        if self.config.sign == SignRule::Marshall {
            let lattice = &self.family.lattice;
            let up_even = (0..sigma.len())
                .filter(|&i| sigma[i] > 0 && {
                    let (x, y) = lattice.coords(i);
                    (x + y) % 2 == 0
                })
                .count();
            if up_even % 2 == 1 {
                phase += std::f64::consts::PI;
            }
        }
        Complex64::new(v.get(s, 0), phase)
    }

    fn channel_seeds(cb: usize) -> Vec<Tensor> {
        (0..2)
            .map(|c| {
                let mut s = Tensor::zeros(cb, 2);
                (0..cb).for_each(|r| s.data[r * 2 + c] = 1.0);
                s
            })
            .collect()
    }

    /// `d log psi / d theta` for one configuration.
    pub fn grad_parameters(&self, sigma: &[i8], gamma: &[f64]) -> Result<Vec<Complex64>> {
        let j = self.amplitude_jacobians(sigma, gamma)?;
        Ok(j.re.iter().zip(&j.im).map(|(&a, &b)| Complex64::new(a, b)).collect())
    }

    /// `d log psi / d gamma` for one configuration.
    pub fn grad_inputs(&self, sigma: &[i8], gamma: &[f64]) -> Result<Vec<Complex64>> {
        Ok(self.amplitude_jacobians(sigma, gamma)?.couplings)
    }
}

impl LogAmplitude for ViT {
    fn log_amplitudes(&self, configs: &[i8], couplings: &[f64]) -> Result<Vec<Complex64>> {
        self.log_amplitudes_with(&self.params.values, configs, couplings)
    }
}

/// Sites of each patch, tokens ordered row-major over the patch grid.
fn patch_sites(lattice: &LatticeGeometry, b: usize) -> Vec<Vec<usize>> {
    match *lattice {
        LatticeGeometry::Chain { sites } => (0..sites / b).map(|t| (t * b..(t + 1) * b).collect()).collect(),
        LatticeGeometry::Square { lx, ly } => {
            let (nx, ny) = (lx / b, ly / b);
            let mut out = Vec::with_capacity(nx * ny);
            for ty in 0..ny {
                for tx in 0..nx {
                    let mut sites = Vec::with_capacity(b * b);
                    for v in 0..b {
                        for u in 0..b {
                            sites.push(lattice.index(tx * b + u, ty * b + v));
                        }
                    }
                    out.push(sites);
                }
            }
            out
        }
    }
}

/// Relative-displacement table on the periodic patch grid.
fn relative_index(lattice: &LatticeGeometry, b: usize) -> (Vec<usize>, usize) {
    let (lx, ly) = lattice.extents();
    let (nx, ny) = match lattice {
        LatticeGeometry::Chain { .. } => (lx / b, 1),
        LatticeGeometry::Square { .. } => (lx / b, ly / b),
    };
    let t = nx * ny;
    let mut index = Vec::with_capacity(t * t);
    for i in 0..t {
        for j in 0..t {
            let dx = (j % nx + nx - i % nx) % nx;
            let dy = (j / nx + ny - i / nx) % ny;
            index.push(dy * nx + dx);
        }
    }
    (index, t)
}
