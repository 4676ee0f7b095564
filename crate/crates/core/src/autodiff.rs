//! A small reverse-mode differentiation tape for the transformer
//! wavefunction.
//!
//! Values are dense row-major matrices. A batch of `B` samples is laid out
//! so that every node holds `B * g` rows, `g` consecutive rows per sample
//! (`g` is the number of tokens, or 1 after pooling). Backward passes run
//! several seed channels at once and can keep parameter gradients per
//! sample, which is what the per-sample Jacobian needs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(
                "tensor",
                format!("{} values do not fill a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// `C = alpha * op(A) op(B) + beta * C` on row-major slices, where `op(A)`
/// is `m x k` and `op(B)` is `k x n`. With `ta`, `a` stores `A^T` (`k x m`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays
    // inside the slices; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A block of the flat parameter vector viewed as a `rows x cols` matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat real parameter vector with a named index of its segments.
///
/// Segments are laid out in the order they were added; that order is the
/// flattening order stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub values: Vec<f64>,
    pub segments: Vec<(String, Segment)>,
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet {
            values: Vec::new(),
            segments: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Segment {
        let seg = Segment {
            offset: self.values.len(),
            rows,
            cols,
        };
        self.values.resize(self.values.len() + rows * cols, 0.0);
        self.segments.push((name.into(), seg));
        seg
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<Segment> {
        self.segments.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    pub fn slice(&self, seg: Segment) -> &[f64] {
        &self.values[seg.range()]
    }

    pub fn slice_mut(&mut self, seg: Segment) -> &mut [f64] {
        &mut self.values[seg.range()]
    }
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Attention weights shared between samples: `alpha_h(i, j)` for head `h`
/// reads parameter `offset + h * per_head + index(i, j)`.
#[derive(Clone, Debug)]
pub struct MixWeights {
    pub segment: Segment,
    pub heads: usize,
    pub tokens: usize,
    /// `tokens * tokens` table of parameter indices within a head.
    pub index: Vec<usize>,
    pub per_head: usize,
}

impl MixWeights {
    /// One free weight per ordered token pair.
    pub fn dense(segment: Segment, heads: usize, tokens: usize) -> Self {
        MixWeights {
            segment,
            heads,
            tokens,
            index: (0..tokens * tokens).collect(),
            per_head: tokens * tokens,
        }
    }

    /// Weights depending only on `rel(i, j)`, `rel` taking `per_head` values.
    pub fn relative(segment: Segment, heads: usize, tokens: usize, index: Vec<usize>, per_head: usize) -> Self {
        MixWeights {
            segment,
            heads,
            tokens,
            index,
            per_head,
        }
    }

    fn alpha(&self, params: &[f64], h: usize, i: usize, j: usize) -> f64 {
        params[self.segment.offset + h * self.per_head + self.index[i * self.tokens + j]]
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

enum Op {
    Input { differentiable: bool },
    Linear { x: Var, w: Segment, b: Option<Segment> },
    LayerNorm { x: Var, gain: Segment, bias: Segment, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu { x: Var },
    Add { a: Var, b: Var },
    TokenMix { x: Var, weights: MixWeights },
    ConcatCols { a: Var, b: Var },
    SumTokens { x: Var, tokens: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Linear { .. } => "linear",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::Add { .. } => "add",
            Op::TokenMix { .. } => "token_mix",
            Op::ConcatCols { .. } => "concat_cols",
            Op::SumTokens { .. } => "sum_tokens",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// How parameter gradients are accumulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    /// Sum over the batch: `channels x P`.
    Summed,
    /// One row per sample: `channels x batch x P`.
    PerSample,
}

/// Result of a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub channels: usize,
    pub batch: usize,
    pub n_params: usize,
    pub mode: GradMode,
    /// Parameter gradients, layout given by `mode`.
    pub params: Vec<f64>,
    /// Adjoints of differentiable inputs, one tensor per channel.
    pub inputs: Vec<(Var, Vec<Tensor>)>,
}

impl Gradients {
    /// Gradient row for `(channel, sample)`; in summed mode `sample` is
    /// ignored.
    pub fn row(&self, channel: usize, sample: usize) -> &[f64] {
        let p = self.n_params;
        let r = match self.mode {
            GradMode::Summed => channel,
            GradMode::PerSample => channel * self.batch + sample,
        };
        &self.params[r * p..(r + 1) * p]
    }

    pub fn input(&self, var: Var) -> Option<&[Tensor]> {
        self.inputs.iter().find(|(v, _)| *v == var).map(|(_, t)| t.as_slice())
    }
}

/// Records a forward computation over a fixed parameter vector.
pub struct Tape<'p> {
    params: &'p [f64],
    batch: usize,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64], batch: usize) -> Self {
        Tape {
            params,
            batch,
            nodes: Vec::new(),
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if value.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { primitive: op.name() });
        }
        if value.rows % self.batch.max(1) != 0 {
            return Err(invalid("tape", "node rows are not a multiple of the batch"));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn seg(&self, s: Segment) -> &'p [f64] {
        &self.params[s.range()]
    }

    /// Leaf node. Differentiable inputs receive adjoints in [`Gradients`].
    pub fn input(&mut self, value: Tensor, differentiable: bool) -> Result<Var> {
        self.push(value, Op::Input { differentiable })
    }

    /// `y = x W + b` with `W` of shape `in x out`.
    pub fn linear(&mut self, x: Var, w: Segment, b: Option<Segment>) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols != w.rows {
            return Err(invalid("linear", format!("input width {} != weight rows {}", xv.cols, w.rows)));
        }
        let (r, o) = (xv.rows, w.cols);
        let mut y = Tensor::zeros(r, o);
        if let Some(b) = b {
            let bv = self.seg(b);
            for row in y.data.chunks_exact_mut(o) {
                row.copy_from_slice(bv);
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(r, w.rows, o, 1.0, &xv.data, false, self.seg(w), false, beta, &mut y.data);
        self.push(y, Op::Linear { x, w, b })
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Segment, bias: Segment) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols;
        if gain.len() != c || bias.len() != c {
            return Err(invalid("layer_norm", "gain/bias width mismatch"));
        }
        let g = self.seg(gain);
        let bb = self.seg(bias);
        let mut y = Tensor::zeros(xv.rows, c);
        let mut xhat = vec![0.0; xv.rows * c];
        let mut rstd = vec![0.0; xv.rows];
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = s;
            for k in 0..c {
                let xh = (row[k] - mu) * s;
                xhat[r * c + k] = xh;
                y.data[r * c + k] = xh * g[k] + bb[k];
            }
        }
        self.push(
            y,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// GELU, tanh form.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv
            .data
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        let y = Tensor {
            rows: xv.rows,
            cols: xv.cols,
            data,
        };
        self.push(y, Op::Gelu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows != bv.rows || av.cols != bv.cols {
            return Err(invalid("add", "shape mismatch"));
        }
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let y = Tensor {
            rows: av.rows,
            cols: av.cols,
            data,
        };
        self.push(y, Op::Add { a, b })
    }

    /// Per-head token mixing `y[i, h] = sum_j alpha_h(i, j) x[j, h]`, where
    /// column block `h` has width `cols / heads`.
    pub fn token_mix(&mut self, x: Var, weights: MixWeights) -> Result<Var> {
        let xv = self.value(x);
        let (t, heads) = (weights.tokens, weights.heads);
        if xv.cols % heads != 0 || xv.rows != self.batch * t {
            return Err(invalid("token_mix", "shape does not match heads/tokens"));
        }
        let dh = xv.cols / heads;
        let c = xv.cols;
        let mut y = Tensor::zeros(xv.rows, c);
        for s in 0..self.batch {
            let base = s * t * c;
            for h in 0..heads {
                for i in 0..t {
                    let out = base + i * c + h * dh;
                    for j in 0..t {
                        let a = weights.alpha(self.params, h, i, j);
                        let inp = base + j * c + h * dh;
                        for k in 0..dh {
                            y.data[out + k] += a * xv.data[inp + k];
                        }
                    }
                }
            }
        }
        self.push(y, Op::TokenMix { x, weights })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows != bv.rows {
            return Err(invalid("concat_cols", "row mismatch"));
        }
        let c = av.cols + bv.cols;
        let mut y = Tensor::zeros(av.rows, c);
        for r in 0..av.rows {
            y.data[r * c..r * c + av.cols].copy_from_slice(av.row(r));
            y.data[r * c + av.cols..(r + 1) * c].copy_from_slice(bv.row(r));
        }
        self.push(y, Op::ConcatCols { a, b })
    }

    /// Sums each sample's `tokens` consecutive rows.
    pub fn sum_tokens(&mut self, x: Var, tokens: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows != self.batch * tokens {
            return Err(invalid("sum_tokens", "rows != batch * tokens"));
        }
        let c = xv.cols;
        let mut y = Tensor::zeros(self.batch, c);
        for (r, row) in xv.data.chunks_exact(c).enumerate() {
            let out = &mut y.data[(r / tokens) * c..(r / tokens + 1) * c];
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        self.push(y, Op::SumTokens { x, tokens })
    }

    /// Reverse pass from `output`. `seeds` holds one adjoint per channel,
    /// each shaped like the output.
    pub fn backward(&self, output: Var, seeds: &[Tensor], mode: GradMode) -> Result<Gradients> {
        let k = seeds.len();
        let out = self.value(output);
        if k == 0 || seeds.iter().any(|s| s.rows != out.rows || s.cols != out.cols) {
            return Err(invalid("backward", "seed shapes must match the output"));
        }
        let p = self.params.len();
        let b = self.batch;
        let mut grads = Gradients {
            channels: k,
            batch: b,
            n_params: p,
            mode,
            params: vec![
                0.0;
                match mode {
                    GradMode::Summed => k * p,
                    GradMode::PerSample => k * b * p,
                }
            ],
            inputs: Vec::new(),
        };
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = Vec::with_capacity(k * out.data.len());
        for s in seeds {
            seed.extend_from_slice(&s.data);
        }
        adj[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(dy) = adj[idx].take() else { continue };
            if dy.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    primitive: self.nodes[idx].op.name(),
                });
            }
            let node = &self.nodes[idx];
            let (rows, cols) = (node.value.rows, node.value.cols);
            let size = rows * cols;
            match &node.op {
                Op::Input { differentiable } => {
                    if *differentiable {
                        let ts = dy
                            .chunks_exact(size)
                            .map(|d| Tensor {
                                rows,
                                cols,
                                data: d.to_vec(),
                            })
                            .collect();
                        grads.inputs.push((Var(idx), ts));
                    }
                }
                Op::Linear { x, w, b: bias } => {
                    let xv = self.value(*x);
                    let i = w.rows;
                    let g = rows / b;
                    let wv = self.seg(*w);
                    let dx = accumulate(&mut adj, *x, k * xv.rows * i);
                    for c in 0..k {
                        let dyc = &dy[c * size..(c + 1) * size];
                        gemm(rows, cols, i, 1.0, dyc, false, wv, true, 1.0, &mut dx[c * rows * i..(c + 1) * rows * i]);
                    }
                    for c in 0..k {
                        let dyc = &dy[c * size..(c + 1) * size];
                        match mode {
                            GradMode::Summed => {
                                let gw = &mut grads.params[c * p + w.offset..c * p + w.offset + w.len()];
                                gemm(i, rows, cols, 1.0, &xv.data, true, dyc, false, 1.0, gw);
                                if let Some(bs) = bias {
                                    let gb = &mut grads.params[c * p + bs.offset..c * p + bs.offset + bs.len()];
                                    for row in dyc.chunks_exact(cols) {
                                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                                    }
                                }
                            }
                            GradMode::PerSample => {
                                for s in 0..b {
                                    let base = (c * b + s) * p;
                                    let xs = &xv.data[s * g * i..(s + 1) * g * i];
                                    let ds = &dyc[s * g * cols..(s + 1) * g * cols];
                                    let gw = &mut grads.params[base + w.offset..base + w.offset + w.len()];
                                    if g == 1 {
                                        for (a, row) in xs.iter().zip(gw.chunks_exact_mut(cols)) {
                                            row.iter_mut().zip(ds).for_each(|(o, v)| *o += a * v);
                                        }
                                    } else {
                                        gemm(i, g, cols, 1.0, xs, true, ds, false, 1.0, gw);
                                    }
                                    if let Some(bs) = bias {
                                        let gb = &mut grads.params[base + bs.offset..base + bs.offset + bs.len()];
                                        for row in ds.chunks_exact(cols) {
                                            gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.seg(*gain);
                    let g = rows / b;
                    let dx = accumulate(&mut adj, *x, k * size);
                    for c in 0..k {
                        for r in 0..rows {
                            let d = &dy[c * size + r * cols..c * size + (r + 1) * cols];
                            let xh = &xhat[r * cols..(r + 1) * cols];
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for q in 0..cols {
                                let dxh = d[q] * gv[q];
                                m1 += dxh;
                                m2 += dxh * xh[q];
                            }
                            m1 /= cols as f64;
                            m2 /= cols as f64;
                            let out = &mut dx[c * size + r * cols..c * size + (r + 1) * cols];
                            for q in 0..cols {
                                out[q] += rstd[r] * (d[q] * gv[q] - m1 - xh[q] * m2);
                            }
                            let base = match mode {
                                GradMode::Summed => c * p,
                                GradMode::PerSample => (c * b + r / g) * p,
                            };
                            for q in 0..cols {
                                grads.params[base + gain.offset + q] += d[q] * xh[q];
                                grads.params[base + bias.offset + q] += d[q];
                            }
                        }
                    }
                }
                Op::Gelu { x } => {
                    let xv = &self.value(*x).data;
                    let dx = accumulate(&mut adj, *x, k * size);
                    for (q, &v) in xv.iter().enumerate() {
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let der = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        for c in 0..k {
                            dx[c * size + q] += dy[c * size + q] * der;
                        }
                    }
                }
                Op::Add { a, b: bb } => {
                    for v in [*a, *bb] {
                        let d = accumulate(&mut adj, v, k * size);
                        d.iter_mut().zip(&dy).for_each(|(o, v)| *o += v);
                    }
                }
                Op::TokenMix { x, weights } => {
                    let xv = &self.value(*x).data;
                    let (t, heads) = (weights.tokens, weights.heads);
                    let dh = cols / heads;
                    let dx = accumulate(&mut adj, *x, k * size);
                    for c in 0..k {
                        for s in 0..b {
                            let base = s * t * cols;
                            let gbase = match mode {
                                GradMode::Summed => c * p,
                                GradMode::PerSample => (c * b + s) * p,
                            };
                            for h in 0..heads {
                                for i in 0..t {
                                    let o = base + i * cols + h * dh;
                                    let d = &dy[c * size + o..c * size + o + dh];
                                    for j in 0..t {
                                        let inp = base + j * cols + h * dh;
                                        let a = weights.alpha(self.params, h, i, j);
                                        let mut acc = 0.0;
                                        for q in 0..dh {
                                            dx[c * size + inp + q] += a * d[q];
                                            acc += d[q] * xv[inp + q];
                                        }
                                        let pi = weights.segment.offset + h * weights.per_head + weights.index[i * t + j];
                                        grads.params[gbase + pi] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::ConcatCols { a, b: bb } => {
                    let ca = self.value(*a).cols;
                    let cb = cols - ca;
                    {
                        let da = accumulate(&mut adj, *a, k * rows * ca);
                        for c in 0..k {
                            for r in 0..rows {
                                let src = &dy[c * size + r * cols..c * size + r * cols + ca];
                                let dst = &mut da[c * rows * ca + r * ca..c * rows * ca + (r + 1) * ca];
                                dst.iter_mut().zip(src).for_each(|(o, v)| *o += v);
                            }
                        }
                    }
                    let db = accumulate(&mut adj, *bb, k * rows * cb);
                    for c in 0..k {
                        for r in 0..rows {
                            let src = &dy[c * size + r * cols + ca..c * size + (r + 1) * cols];
                            let dst = &mut db[c * rows * cb + r * cb..c * rows * cb + (r + 1) * cb];
                            dst.iter_mut().zip(src).for_each(|(o, v)| *o += v);
                        }
                    }
                }
                Op::SumTokens { x, tokens } => {
                    let xr = rows * tokens;
                    let dx = accumulate(&mut adj, *x, k * xr * cols);
                    for c in 0..k {
                        for r in 0..xr {
                            let src = &dy[c * size + (r / tokens) * cols..c * size + (r / tokens + 1) * cols];
                            let dst = &mut dx[c * xr * cols + r * cols..c * xr * cols + (r + 1) * cols];
                            dst.iter_mut().zip(src).for_each(|(o, v)| *o += v);
                        }
                    }
                }
            }
        }
        if grads.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { primitive: "backward" });
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}
