use std::collections::HashMap;

use crate::crf::{self, CrfParams};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

use super::kernels;
use super::params::{ParamId, ParamStore};
use super::{Tensor, LAYER_NORM_EPS};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Crf {
        emissions: Var,
        transitions: Var,
        start: Var,
        stop: Var,
        marginals: Vec<f64>,
        pair_marginals: Vec<f64>,
        gold: Option<Vec<usize>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A single-use tape. Nodes are appended in creation order, which is a
/// topological order, and [`Graph::backward`] walks it once in reverse.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
    rng: Option<SplitMix64>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            rng: None,
        }
    }

    /// Training-mode graph; dropout masks are drawn from `rng`.
    pub fn training(rng: SplitMix64) -> Self {
        Self {
            rng: Some(rng),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Hands back the dropout stream so the caller can continue it.
    pub fn into_rng(self) -> Option<SplitMix64> {
        self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf not tied to a parameter store.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for a stored parameter; repeated calls reuse one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Gradients indexed by parameter id, `None` for parameters the graph never touched.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Option<Vec<f64>>> {
        let mut out = vec![None; store.len()];
        for (id, v) in &self.params {
            out[id.0] = Some(
                self.grads[v.0]
                    .clone()
                    .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()]),
            );
        }
        out
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`; with `b` stored as `[out × in]` this is a linear map on rows of `a`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (n, k2) = self.dims(b)?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul_nt [{m}x{k}] by [{n}x{k2}]ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNt(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Broadcast add of a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let (r, c) = self.dims(row)?;
        if r != 1 || c != n {
            return Err(Error::Shape(format!("add_row [{m}x{n}] + [{r}x{c}]")));
        }
        let bias = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (v, b) in chunk.iter_mut().zip(bias) {
                *v += b;
            }
        }
        let ng = self.ng(&[a, row]);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::AddRow(a, row), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |x| x * s);
        let ng = self.ng(&[a]);
        self.push(out, Op::Scale(a, s), ng)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("same shape")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        let ng = self.ng(&[a]);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, kernels::sigmoid);
        let ng = self.ng(&[a]);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.max(0.0));
        let ng = self.ng(&[a]);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).softmax_rows()?;
        let ng = self.ng(&[a]);
        Ok(self.push(out, Op::SoftmaxRows(a), ng))
    }

    /// Normalizes each row, then applies the `1×n` scale `gamma` and shift `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        for p in [gamma, beta] {
            if self.dims(p)? != (1, n) {
                return Err(Error::Shape(format!(
                    "layer_norm parameter {:?} for width {n}",
                    self.value(p).shape()
                )));
            }
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = g[j] * h + b[j];
            }
        }
        let ng = self.ng(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Inverted dropout; identity outside training mode.
    pub fn dropout(&mut self, x: Var, keep: f64) -> Result<Var> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dropout keep-probability {keep} not in (0, 1]"
            )));
        }
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if keep == 1.0 {
            return Ok(x);
        }
        let len = self.nodes[x.0].value.len();
        let mask: Vec<f64> = (0..len)
            .map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = zip_map(self.value(x).data(), &mask, |a, m| a * m);
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of zero tensors".into()));
        };
        let m = self.dims(first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != m {
                return Err(Error::Shape(format!("concat_cols rows {r} vs {m}")));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = self.ng(parts);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of zero tensors".into()));
        };
        let n = self.dims(first)?.1;
        let mut m = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if c != n {
                return Err(Error::Shape(format!("concat_rows cols {c} vs {n}")));
            }
            m += r;
            out.extend_from_slice(self.value(p).data());
        }
        let ng = self.ng(parts);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        if start + len > n {
            return Err(Error::Shape(format!("slice_cols {start}+{len} of {n}")));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::matrix(m, len, out)?, Op::SliceCols { x, start }, ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        if start + len > m {
            return Err(Error::Shape(format!("slice_rows {start}+{len} of {m}")));
        }
        let out = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::matrix(len, n, out)?, Op::SliceRows { x, start }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Linear-chain CRF objective. With `gold`, the negative log-likelihood
    /// `log Z - score(gold)`; without, the log-partition `log Z`.
    pub fn crf(
        &mut self,
        emissions: Var,
        transitions: Var,
        start: Var,
        stop: Var,
        gold: Option<&[usize]>,
    ) -> Result<Var> {
        let (_, l) = self.dims(emissions)?;
        let params = CrfParams::new(
            l,
            self.value(transitions).data().to_vec(),
            self.value(start).data().to_vec(),
            self.value(stop).data().to_vec(),
        )?;
        let e = self.value(emissions);
        let fb = crf::forward_backward(&params, e)?;
        let mut out = fb.log_z;
        if let Some(y) = gold {
            out = (out - crf::path_score(&params, e, y)?).max(0.0);
        }
        if !out.is_finite() {
            return Err(Error::NonFinite("CRF objective".into()));
        }
        let ng = self.ng(&[emissions, transitions, start, stop]);
        Ok(self.push(
            Tensor::scalar(out),
            Op::Crf {
                emissions,
                transitions,
                start,
                stop,
                marginals: fb.marginals,
                pair_marginals: fb.pair_marginals,
                gold: gold.map(<[usize]>::to_vec),
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.value(output).len() != 1 {
            return Err(Error::Shape("backward from a non-scalar".into()));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // The op is moved out so parent gradient buffers can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(nodes, *a).dims2().expect("matrix");
                let n = val(nodes, *b).cols();
                if nodes[a.0].needs_grad {
                    let bv = val(nodes, *b).data();
                    let ga = acc(nodes, grads, *a).unwrap();
                    // dA = dC · Bᵀ
                    kernels::gemm_nt(g, bv, ga, m, n, k);
                }
                if nodes[b.0].needs_grad {
                    let av = val(nodes, *a).data();
                    let gb = acc(nodes, grads, *b).unwrap();
                    // dB = Aᵀ · dC
                    kernels::gemm_tn(av, g, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = val(nodes, *a).dims2().expect("matrix");
                let n = val(nodes, *b).rows();
                if nodes[a.0].needs_grad {
                    let bv = val(nodes, *b).data();
                    let ga = acc(nodes, grads, *a).unwrap();
                    // dA = dC · B
                    kernels::gemm_nn(g, bv, ga, m, n, k);
                }
                if nodes[b.0].needs_grad {
                    let av = val(nodes, *a).data();
                    let gb = acc(nodes, grads, *b).unwrap();
                    // dB = dCᵀ · A
                    kernels::gemm_tn(g, av, gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = acc(nodes, grads, v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gr) = acc(nodes, grads, *row) {
                    let n = gr.len();
                    for chunk in g.chunks(n) {
                        add_into(gr, chunk);
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = val(nodes, *a).data();
                let bv = val(nodes, *b).data();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    for ((d, gi), x) in gb.iter_mut().zip(g).zip(av) {
                        *d += gi * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                if let Some(ga) = acc(nodes, grads, *a) {
                    for (d, gi) in ga.iter_mut().zip(g) {
                        *d += gi * s;
                    }
                }
            }
            Op::Tanh(a) => {
                let y = nodes[i].value.data();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((d, gi), yv) in ga.iter_mut().zip(g).zip(y) {
                        *d += gi * (1.0 - yv * yv);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = nodes[i].value.data();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((d, gi), yv) in ga.iter_mut().zip(g).zip(y) {
                        *d += gi * yv * (1.0 - yv);
                    }
                }
            }
            Op::Relu(a) => {
                let x = val(nodes, *a).data();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((d, gi), xv) in ga.iter_mut().zip(g).zip(x) {
                        if *xv > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let y = nodes[i].value.data();
                let n = nodes[i].value.cols();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((dr, gr), yr) in ga.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let s = kernels::dot(gr, yr);
                        for j in 0..n {
                            dr[j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = val(nodes, *x).cols();
                let gam = val(nodes, *gamma).data();
                if let Some(gg) = acc(nodes, grads, *gamma) {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(gb) = acc(nodes, grads, *beta) {
                    for gr in g.chunks(n) {
                        add_into(gb, gr);
                    }
                }
                if let Some(gx) = acc(nodes, grads, *x) {
                    let nf = n as f64;
                    for (r, (dr, (gr, hr))) in gx
                        .chunks_mut(n)
                        .zip(g.chunks(n).zip(xhat.chunks(n)))
                        .enumerate()
                    {
                        let dxhat: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / nf;
                        let mean_dh = kernels::dot(&dxhat, hr) / nf;
                        for j in 0..n {
                            dr[j] += inv_std[r] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    for ((d, gi), mv) in gx.iter_mut().zip(g).zip(mask) {
                        *d += gi * mv;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let n = nodes[i].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(nodes, p).cols();
                    if let Some(gp) = acc(nodes, grads, p) {
                        for (r, dr) in gp.chunks_mut(w).enumerate() {
                            add_into(dr, &g[r * n + offset..r * n + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(nodes, p).len();
                    if let Some(gp) = acc(nodes, grads, p) {
                        add_into(gp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let w = nodes[i].value.cols();
                let n = val(nodes, *x).cols();
                let start = *start;
                if let Some(gx) = acc(nodes, grads, *x) {
                    for (r, gr) in g.chunks(w).enumerate() {
                        add_into(&mut gx[r * n + start..r * n + start + w], gr);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let n = val(nodes, *x).cols();
                let start = *start;
                if let Some(gx) = acc(nodes, grads, *x) {
                    add_into(&mut gx[start * n..start * n + g.len()], g);
                }
            }
            Op::Sum(x) => {
                let s = g[0];
                if let Some(gx) = acc(nodes, grads, *x) {
                    gx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Crf {
                emissions,
                transitions,
                start,
                stop,
                marginals,
                pair_marginals,
                gold,
            } => {
                let s = g[0];
                let (n, l) = val(nodes, *emissions).dims2().expect("matrix");
                if let Some(ge) = acc(nodes, grads, *emissions) {
                    for (d, m) in ge.iter_mut().zip(marginals) {
                        *d += s * m;
                    }
                    if let Some(y) = gold {
                        for (t, &lab) in y.iter().enumerate() {
                            ge[t * l + lab] -= s;
                        }
                    }
                }
                if let Some(gt) = acc(nodes, grads, *transitions) {
                    for (d, m) in gt.iter_mut().zip(pair_marginals) {
                        *d += s * m;
                    }
                    if let Some(y) = gold {
                        for w in y.windows(2) {
                            gt[w[0] * l + w[1]] -= s;
                        }
                    }
                }
                if let Some(gs) = acc(nodes, grads, *start) {
                    for (d, m) in gs.iter_mut().zip(&marginals[..l]) {
                        *d += s * m;
                    }
                    if let Some(y) = gold {
                        gs[y[0]] -= s;
                    }
                }
                if let Some(gs) = acc(nodes, grads, *stop) {
                    for (d, m) in gs.iter_mut().zip(&marginals[(n - 1) * l..]) {
                        *d += s * m;
                    }
                    if let Some(y) = gold {
                        gs[y[n - 1]] -= s;
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }
}


fn val(nodes: &[Node], v: Var) -> &Tensor {
    &nodes[v.0].value
}

/// Gradient buffer for `v`, allocated on first use; `None` if `v` needs no gradient.
fn acc<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut [f64]> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rng: &mut SplitMix64, m: usize, n: usize) -> Tensor {
        Tensor::matrix(m, n, (0..m * n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn add_passes_gradient_unchanged() {
        let mut rng = SplitMix64::new(5);
        for (m, n) in [(1, 1), (3, 4), (7, 2)] {
            let mut g = Graph::new();
            let a = g.leaf(random(&mut rng, m, n));
            let b = g.leaf(random(&mut rng, m, n));
            let w = g.input(random(&mut rng, m, n));
            let s = g.add(a, b).unwrap();
            let p = g.mul(s, w).unwrap();
            let out = g.sum(p);
            g.backward(out).unwrap();
            let wv = g.value(w).data().to_vec();
            assert_eq!(g.grad(a).unwrap(), wv.as_slice());
            assert_eq!(g.grad(b).unwrap(), wv.as_slice());
            assert!(g.grad(w).is_none());
        }
    }

    #[test]
    fn concat_splits_gradient_by_extent() {
        let mut rng = SplitMix64::new(9);
        for widths in [vec![1, 2], vec![3, 1, 4], vec![5]] {
            let m = 3;
            let mut g = Graph::new();
            let parts: Vec<Var> = widths.iter().map(|&w| g.leaf(random(&mut rng, m, w))).collect();
            let cat = g.concat_cols(&parts).unwrap();
            let total: usize = widths.iter().sum();
            let w = g.input(random(&mut rng, m, total));
            let wv = g.value(w).clone();
            let p = g.mul(cat, w).unwrap();
            let out = g.sum(p);
            g.backward(out).unwrap();
            let mut off = 0;
            for (&part, &wd) in parts.iter().zip(&widths) {
                let grad = g.grad(part).unwrap();
                for r in 0..m {
                    assert_eq!(&grad[r * wd..(r + 1) * wd], &wv.row(r)[off..off + wd]);
                }
                off += wd;
            }

            let mut g = Graph::new();
            let parts: Vec<Var> = widths.iter().map(|&w| g.leaf(random(&mut rng, w, 2))).collect();
            let cat = g.concat_rows(&parts).unwrap();
            let scaled = g.scale(cat, 3.0);
            let out = g.sum(scaled);
            g.backward(out).unwrap();
            for &p in &parts {
                assert!(g.grad(p).unwrap().iter().all(|&v| v == 3.0));
            }
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row_vector(vec![2.5; 6]));
        let gamma = g.input(Tensor::row_vector(vec![1.0; 6]));
        let beta = g.input(Tensor::row_vector(vec![0.0; 6]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn activations_at_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(0.0));
        let s = g.sigmoid(x);
        let t = g.tanh(x);
        let r = g.relu(x);
        assert_eq!(g.scalar(s), 0.5);
        assert_eq!(g.scalar(t), 0.0);
        assert_eq!(g.scalar(r), 0.0);
    }

    #[test]
    fn dropout_modes() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row_vector(vec![1.0; 100]));
        assert_eq!(g.dropout(x, 0.5).unwrap(), x);
        assert!(g.dropout(x, 0.0).is_err());
        assert!(g.dropout(x, 1.5).is_err());

        let mut g = Graph::training(SplitMix64::new(1));
        let x = g.input(Tensor::row_vector(vec![1.0; 1000]));
        let y = g.dropout(x, 0.8).unwrap();
        let vals = g.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
        let kept = vals.iter().filter(|&&v| v > 0.0).count();
        assert!((700..900).contains(&kept));
    }

    #[test]
    fn same_seed_same_dropout_mask() {
        let run = || {
            let mut g = Graph::training(SplitMix64::new(77));
            let x = g.input(Tensor::row_vector(vec![1.0; 64]));
            let y = g.dropout(x, 0.9).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(vec![2, 3]));
        let b = g.input(Tensor::zeros(vec![2, 3]));
        assert!(g.matmul(a, b).is_err());
        let c = g.input(Tensor::zeros(vec![3, 2]));
        assert!(g.add(a, c).is_err());
        assert!(g.slice_cols(a, 2, 2).is_err());
        assert!(g.backward(a).is_err());
    }
}
