//! Layers over sentence sequences. Every input is an `n×d` matrix whose rows
//! are the sentences of one document, in order.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, ParamId, ParamStore, Var};

/// Affine map `y = x·Wᵀ + b` applied to each row, with `W` stored `[out × in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub d_in: usize,
    pub d_out: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut SplitMix64) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), d_out, d_in, rng);
        let bias = Some(store.add_zeros(format!("{name}.bias"), vec![1, d_out]));
        Self {
            d_in,
            d_out,
            weight,
            bias,
        }
    }

    pub fn without_bias(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut SplitMix64) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), d_out, d_in, rng);
        Self {
            d_in,
            d_out,
            weight,
            bias: None,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let width = g.value(x).cols();
        if width != self.d_in {
            return Err(Error::Shape(format!(
                "linear expects width {}, got {width}",
                self.d_in
            )));
        }
        let w = g.param(store, self.weight);
        let y = g.matmul_nt(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Scaled dot-product self-attention with `heads` parallel heads over the
/// full sentence sequence. No mask, no positional encoding: the layer is
/// permutation-equivariant in its rows.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub d_model: usize,
    pub heads: usize,
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_o: Linear,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, heads: usize, rng: &mut SplitMix64) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::InvalidConfig(format!(
                "{heads} heads do not divide d_model {d_model}"
            )));
        }
        Ok(Self {
            d_model,
            heads,
            w_q: Linear::without_bias(store, &format!("{name}.q"), d_model, d_model, rng),
            w_k: Linear::without_bias(store, &format!("{name}.k"), d_model, d_model, rng),
            w_v: Linear::without_bias(store, &format!("{name}.v"), d_model, d_model, rng),
            w_o: Linear::without_bias(store, &format!("{name}.o"), d_model, d_model, rng),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(g, store, x)?.0)
    }

    /// Output plus each head's `n×n` attention matrix.
    pub fn forward_with_weights(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Vec<Var>)> {
        if g.value(x).rows() == 0 {
            return Err(Error::Shape("attention over zero sentences".into()));
        }
        let q = self.w_q.forward(g, store, x)?;
        let k = self.w_k.forward(g, store, x)?;
        let v = self.w_v.forward(g, store, x)?;
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores)?;
            outs.push(g.matmul(attn, vh)?);
            weights.push(attn);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        Ok((self.w_o.forward(g, store, cat)?, weights))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gamma: store.add_filled(format!("{name}.gamma"), vec![1, d], 1.0),
            beta: store.add_zeros(format!("{name}.beta"), vec![1, d]),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Post-norm transformer encoder block:
/// `h = LN(x + Drop(Attn(x)))`, `out = LN(h + Drop(FFN(h)))`, FFN width `4·d`.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        dropout: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidConfig(format!("dropout {dropout} not in [0, 1)")));
        }
        Ok(Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), d_model, heads, rng)?,
            ff_in: Linear::new(store, &format!("{name}.ff_in"), d_model, 4 * d_model, rng),
            ff_out: Linear::new(store, &format!("{name}.ff_out"), 4 * d_model, d_model, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d_model),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d_model),
            dropout,
        })
    }

    pub fn d_model(&self) -> usize {
        self.attention.d_model
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let keep = 1.0 - self.dropout;
        let a = self.attention.forward(g, store, x)?;
        let a = g.dropout(a, keep)?;
        let h = g.add(x, a)?;
        let h = self.norm1.forward(g, store, h)?;
        let f = self.ff_in.forward(g, store, h)?;
        let f = g.relu(f);
        let f = self.ff_out.forward(g, store, f)?;
        let f = g.dropout(f, keep)?;
        let out = g.add(h, f)?;
        self.norm2.forward(g, store, out)
    }
}

/// Applies blocks in sequence; an empty stack is the identity.
pub fn encoder_forward(blocks: &[EncoderBlock], g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
    let width = g.value(x).cols();
    let mut h = x;
    for (i, b) in blocks.iter().enumerate() {
        if b.d_model() != width {
            return Err(Error::Shape(format!(
                "encoder block {i} has width {}, input has {width}",
                b.d_model()
            )));
        }
        h = b.forward(g, store, h)?;
    }
    Ok(h)
}

/// One LSTM direction. Gates are laid out `[input, forget, cell, output]`
/// along the `4H` axis; a single bias per gate.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub d_in: usize,
    pub hidden: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut SplitMix64) -> Self {
        Self {
            d_in,
            hidden,
            w_ih: store.add_xavier(format!("{name}.w_ih"), 4 * hidden, d_in, rng),
            w_hh: store.add_xavier(format!("{name}.w_hh"), 4 * hidden, hidden, rng),
            bias: store.add_zeros(format!("{name}.bias"), vec![1, 4 * hidden]),
        }
    }

    /// Hidden states in processing order, zero initial state.
    fn run(&self, g: &mut Graph, store: &ParamStore, x: Var, reverse: bool) -> Result<Vec<Var>> {
        let n = g.value(x).rows();
        let hd = self.hidden;
        let w_ih = g.param(store, self.w_ih);
        let w_hh = g.param(store, self.w_hh);
        let b = g.param(store, self.bias);
        let pre = g.matmul_nt(x, w_ih)?;
        let pre = g.add_row(pre, b)?;
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut outs = Vec::with_capacity(n);
        for step in 0..n {
            let t = if reverse { n - 1 - step } else { step };
            let mut gates = g.slice_rows(pre, t, 1)?;
            if let Some(hp) = h {
                let rec = g.matmul_nt(hp, w_hh)?;
                gates = g.add(gates, rec)?;
            }
            let i = g.slice_cols(gates, 0, hd)?;
            let f = g.slice_cols(gates, hd, hd)?;
            let cc = g.slice_cols(gates, 2 * hd, hd)?;
            let o = g.slice_cols(gates, 3 * hd, hd)?;
            let i = g.sigmoid(i);
            let f = g.sigmoid(f);
            let cc = g.tanh(cc);
            let o = g.sigmoid(o);
            let ic = g.mul(i, cc)?;
            let c_new = match c {
                Some(cp) => {
                    let fc = g.mul(f, cp)?;
                    g.add(fc, ic)?
                }
                None => ic,
            };
            let tc = g.tanh(c_new);
            let h_new = g.mul(o, tc)?;
            outs.push(h_new);
            h = Some(h_new);
            c = Some(c_new);
        }
        Ok(outs)
    }
}

/// Bidirectional LSTM; output row `t` is `[h_fwd(t) ; h_bwd(t)]`, width `2H`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut SplitMix64) -> Self {
        Self {
            forward: LstmCell::new(store, &format!("{name}.fwd"), d_in, hidden, rng),
            backward: LstmCell::new(store, &format!("{name}.bwd"), d_in, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (n, d) = g.value(x).dims2()?;
        if n == 0 {
            return Err(Error::Shape("BiLSTM over zero sentences".into()));
        }
        if d != self.forward.d_in {
            return Err(Error::Shape(format!(
                "BiLSTM expects width {}, got {d}",
                self.forward.d_in
            )));
        }
        let fwd = self.forward.run(g, store, x, false)?;
        let mut bwd = self.backward.run(g, store, x, true)?;
        bwd.reverse();
        let f = g.concat_rows(&fwd)?;
        let b = g.concat_rows(&bwd)?;
        g.concat_cols(&[f, b])
    }
}
