//! The four MARRO variants.
//!
//! Every variant runs sentence embeddings through an optional adapter, a
//! stack of encoder blocks and a BiLSTM, and scores label sequences with a
//! CRF over the seven roles. The MTL variants add a label-shift head over
//! adjacent sentence pairs whose BiLSTM features are concatenated with the
//! main BiLSTM output before the role emissions are computed.
//!
//! ```text
//! X ─ adapter ─ S' ─ encoder ─ E_rhet ─ BiLSTM ─ main ──┐
//!                │               │                     concat ─ linear ─ CRF(7)
//!                └ E_bin ─ fc ─ E_bin' ⊕ E_rhet ─ BiLSTM ─ shift ─┘
//!                                                        └ linear ─ CRF(2)
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::shifts_of;
use crate::crf::CrfLayer;
use crate::error::{Error, Result};
use crate::nn::{encoder_forward, BiLstm, EncoderBlock, Linear};
use crate::rng::SplitMix64;
use crate::role::NUM_ROLES;
use crate::tensor::{Checkpoint, Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Tf,
    Mtl,
    MtlTf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Tf, Variant::Mtl, Variant::MtlTf];

    pub fn is_mtl(self) -> bool {
        matches!(self, Variant::Mtl | Variant::MtlTf)
    }

    /// Variants fed by transformer sentence vectors (512 wide) rather than
    /// sent2vec (200 wide).
    pub fn is_tf(self) -> bool {
        matches!(self, Variant::Tf | Variant::MtlTf)
    }

    pub fn key(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Tf => "tf",
            Variant::Mtl => "mtl",
            Variant::MtlTf => "mtl_tf",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Base => "MARRO_base",
            Variant::Tf => "TF-MARRO",
            Variant::Mtl => "MTL-MARRO",
            Variant::MtlTf => "MTL-TF-MARRO",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.key() == k || v.display_name().to_ascii_lowercase().replace('-', "_") == k)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant {s:?} (expected base, tf, mtl or mtl_tf)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarroConfig {
    pub variant: Variant,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Hidden width per direction, for both the main and the shift BiLSTM.
    pub lstm_hidden: usize,
    pub num_labels: usize,
    pub shift_hidden: usize,
    pub loss_weight: f64,
    pub adapter: bool,
    pub dropout: f64,
}

impl MarroConfig {
    pub fn preset(variant: Variant) -> Self {
        let (d_model, heads) = if variant.is_tf() { (512, 8) } else { (200, 5) };
        Self {
            variant,
            d_model,
            heads,
            blocks: 2,
            lstm_hidden: d_model / 2,
            num_labels: NUM_ROLES,
            shift_hidden: d_model,
            loss_weight: 1.0,
            adapter: variant.is_tf(),
            dropout: 0.1,
        }
    }

    /// Structural checks. Per-head width is checked separately by
    /// [`MarroConfig::validate_head_width`] so tiny configs stay usable in tests.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.lstm_hidden == 0 || self.shift_hidden == 0 {
            return bad("widths must be positive".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            ));
        }
        if self.num_labels != NUM_ROLES {
            return bad(format!("num_labels must be {NUM_ROLES}, got {}", self.num_labels));
        }
        if !(self.loss_weight >= 0.0 && self.loss_weight.is_finite()) {
            return bad(format!("loss_weight must be finite and >= 0, got {}", self.loss_weight));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn validate_head_width(&self) -> Result<()> {
        self.validate()?;
        let w = self.d_model / self.heads;
        if !(32..=64).contains(&w) {
            return Err(Error::InvalidConfig(format!(
                "per-head width {w} outside [32, 64]"
            )));
        }
        Ok(())
    }

    /// Width of the shift BiLSTM output appended to each main position.
    pub fn shift_feature_dim(&self) -> usize {
        if self.variant.is_mtl() {
            2 * self.lstm_hidden
        } else {
            0
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShiftHead {
    pub fc1: Linear,
    pub fc2: Linear,
    pub lstm: BiLstm,
    pub out: Linear,
    pub crf: CrfLayer,
}

/// Intermediate results of the main path.
#[derive(Debug, Clone, Copy)]
pub struct MainForward {
    /// `S'`: embeddings after the adapter (the raw input without one).
    pub adapted: Var,
    /// `E_rhet`: encoder stack output.
    pub encoded: Var,
    /// Main BiLSTM output, `n × 2H`.
    pub hidden: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ShiftForward {
    /// `(n-1) × 2` emissions for the shift CRF.
    pub emissions: Var,
    /// Shift BiLSTM output, `(n-1) × 2H`.
    pub hidden: Var,
}

/// Layer structure of a model; parameter values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct MarroNet {
    pub config: MarroConfig,
    pub adapter: Option<Linear>,
    pub blocks: Vec<EncoderBlock>,
    pub lstm: BiLstm,
    pub shift: Option<ShiftHead>,
    pub out: Linear,
    pub crf: CrfLayer,
}

impl MarroNet {
    pub fn build(config: MarroConfig, store: &mut ParamStore, rng: &mut SplitMix64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let h = config.lstm_hidden;
        let adapter = config
            .adapter
            .then(|| Linear::new(store, "adapter", d, d, rng));
        let blocks = (0..config.blocks)
            .map(|i| EncoderBlock::new(store, &format!("encoder.{i}"), d, config.heads, config.dropout, rng))
            .collect::<Result<Vec<_>>>()?;
        let lstm = BiLstm::new(store, "lstm", d, h, rng);
        let shift = config.variant.is_mtl().then(|| {
            let sh = config.shift_hidden;
            ShiftHead {
                fc1: Linear::new(store, "shift.fc1", 2 * d, sh, rng),
                fc2: Linear::new(store, "shift.fc2", sh, sh, rng),
                lstm: BiLstm::new(store, "shift.lstm", sh + d, h, rng),
                out: Linear::new(store, "shift.out", 2 * h, 2, rng),
                crf: CrfLayer::new(store, "shift.crf", 2),
            }
        });
        let out = Linear::new(store, "out", 2 * h + config.shift_feature_dim(), config.num_labels, rng);
        let crf = CrfLayer::new(store, "crf", config.num_labels);
        Ok(Self {
            config,
            adapter,
            blocks,
            lstm,
            shift,
            out,
            crf,
        })
    }

    pub fn forward_main(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<MainForward> {
        let (n, d) = g.value(x).dims2()?;
        if n == 0 {
            return Err(Error::Shape("document has no sentences".into()));
        }
        if d != self.config.d_model {
            return Err(Error::Shape(format!(
                "embedding width {d} does not match d_model {}",
                self.config.d_model
            )));
        }
        let adapted = match &self.adapter {
            Some(a) => a.forward(g, s, x)?,
            None => x,
        };
        let encoded = encoder_forward(&self.blocks, g, s, adapted)?;
        let hidden = self.lstm.forward(g, s, encoded)?;
        Ok(MainForward {
            adapted,
            encoded,
            hidden,
        })
    }

    pub fn forward_shift(&self, g: &mut Graph, s: &ParamStore, main: &MainForward) -> Result<ShiftForward> {
        let head = self.shift.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("{} has no shift head", self.config.variant.display_name()))
        })?;
        let n = g.value(main.adapted).rows();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "shift prediction needs at least 2 sentences, got {n}"
            )));
        }
        let left = g.slice_rows(main.adapted, 0, n - 1)?;
        let right = g.slice_rows(main.adapted, 1, n - 1)?;
        let e_bin = g.concat_cols(&[left, right])?;
        let e = head.fc1.forward(g, s, e_bin)?;
        let e = g.relu(e);
        let e_bin2 = head.fc2.forward(g, s, e)?;
        let rhet = g.slice_rows(main.encoded, 0, n - 1)?;
        let e_rb = g.concat_cols(&[e_bin2, rhet])?;
        let hidden = head.lstm.forward(g, s, e_rb)?;
        let emissions = head.out.forward(g, s, hidden)?;
        Ok(ShiftForward { emissions, hidden })
    }

    /// Concatenate shift features onto the main BiLSTM output (a zero row
    /// pads the last position) and project to role emissions.
    pub fn fuse_and_emit(&self, g: &mut Graph, s: &ParamStore, main_hidden: Var, shift_hidden: Option<Var>) -> Result<Var> {
        if !self.config.variant.is_mtl() {
            return Err(Error::InvalidArgument(format!(
                "{} has no shift features to fuse",
                self.config.variant.display_name()
            )));
        }
        let (n, _) = g.value(main_hidden).dims2()?;
        let width = self.config.shift_feature_dim();
        let shift = match shift_hidden {
            Some(sh) => {
                let (m, w) = g.value(sh).dims2()?;
                if m + 1 != n || w != width {
                    return Err(Error::Shape(format!(
                        "shift features {m}×{w} do not align with {n} positions of width {width}"
                    )));
                }
                let pad = g.input(Tensor::zeros(vec![1, width]));
                g.concat_rows(&[sh, pad])?
            }
            None if n == 1 => g.input(Tensor::zeros(vec![1, width])),
            None => return Err(Error::Shape(format!("missing shift features for {n} positions"))),
        };
        let fused = g.concat_cols(&[main_hidden, shift])?;
        self.out.forward(g, s, fused)
    }

    fn emit(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<(Var, Option<ShiftForward>)> {
        let main = self.forward_main(g, s, x)?;
        if !self.config.variant.is_mtl() {
            return Ok((self.out.forward(g, s, main.hidden)?, None));
        }
        let shift = if g.value(x).rows() >= 2 {
            Some(self.forward_shift(g, s, &main)?)
        } else {
            None
        };
        let e = self.fuse_and_emit(g, s, main.hidden, shift.map(|f| f.hidden))?;
        Ok((e, shift))
    }

    /// Role emissions `n × 7`.
    pub fn emissions(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.emit(g, s, x)?.0)
    }

    /// `nll_main + λ·nll_shift`; the shift term is present for MTL variants
    /// on documents of two or more sentences.
    pub fn loss(&self, g: &mut Graph, s: &ParamStore, x: Var, gold: &[usize]) -> Result<Var> {
        let n = g.value(x).rows();
        if gold.len() != n {
            return Err(Error::Shape(format!("{} gold labels for {n} sentences", gold.len())));
        }
        if let Some(&bad) = gold.iter().find(|&&y| y >= self.config.num_labels) {
            return Err(Error::InvalidArgument(format!("gold label {bad} out of range")));
        }
        let (emissions, shift) = self.emit(g, s, x)?;
        let main = self.crf.nll(g, s, emissions, gold)?;
        match (shift, &self.shift) {
            (Some(sf), Some(head)) => {
                let shifts: Vec<usize> = shifts_of(gold).into_iter().map(usize::from).collect();
                let aux = head.crf.nll(g, s, sf.emissions, &shifts)?;
                let aux = g.scale(aux, self.config.loss_weight);
                g.add(main, aux)
            }
            _ => Ok(main),
        }
    }

    /// Viterbi decoding of the main CRF in eval mode.
    pub fn predict(&self, s: &ParamStore, x: &Tensor) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let e = self.emissions(&mut g, s, xv)?;
        self.crf.decode(s, g.value(e))
    }
}

/// A network together with its parameter values.
#[derive(Debug, Clone)]
pub struct MarroModel {
    pub net: MarroNet,
    pub params: ParamStore,
}

impl MarroModel {
    pub fn build(config: MarroConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = SplitMix64::new(seed);
        let net = MarroNet::build(config, &mut params, &mut rng)?;
        Ok(Self { net, params })
    }

    pub fn config(&self) -> &MarroConfig {
        &self.net.config
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Eval-mode emissions.
    pub fn emissions(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let e = self.net.emissions(&mut g, &self.params, xv)?;
        Ok(g.value(e).clone())
    }

    /// Eval-mode loss value.
    pub fn loss_value(&self, x: &Tensor, gold: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let l = self.net.loss(&mut g, &self.params, xv, gold)?;
        Ok(g.scalar(l))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.net.predict(&self.params, x)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let cfg = serde_json::to_value(&self.net.config).expect("config serializes");
        Checkpoint::from_store(&self.params, Some(cfg))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = ck
            .config
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no model config".into()))?;
        let cfg: MarroConfig =
            serde_json::from_value(cfg).map_err(|e| Error::Checkpoint(format!("bad model config: {e}")))?;
        let mut m = Self::build(cfg, 0)?;
        ck.restore_into(&mut m.params)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}
