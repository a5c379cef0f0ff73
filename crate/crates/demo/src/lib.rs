//! Browser bindings over the core crate. Each exported function takes plain
//! values and returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use marro::crf::{forward_backward, viterbi, CrfParams};
use marro::embeddings::{EmbeddingProvider, HashEmbedder};
use marro::llm::{build_few_shot, build_zero_shot, default_deck, select_exemplars, PromptMode};
use marro::nn::MultiHeadAttention;
use marro::rng::SplitMix64;
use marro::synth::{synth_corpus, SynthSpec};
use marro::tensor::{Graph, ParamStore, Tensor};
use marro::{Error, Result, RhetoricalRole};

#[derive(Debug, Serialize)]
pub struct CrfView {
    pub labels: Vec<&'static str>,
    pub path: Vec<usize>,
    pub path_score: f64,
    pub log_z: f64,
    pub path_probability: f64,
    /// `n×L` unary marginals, row-major.
    pub marginals: Vec<Vec<f64>>,
}

/// Decode an `n×7` emission grid whose transition matrix adds `stickiness`
/// on the diagonal and nothing elsewhere.
pub fn crf_view(emissions: &[f64], n: usize, stickiness: f64) -> Result<CrfView> {
    let l = RhetoricalRole::ALL.len();
    if n == 0 || emissions.len() != n * l {
        return Err(Error::Shape(format!("expected {n}×{l} emissions, got {} values", emissions.len())));
    }
    let mut transitions = vec![0.0; l * l];
    for i in 0..l {
        transitions[i * l + i] = stickiness;
    }
    let p = CrfParams::new(l, transitions, vec![0.0; l], vec![0.0; l])?;
    let e = Tensor::matrix(n, l, emissions.to_vec())?;
    let (path, score) = viterbi(&p, &e)?;
    let fb = forward_backward(&p, &e)?;
    Ok(CrfView {
        labels: RhetoricalRole::ALL.iter().map(|r| r.abbrev()).collect(),
        path,
        path_score: score,
        log_z: fb.log_z,
        path_probability: (score - fb.log_z).exp(),
        marginals: fb.marginals.chunks(l).map(<[f64]>::to_vec).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct AttentionView {
    pub sentences: Vec<String>,
    /// One `n×n` row-stochastic matrix per head.
    pub heads: Vec<Vec<Vec<f64>>>,
}

/// Self-attention weights of a randomly initialized layer over the
/// hash-embedded non-empty lines of `text`.
pub fn attention_view(text: &str, dim: usize, heads: usize, seed: u64) -> Result<AttentionView> {
    let sentences: Vec<String> = text.lines().map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    if sentences.is_empty() {
        return Err(Error::InvalidArgument("enter at least one sentence".into()));
    }
    let h = HashEmbedder::new(dim);
    let rows = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| h.embed("demo", i, s))
        .collect::<Result<Vec<_>>>()?;
    let mut store = ParamStore::new();
    let mut rng = SplitMix64::new(seed);
    let mha = MultiHeadAttention::new(&mut store, "attn", dim, heads, &mut rng)?;
    let mut g = Graph::new();
    let x = g.input(Tensor::from_rows(&rows)?);
    let (_, weights) = mha.forward_with_weights(&mut g, &store, x)?;
    Ok(AttentionView {
        sentences,
        heads: weights.into_iter().map(|w| g.value(w).to_rows()).collect(),
    })
}

/// Zero-shot or few-shot prompt; few-shot exemplars are drawn with `seed`
/// from a synthetic corpus.
pub fn prompt_text(mode: &str, input: &str, seed: u64) -> Result<String> {
    let deck = default_deck();
    match mode.parse::<PromptMode>()? {
        PromptMode::Zero => build_zero_shot(&deck, input),
        PromptMode::Few => {
            let pool = synth_corpus(SynthSpec {
                docs: 20,
                sentences: 30,
                seed: 1,
            })?;
            build_few_shot(&deck, &select_exemplars(&pool.documents, seed)?, input)
        }
    }
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("view serializes"))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = decodeCrf)]
pub fn decode_crf(emissions: Vec<f64>, n: usize, stickiness: f64) -> std::result::Result<String, JsValue> {
    to_js(crf_view(&emissions, n, stickiness))
}

#[wasm_bindgen(js_name = attentionMap)]
pub fn attention_map(text: &str, dim: usize, heads: usize, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(attention_view(text, dim, heads, seed as u64))
}

#[wasm_bindgen(js_name = buildPrompt)]
pub fn build_prompt(mode: &str, input: &str, seed: u32) -> std::result::Result<String, JsValue> {
    prompt_text(mode, input, seed as u64).map_err(|e| JsValue::from_str(&e.to_string()))
}
