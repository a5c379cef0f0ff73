//! Per-document SGD training, evaluation and k-fold cross-validation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, FoldSplit};
use crate::embeddings::{embed_document, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_labels, LabelUniverse, MetricsReport};
use crate::model::{MarroConfig, MarroModel};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Epochs between training-accuracy checks; 0 disables them.
    pub eval_every: usize,
    /// Stop once a check reaches this training accuracy.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 80,
            clip_norm: 5.0,
            seed: 0,
            eval_every: 0,
            target_accuracy: None,
        }
    }
}

impl TrainerConfig {
    /// Learning rate used for the Indian corpus.
    pub const LR_IN: f64 = 0.1;
    /// Learning rate used for the UK corpus.
    pub const LR_UK: f64 = 0.001;

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig(format!("clip_norm must be > 0, got {}", self.clip_norm)));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidConfig(format!("target_accuracy {t} not in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-document loss of each completed epoch.
    pub loss_curve: Vec<f64>,
    pub steps: usize,
    pub epochs_run: usize,
    /// Training accuracy at the last check, if any ran.
    pub train_accuracy: Option<f64>,
}

/// A document's embedding matrix and gold role codes.
#[derive(Debug, Clone)]
pub struct Example {
    pub doc_id: String,
    pub x: Tensor,
    pub gold: Vec<usize>,
}

pub fn prepare(provider: &dyn EmbeddingProvider, docs: &[Document]) -> Result<Vec<Example>> {
    docs.iter()
        .map(|d| {
            Ok(Example {
                doc_id: d.doc_id.clone(),
                x: embed_document(provider, d)?,
                gold: d.label_codes()?,
            })
        })
        .collect()
}

/// Scale every gradient so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().flat_map(|g| g.iter_mut()).for_each(|v| *v *= s);
    }
    norm
}

pub fn accuracy(model: &MarroModel, examples: &[Example]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for ex in examples {
        let pred = model.predict(&ex.x)?;
        hit += pred.iter().zip(&ex.gold).filter(|(a, b)| a == b).count();
        total += ex.gold.len();
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

pub fn train(model: &mut MarroModel, provider: &dyn EmbeddingProvider, docs: &[Document], cfg: &TrainerConfig) -> Result<TrainReport> {
    if provider.dim() != model.config().d_model {
        return Err(Error::InvalidConfig(format!(
            "embedding width {} does not match d_model {}",
            provider.dim(),
            model.config().d_model
        )));
    }
    train_examples(model, &prepare(provider, docs)?, cfg)
}

pub fn train_examples(model: &mut MarroModel, examples: &[Example], cfg: &TrainerConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training documents".into()));
    }
    let mut order_rng = SplitMix64::new(cfg.seed);
    let mut dropout_rng = SplitMix64::new(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = TrainReport {
        loss_curve: Vec::with_capacity(cfg.epochs),
        steps: 0,
        epochs_run: 0,
        train_accuracy: None,
    };
    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut total = 0.0;
        for &i in &order {
            let ex = &examples[i];
            let mut g = Graph::training(dropout_rng);
            let x = g.input(ex.x.clone());
            let loss = model.net.loss(&mut g, &model.params, x, &ex.gold)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss on document {:?} at epoch {}",
                    ex.doc_id,
                    epoch + 1
                )));
            }
            g.backward(loss)?;
            let mut grads = g.param_grads(&model.params);
            dropout_rng = g.into_rng().expect("training graph keeps its rng");
            clip_global_norm(&mut grads, cfg.clip_norm);
            model.params.sgd_step(&grads, cfg.learning_rate);
            total += value;
            report.steps += 1;
        }
        report.loss_curve.push(total / examples.len() as f64);
        report.epochs_run = epoch + 1;
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
            let acc = accuracy(model, examples)?;
            report.train_accuracy = Some(acc);
            if cfg.target_accuracy.is_some_and(|t| acc >= t) {
                break;
            }
        }
    }
    Ok(report)
}

pub fn evaluate(model: &MarroModel, provider: &dyn EmbeddingProvider, docs: &[Document], universe: LabelUniverse) -> Result<MetricsReport> {
    evaluate_examples(model, &prepare(provider, docs)?, universe)
}

pub fn evaluate_examples(model: &MarroModel, examples: &[Example], universe: LabelUniverse) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no documents to evaluate".into()));
    }
    let gold: Vec<Vec<usize>> = examples.iter().map(|e| e.gold.clone()).collect();
    let pred = examples
        .iter()
        .map(|e| model.predict(&e.x))
        .collect::<Result<Vec<_>>>()?;
    evaluate_labels(&gold, &pred, universe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub train_docs: usize,
    pub test_docs: usize,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    pub model: MarroConfig,
    pub trainer: TrainerConfig,
    pub per_fold: Vec<FoldResult>,
    pub mean_macro_f1: f64,
    /// Sample standard deviation (n − 1) across folds.
    pub std_macro_f1: f64,
}

impl CvResult {
    pub fn fold_f1s(&self) -> Vec<f64> {
        self.per_fold.iter().map(|f| f.report.macro_f1).collect()
    }
}

fn run_fold(
    f: usize,
    model_cfg: &MarroConfig,
    trainer: &TrainerConfig,
    corpus: &Corpus,
    folds: &FoldSplit,
    provider: &dyn EmbeddingProvider,
    universe: LabelUniverse,
) -> Result<FoldResult> {
    let test_ids = folds.fold(f);
    if test_ids.is_empty() {
        return Err(Error::InvalidArgument(format!("fold {f} has no documents")));
    }
    let (test, train_docs): (Vec<Document>, Vec<Document>) = corpus
        .documents
        .iter()
        .cloned()
        .partition(|d| folds.fold_of(&d.doc_id) == Some(f));
    if train_docs.is_empty() {
        return Err(Error::InvalidArgument(format!("fold {f} leaves no training documents")));
    }
    let seed = trainer.seed.wrapping_add(f as u64);
    let mut model = MarroModel::build(model_cfg.clone(), seed)?;
    let cfg = TrainerConfig {
        seed,
        ..trainer.clone()
    };
    let tr = train(&mut model, provider, &train_docs, &cfg)?;
    let report = evaluate(&model, provider, &test, universe)?;
    Ok(FoldResult {
        fold: f,
        seed,
        train_docs: train_docs.len(),
        test_docs: test.len(),
        epochs_run: tr.epochs_run,
        final_loss: tr.loss_curve.last().copied().unwrap_or(f64::NAN),
        report,
    })
}

/// Train a fresh model per fold (seed = base + fold) and evaluate it on the
/// held-out documents. Folds run on up to `jobs` threads; results do not
/// depend on scheduling.
pub fn cross_validate(
    model_cfg: &MarroConfig,
    trainer: &TrainerConfig,
    corpus: &Corpus,
    folds: &FoldSplit,
    provider: &dyn EmbeddingProvider,
    universe: LabelUniverse,
    jobs: usize,
) -> Result<CvResult> {
    model_cfg.validate()?;
    trainer.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let per_fold = pool.install(|| {
        (0..folds.k)
            .into_par_iter()
            .map(|f| run_fold(f, model_cfg, trainer, corpus, folds, provider, universe))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(summarize(model_cfg.clone(), trainer.clone(), per_fold))
}

/// Cross-validation over an explicit fold order, serially. Used to check
/// that fold execution order does not affect the result.
pub fn cross_validate_in_order(
    model_cfg: &MarroConfig,
    trainer: &TrainerConfig,
    corpus: &Corpus,
    folds: &FoldSplit,
    provider: &dyn EmbeddingProvider,
    universe: LabelUniverse,
    order: &[usize],
) -> Result<CvResult> {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..folds.k).collect::<Vec<_>>() {
        return Err(Error::InvalidArgument("fold order must be a permutation of 0..k".into()));
    }
    let mut per_fold = Vec::with_capacity(folds.k);
    for &f in order {
        per_fold.push(run_fold(f, model_cfg, trainer, corpus, folds, provider, universe)?);
    }
    per_fold.sort_by_key(|r| r.fold);
    Ok(summarize(model_cfg.clone(), trainer.clone(), per_fold))
}

fn summarize(model: MarroConfig, trainer: TrainerConfig, per_fold: Vec<FoldResult>) -> CvResult {
    let f1: Vec<f64> = per_fold.iter().map(|r| r.report.macro_f1).collect();
    let n = f1.len() as f64;
    let mean = f1.iter().sum::<f64>() / n;
    let std = if f1.len() > 1 {
        (f1.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    CvResult {
        k: per_fold.len(),
        model,
        trainer,
        per_fold,
        mean_macro_f1: mean,
        std_macro_f1: std,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::make_folds;
    use crate::embeddings::HashEmbedder;
    use crate::model::Variant;
    use crate::role::{RhetoricalRole, NUM_ROLES};

    fn tiny(variant: Variant) -> MarroConfig {
        MarroConfig {
            variant,
            d_model: 8,
            heads: 2,
            blocks: 1,
            lstm_hidden: 4,
            num_labels: NUM_ROLES,
            shift_hidden: 8,
            loss_weight: 1.0,
            adapter: false,
            dropout: 0.1,
        }
    }

    fn docs() -> Vec<Document> {
        use RhetoricalRole::*;
        let mk = |id: &str, labels: &[RhetoricalRole]| {
            Document::new(
                id,
                None,
                labels
                    .iter()
                    .enumerate()
                    .map(|(i, r)| (format!("{} sentence {i} of {id}", r.abbrev()), Some(*r))),
            )
        };
        vec![
            mk("a", &[Fac, Fac, Arg, Ratio]),
            mk("b", &[Fac, Sta, Ratio, Rpc]),
            mk("c", &[Fac, Pre, Ratio]),
            mk("d", &[Rlc, Arg, Ratio, Rpc]),
            mk("e", &[Fac, Ratio, Ratio, Rpc]),
        ]
    }

    #[test]
    fn one_epoch_is_one_step_per_document() {
        let mut m = MarroModel::build(tiny(Variant::Mtl), 1).unwrap();
        let cfg = TrainerConfig {
            epochs: 1,
            ..Default::default()
        };
        let r = train(&mut m, &HashEmbedder::new(8), &docs()[..3], &cfg).unwrap();
        assert_eq!(r.steps, 3);
        assert_eq!(r.loss_curve.len(), 1);
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let run = || {
            let mut m = MarroModel::build(tiny(Variant::Mtl), 2).unwrap();
            let cfg = TrainerConfig {
                epochs: 3,
                seed: 5,
                ..Default::default()
            };
            train(&mut m, &HashEmbedder::new(8), &docs(), &cfg).unwrap();
            m.checkpoint().to_bytes()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut m = MarroModel::build(tiny(Variant::Base), 3).unwrap();
        let before = m.params.clone();
        let cfg = TrainerConfig {
            learning_rate: 0.0,
            epochs: 2,
            ..Default::default()
        };
        train(&mut m, &HashEmbedder::new(8), &docs(), &cfg).unwrap();
        assert_eq!(m.params, before);
    }

    #[test]
    fn loss_decreases_on_toy_corpus() {
        let mut m = MarroModel::build(tiny(Variant::Base), 4).unwrap();
        let cfg = TrainerConfig {
            epochs: 15,
            ..Default::default()
        };
        let r = train(&mut m, &HashEmbedder::new(8), &docs(), &cfg).unwrap();
        assert!(r.loss_curve.last().unwrap() < &r.loss_curve[0], "{:?}", r.loss_curve);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut m = MarroModel::build(tiny(Variant::Base), 4).unwrap();
        assert!(train(&mut m, &HashEmbedder::new(6), &docs(), &TrainerConfig::default()).is_err());
        let bad = TrainerConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(train(&mut m, &HashEmbedder::new(8), &docs(), &bad).is_err());
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Some(vec![3.0, 4.0]), None, Some(vec![12.0])];
        let n = clip_global_norm(&mut g, 6.5);
        assert_eq!(n, 13.0);
        assert_eq!(g[0].as_ref().unwrap(), &vec![1.5, 2.0]);
        assert_eq!(g[2].as_ref().unwrap(), &vec![6.0]);
    }

    #[test]
    fn cross_validation_is_order_independent() {
        let corpus = Corpus::new("toy", docs()).unwrap();
        let folds = make_folds(&corpus, 5, 3).unwrap();
        let trainer = TrainerConfig {
            epochs: 2,
            seed: 9,
            ..Default::default()
        };
        let p = HashEmbedder::new(8);
        let cfg = tiny(Variant::Mtl);
        let a = cross_validate(&cfg, &trainer, &corpus, &folds, &p, LabelUniverse::Observed, 3).unwrap();
        assert_eq!(a.k, 5);
        assert_eq!(a.per_fold.len(), 5);
        let mean = a.fold_f1s().iter().sum::<f64>() / 5.0;
        assert!((a.mean_macro_f1 - mean).abs() < 1e-15);
        let b = cross_validate_in_order(&cfg, &trainer, &corpus, &folds, &p, LabelUniverse::Observed, &[4, 2, 0, 3, 1])
            .unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
