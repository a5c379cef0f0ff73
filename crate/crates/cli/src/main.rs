mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use marro::annotation::{corpus_agreement, majority_gold, parse_annotations, DEFAULT_ANNOTATORS};
use marro::corpus::{corpus_stats, corpus_to_jsonl, derive_shifts, make_folds, parse_corpus, shift_rate, stats_csv, Corpus};
use marro::embeddings::{embed_document, EmbeddingFile, EmbeddingProvider, HashEmbedder};
use marro::llm::{build_few_shot, build_zero_shot, default_deck, run_llm_eval, select_exemplars, LlmEvalConfig, MockClient, PromptMode};
use marro::metrics::{evaluate_labels, metrics_csv, LabelUniverse};
use marro::model::{MarroConfig, MarroModel, Variant};
use marro::stats::{is_significant, t_test};
use marro::synth::{synth_corpus, synth_embeddings, SynthSpec};
use marro::tensor::Checkpoint;
use marro::train::{cross_validate, train, CvResult, TrainerConfig};
use marro::{Error, Result, RhetoricalRole};

use manifest::Recorder;

const SEED_ENV: &str = "MARRO_SEED";

#[derive(Parser, Debug)]
#[command(name = "marro", version, about = "Rhetorical role labeling for legal documents")]
struct Cli {
    /// TOML file with default values; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-role sentence counts as CSV
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise inter-annotator agreement and majority labels
    Iaa {
        #[arg(long)]
        annotations: PathBuf,
        /// Comma-separated annotator ids
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ANNOTATORS.map(String::from))]
        annotators: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label-shift sequences and the fraction of agreeing neighbours
    Shifts {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded document-level fold assignment
    Folds {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a whole corpus and write a checkpoint
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        trainer: TrainerArgs,
        /// Training report (loss curve, accuracy) as JSON
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-fold cross-validation
    Crossval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        trainer: TrainerArgs,
        #[arg(long)]
        k: Option<usize>,
        /// Folds trained concurrently
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        universe: Option<LabelUniverse>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a corpus with a trained checkpoint
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Per-label metrics CSV against the corpus labels
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        universe: Option<LabelUniverse>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Student's t-test on two score lists
    Ttest {
        /// JSON array of scores or a crossval result
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Unpaired test with unequal variances
        #[arg(long)]
        welch: bool,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an LLM prompt, or score a mock completion map over a corpus
    Prompt {
        #[arg(long)]
        mode: Option<PromptMode>,
        /// Segment to classify
        #[arg(long, required_unless_present = "mock")]
        input: Option<String>,
        /// Corpus supplying few-shot exemplars
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        exemplar_seed: Option<u64>,
        /// JSON completion map; evaluates every sentence of --corpus
        #[arg(long, requires = "corpus", conflicts_with = "input")]
        mock: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        universe: Option<LabelUniverse>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Deterministic synthetic corpus with planted role vocabulary
    Synth {
        #[arg(long)]
        docs: Option<usize>,
        #[arg(long)]
        sentences: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write hash embeddings of this width
        #[arg(long, requires = "embeddings_out")]
        dim: Option<usize>,
        #[arg(long)]
        embeddings_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Binary sentence-embedding file
    #[arg(long, required_unless_present = "hash_dim", conflicts_with = "hash_dim")]
    embeddings: Option<PathBuf>,
    /// Embed sentences with the built-in hashing embedder of this width
    #[arg(long)]
    hash_dim: Option<usize>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, conflicts_with = "head_width")]
    heads: Option<usize>,
    /// Per-head width; sets heads = embedding width / head width
    #[arg(long)]
    head_width: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// Weight of the shift loss
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainerArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Stop once training accuracy reaches this value
    #[arg(long)]
    target_accuracy: Option<f64>,
}

/// Defaults read from `--config`.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    variant: Option<Variant>,
    heads: Option<usize>,
    head_width: Option<usize>,
    blocks: Option<usize>,
    lambda: Option<f64>,
    dropout: Option<f64>,
    epochs: Option<usize>,
    lr: Option<f64>,
    clip_norm: Option<f64>,
    eval_every: Option<usize>,
    target_accuracy: Option<f64>,
    k: Option<usize>,
    jobs: Option<usize>,
    universe: Option<LabelUniverse>,
    alpha: Option<f64>,
    mode: Option<PromptMode>,
    exemplar_seed: Option<u64>,
    docs: Option<usize>,
    sentences: Option<usize>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Flag, then config file, then `MARRO_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn read_text(rec: &mut Recorder, path: &Path) -> Result<String> {
    String::from_utf8(rec.input(path)?).map_err(|_| Error::InvalidArgument(format!("{} is not UTF-8", path.display())))
}

fn read_corpus(rec: &mut Recorder, path: &Path) -> Result<Corpus> {
    let text = read_text(rec, path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_corpus(&name, &text)
}

fn read_provider(rec: &mut Recorder, data: &DataArgs) -> Result<Box<dyn EmbeddingProvider>> {
    match (&data.embeddings, data.hash_dim) {
        (Some(p), _) => Ok(Box::new(EmbeddingFile::from_bytes(&rec.input(p)?)?)),
        (None, Some(0)) => Err(Error::InvalidArgument("--hash-dim must be positive".into())),
        (None, Some(d)) => Ok(Box::new(HashEmbedder::new(d))),
        (None, None) => Err(Error::InvalidArgument("one of --embeddings or --hash-dim is required".into())),
    }
}

/// Preset for the variant with widths tied to the embedding width. Without
/// an explicit head count the preset's count is kept when its head width is
/// in range; otherwise the fewest heads with width at most 64 are used.
fn model_config(args: &ModelArgs, file: &FileConfig, dim: usize) -> Result<MarroConfig> {
    let variant = args.variant.or(file.variant).unwrap_or(Variant::Mtl);
    let preset = MarroConfig::preset(variant);
    let heads = match (args.heads, args.head_width) {
        (Some(h), _) => h,
        (None, Some(w)) => heads_for_width(dim, w)?,
        (None, None) => match (file.heads, file.head_width) {
            (Some(h), _) => h,
            (None, Some(w)) => heads_for_width(dim, w)?,
            (None, None) => default_heads(dim, preset.heads),
        },
    };
    let cfg = MarroConfig {
        d_model: dim,
        heads,
        lstm_hidden: (dim / 2).max(1),
        shift_hidden: dim,
        blocks: args.blocks.or(file.blocks).unwrap_or(preset.blocks),
        loss_weight: args.lambda.or(file.lambda).unwrap_or(preset.loss_weight),
        dropout: args.dropout.or(file.dropout).unwrap_or(preset.dropout),
        ..preset
    };
    cfg.validate_head_width()?;
    Ok(cfg)
}

fn heads_for_width(dim: usize, width: usize) -> Result<usize> {
    if width == 0 || !dim.is_multiple_of(width) {
        return Err(Error::InvalidConfig(format!("head width {width} does not divide embedding width {dim}")));
    }
    Ok(dim / width)
}

fn default_heads(dim: usize, preset: usize) -> usize {
    if dim.is_multiple_of(preset) && (32..=64).contains(&(dim / preset)) {
        return preset;
    }
    (1..=dim).find(|h| dim.is_multiple_of(*h) && dim / h <= 64).unwrap_or(1)
}

fn trainer_config(args: &TrainerArgs, file: &FileConfig) -> Result<TrainerConfig> {
    let d = TrainerConfig::default();
    let cfg = TrainerConfig {
        learning_rate: args.lr.or(file.lr).unwrap_or(d.learning_rate),
        epochs: args.epochs.or(file.epochs).unwrap_or(d.epochs),
        clip_norm: args.clip_norm.or(file.clip_norm).unwrap_or(d.clip_norm),
        seed: resolve_seed(args.seed, file.seed)?,
        eval_every: args.eval_every.or(file.eval_every).unwrap_or(d.eval_every),
        target_accuracy: args.target_accuracy.or(file.target_accuracy),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

fn read_scores(rec: &mut Recorder, path: &Path) -> Result<Vec<f64>> {
    let text = read_text(rec, path)?;
    let bad = |e: serde_json::Error| Error::InvalidArgument(format!("{}: {e}", path.display()));
    let v: Value = serde_json::from_str(&text).map_err(bad)?;
    if v.is_array() {
        serde_json::from_value(v).map_err(bad)
    } else {
        let cv: CvResult = serde_json::from_value(v).map_err(bad)?;
        Ok(cv.fold_f1s())
    }
}

fn run(cli: Cli) -> Result<PathBuf> {
    let file = load_config(cli.config.as_deref())?;
    let name = match &cli.command {
        Command::Stats { .. } => "stats",
        Command::Iaa { .. } => "iaa",
        Command::Shifts { .. } => "shifts",
        Command::Folds { .. } => "folds",
        Command::Train { .. } => "train",
        Command::Crossval { .. } => "crossval",
        Command::Predict { .. } => "predict",
        Command::Ttest { .. } => "ttest",
        Command::Prompt { .. } => "prompt",
        Command::Synth { .. } => "synth",
    };
    let mut rec = Recorder::new(name);
    if let Some(p) = &cli.config {
        rec.input(p)?;
    }
    let (out, config, seed) = match cli.command {
        Command::Stats { corpus, out } => {
            let c = read_corpus(&mut rec, &corpus)?;
            rec.output(&out, stats_csv(&corpus_stats(&c)?).as_bytes())?;
            (out, json!({}), None)
        }
        Command::Iaa { annotations, annotators, out } => {
            let sets = parse_annotations(&read_text(&mut rec, &annotations)?)?;
            let ids: Vec<&str> = annotators.iter().map(String::as_str).collect();
            let agreement = corpus_agreement(&sets, &ids)?;
            let majority = if ids.len() == 3 {
                sets.iter().map(|s| majority_gold(s, &ids)).collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            rec.output(&out, &to_json(&json!({ "agreement": agreement, "majority": majority })))?;
            (out, json!({ "annotators": annotators }), None)
        }
        Command::Shifts { corpus, out } => {
            let c = read_corpus(&mut rec, &corpus)?;
            let seqs = c.documents.iter().map(derive_shifts).collect::<Result<Vec<_>>>()?;
            let rate = shift_rate(&c)?;
            rec.output(&out, &to_json(&json!({ "shift_rate": rate, "documents": seqs })))?;
            (out, json!({}), None)
        }
        Command::Folds { corpus, k, seed, out } => {
            let c = read_corpus(&mut rec, &corpus)?;
            let k = k.or(file.k).unwrap_or(5);
            let seed = resolve_seed(seed, file.seed)?;
            rec.output(&out, &to_json(&make_folds(&c, k, seed)?))?;
            (out, json!({ "k": k }), Some(seed))
        }
        Command::Train { data, model, trainer, report, out } => {
            let c = read_corpus(&mut rec, &data.corpus)?;
            let provider = read_provider(&mut rec, &data)?;
            let mcfg = model_config(&model, &file, provider.dim())?;
            let tcfg = trainer_config(&trainer, &file)?;
            let mut m = MarroModel::build(mcfg.clone(), tcfg.seed)?;
            let tr = train(&mut m, provider.as_ref(), &c.documents, &tcfg)?;
            rec.output(&out, &m.checkpoint().to_bytes())?;
            if let Some(r) = &report {
                rec.output(r, &to_json(&tr))?;
            }
            let seed = tcfg.seed;
            (out, json!({ "model": mcfg, "trainer": tcfg }), Some(seed))
        }
        Command::Crossval { data, model, trainer, k, jobs, universe, out } => {
            let c = read_corpus(&mut rec, &data.corpus)?;
            let provider = read_provider(&mut rec, &data)?;
            let mcfg = model_config(&model, &file, provider.dim())?;
            let tcfg = trainer_config(&trainer, &file)?;
            let k = k.or(file.k).unwrap_or(5);
            let jobs = jobs.or(file.jobs).unwrap_or(1);
            let universe = universe.or(file.universe).unwrap_or_default();
            let folds = make_folds(&c, k, tcfg.seed)?;
            let cv = cross_validate(&mcfg, &tcfg, &c, &folds, provider.as_ref(), universe, jobs)?;
            rec.output(&out, &to_json(&cv))?;
            let seed = tcfg.seed;
            (out, json!({ "k": k, "jobs": jobs, "universe": universe, "model": mcfg, "trainer": tcfg }), Some(seed))
        }
        Command::Predict { model, data, metrics, universe, out } => {
            let m = MarroModel::from_checkpoint(&Checkpoint::from_bytes(&rec.input(&model)?)?)?;
            let c = read_corpus(&mut rec, &data.corpus)?;
            let provider = read_provider(&mut rec, &data)?;
            if provider.dim() != m.config().d_model {
                return Err(Error::Shape(format!(
                    "embedding width {} but the model expects {}",
                    provider.dim(),
                    m.config().d_model
                )));
            }
            let mut lines = String::new();
            let mut pred = Vec::with_capacity(c.documents.len());
            for d in &c.documents {
                let p = m.predict(&embed_document(provider.as_ref(), d)?)?;
                let labels: Vec<RhetoricalRole> = p.iter().filter_map(|&c| RhetoricalRole::from_code(c)).collect();
                lines.push_str(&serde_json::to_string(&json!({ "doc_id": d.doc_id, "labels": labels })).expect("json"));
                lines.push('\n');
                pred.push(p);
            }
            rec.output(&out, lines.as_bytes())?;
            let universe = universe.or(file.universe).unwrap_or_default();
            if let Some(path) = &metrics {
                let gold = c.documents.iter().map(|d| d.label_codes()).collect::<Result<Vec<_>>>()?;
                rec.output(path, metrics_csv(&evaluate_labels(&gold, &pred, universe)?).as_bytes())?;
            }
            (out, json!({ "model": m.config(), "universe": universe }), None)
        }
        Command::Ttest { a, b, welch, alpha, out } => {
            let xa = read_scores(&mut rec, &a)?;
            let xb = read_scores(&mut rec, &b)?;
            let alpha = alpha.or(file.alpha).unwrap_or(0.05);
            let t = t_test(&xa, &xb, !welch)?;
            let result = json!({
                "t": t.t,
                "p": t.p,
                "df": t.df,
                "paired": t.paired,
                "alpha": alpha,
                "significant": is_significant(t.p, alpha),
            });
            rec.output(&out, &to_json(&result))?;
            (out, json!({ "paired": !welch, "alpha": alpha }), None)
        }
        Command::Prompt { mode, input, pool, exemplar_seed, mock, corpus, universe, out } => {
            let mode = mode.or(file.mode).unwrap_or(PromptMode::Zero);
            let seed = resolve_seed(exemplar_seed, file.exemplar_seed.or(file.seed))?;
            let pool = match &pool {
                Some(p) => Some(read_corpus(&mut rec, p)?),
                None => None,
            };
            match (mock, input) {
                (Some(mock), _) => {
                    let client = MockClient::from_json(&read_text(&mut rec, &mock)?)?;
                    let docs = read_corpus(&mut rec, corpus.as_deref().expect("clap requires --corpus"))?;
                    let pool_docs = pool.as_ref().unwrap_or(&docs);
                    let cfg = LlmEvalConfig {
                        mode,
                        exemplar_seed: seed,
                        universe: universe.or(file.universe).unwrap_or_default(),
                        ..LlmEvalConfig::default()
                    };
                    let report = run_llm_eval(&client, &docs.documents, &pool_docs.documents, &cfg)?;
                    rec.output(&out, &to_json(&report))?;
                    (out, serde_json::to_value(&cfg).expect("json"), Some(seed))
                }
                (None, Some(input)) => {
                    let deck = default_deck();
                    let text = match mode {
                        PromptMode::Zero => build_zero_shot(&deck, &input)?,
                        PromptMode::Few => {
                            let pool = pool.ok_or_else(|| Error::InvalidArgument("few-shot prompts need --pool".into()))?;
                            build_few_shot(&deck, &select_exemplars(&pool.documents, seed)?, &input)?
                        }
                    };
                    rec.output(&out, text.as_bytes())?;
                    (out, json!({ "mode": mode, "input": input }), Some(seed))
                }
                (None, None) => return Err(Error::InvalidArgument("one of --input or --mock is required".into())),
            }
        }
        Command::Synth { docs, sentences, seed, dim, embeddings_out, out } => {
            let spec = SynthSpec {
                docs: docs.or(file.docs).unwrap_or(20),
                sentences: sentences.or(file.sentences).unwrap_or(30),
                seed: resolve_seed(seed, file.seed)?,
            };
            let c = synth_corpus(spec)?;
            rec.output(&out, corpus_to_jsonl(&c).as_bytes())?;
            let dim = match &embeddings_out {
                Some(path) => {
                    let dim = dim.unwrap_or(64);
                    rec.output(path, &synth_embeddings(&c, dim)?.to_bytes())?;
                    Some(dim)
                }
                None => None,
            };
            (out, json!({ "docs": spec.docs, "sentences": spec.sentences, "dim": dim }), Some(spec.seed))
        }
    };
    rec.finish(&out, config, seed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
