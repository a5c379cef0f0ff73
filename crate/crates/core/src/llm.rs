//! Zero- and few-shot prompting baseline: prompt construction, completion
//! parsing, a pluggable completion client and the evaluation loop.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_predictions, LabelUniverse, MetricsReport};
use crate::rng::SplitMix64;
use crate::role::{RhetoricalRole, NUM_ROLES};

pub const TASK_LINE: &str = "Given a segment of a legal case document as enclosed within angular brackets, enlist the likely label that apply for this segment.";
pub const LABELS_HEADER: &str = "Following are the labels along with their descriptions.";
pub const EXAMPLES_HEADER: &str = "Following is a list of example text for each label:";
pub const INSTRUCTION_LINE: &str = "Instruction: Learn from the examples provided. Avoid generating fabricated or invalid label.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCard {
    pub role: RhetoricalRole,
    pub display_name: String,
    pub description: String,
}

impl LabelCard {
    pub fn for_role(role: RhetoricalRole) -> Self {
        Self {
            role,
            display_name: role.display_name(),
            description: role.description().to_string(),
        }
    }
}

/// The seven cards in role-code order.
pub fn default_deck() -> Vec<LabelCard> {
    RhetoricalRole::ALL.into_iter().map(LabelCard::for_role).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub span: String,
    pub role: RhetoricalRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_k: 1,
            top_p: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Zero,
    Few,
}

impl std::str::FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero" | "zero-shot" | "zero_shot" => Ok(Self::Zero),
            "few" | "few-shot" | "few_shot" | "one-shot" | "one_shot" => Ok(Self::Few),
            _ => Err(Error::InvalidArgument(format!("unknown prompt mode {s:?} (expected zero or few)"))),
        }
    }
}

/// Cards reordered by role code; every role exactly once.
fn ordered_deck(deck: &[LabelCard]) -> Result<Vec<&LabelCard>> {
    let mut slots: [Option<&LabelCard>; NUM_ROLES] = [None; NUM_ROLES];
    for card in deck {
        let slot = &mut slots[card.role.code()];
        if slot.is_some() {
            return Err(Error::InvalidArgument(format!("deck lists {} twice", card.role)));
        }
        *slot = Some(card);
    }
    RhetoricalRole::ALL
        .into_iter()
        .map(|r| slots[r.code()].ok_or(Error::MissingRole(r)))
        .collect()
}

fn label_section(deck: &[LabelCard]) -> Result<String> {
    let mut out = format!("{TASK_LINE}\n\n{LABELS_HEADER}\n");
    for (i, c) in ordered_deck(deck)?.into_iter().enumerate() {
        out.push_str(&format!("{}. \"{}\": \"{}\"\n", i + 1, c.display_name, c.description));
    }
    Ok(out)
}

fn closing(input: &str) -> String {
    format!("\n{INSTRUCTION_LINE}\n\nInput segment: \u{27E8}{input}\u{27E9}")
}

pub fn build_zero_shot(deck: &[LabelCard], input: &str) -> Result<String> {
    Ok(label_section(deck)? + &closing(input))
}

pub fn build_few_shot(deck: &[LabelCard], exemplars: &[Exemplar], input: &str) -> Result<String> {
    let cards = ordered_deck(deck)?;
    let mut by_role: [Option<&Exemplar>; NUM_ROLES] = [None; NUM_ROLES];
    for e in exemplars {
        if e.span.trim().is_empty() {
            return Err(Error::InvalidArgument(format!("empty exemplar span for {}", e.role)));
        }
        let slot = &mut by_role[e.role.code()];
        if slot.is_some() {
            return Err(Error::DuplicateExemplar(e.role));
        }
        *slot = Some(e);
    }
    let mut out = label_section(deck)?;
    out.push_str(&format!("\n{EXAMPLES_HEADER}\n"));
    for (i, card) in cards.iter().enumerate() {
        let e = by_role[card.role.code()].ok_or(Error::MissingRole(card.role))?;
        out.push_str(&format!(
            "{}. The text \"{}\" is of type \"{}\".\n",
            i + 1,
            e.span,
            card.display_name
        ));
    }
    Ok(out + &closing(input))
}

/// One exemplar per role, drawn uniformly from the labelled sentences of
/// `pool` with the given seed.
pub fn select_exemplars(pool: &[Document], seed: u64) -> Result<Vec<Exemplar>> {
    let mut candidates: Vec<Vec<&str>> = vec![Vec::new(); NUM_ROLES];
    for d in pool {
        for s in &d.sentences {
            if let Some(r) = s.label {
                if !s.text.trim().is_empty() {
                    candidates[r.code()].push(&s.text);
                }
            }
        }
    }
    let mut rng = SplitMix64::new(seed);
    RhetoricalRole::ALL
        .into_iter()
        .map(|r| {
            let c = &candidates[r.code()];
            if c.is_empty() {
                return Err(Error::MissingRole(r));
            }
            Ok(Exemplar {
                span: c[rng.below(c.len() as u64) as usize].to_string(),
                role: r,
            })
        })
        .collect()
}

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_phrase(hay: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && hay.windows(phrase.len()).any(|w| w == phrase)
}

/// Extract the single role named in a completion. Full display names
/// ("Facts (FAC)") take priority over bare names and abbreviations.
pub fn parse_label(completion: &str) -> Result<RhetoricalRole> {
    let hay = words(completion);
    let display: Vec<RhetoricalRole> = RhetoricalRole::ALL
        .into_iter()
        .filter(|r| contains_phrase(&hay, &words(&r.display_name())))
        .collect();
    let found = if display.is_empty() {
        RhetoricalRole::ALL
            .into_iter()
            .filter(|r| contains_phrase(&hay, &words(r.name())) || contains_phrase(&hay, &words(r.abbrev())))
            .collect()
    } else {
        display
    };
    match found.as_slice() {
        [] => Err(Error::Unparseable(completion.to_string())),
        [r] => Ok(*r),
        many => Err(Error::Ambiguous {
            text: completion.to_string(),
            roles: many.to_vec(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub params: CompletionParams,
}

/// Anything that turns a prompt into a completion. Errors are plain
/// messages; the caller attaches sentence identity.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 500,
            multiplier: 2.0,
        }
    }
}

pub fn complete_with_retry(
    client: &dyn CompletionClient,
    request: &CompletionRequest,
    policy: &RetryPolicy,
) -> std::result::Result<String, String> {
    let mut wait = policy.initial_backoff_ms as f64;
    let mut last = String::from("no attempts made");
    for attempt in 0..policy.max_attempts.max(1) {
        if attempt > 0 && wait > 0.0 {
            thread::sleep(Duration::from_millis(wait as u64));
            wait *= policy.multiplier;
        }
        match client.complete(request) {
            Ok(text) => return Ok(text),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Text between the last pair of angular brackets of a prompt.
pub fn input_segment(prompt: &str) -> Option<&str> {
    let start = prompt.rfind('\u{27E8}')? + '\u{27E8}'.len_utf8();
    let end = prompt.rfind('\u{27E9}')?;
    (end >= start).then(|| &prompt[start..end])
}

/// Canned completions keyed by full prompt or by input segment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockClient {
    pub responses: HashMap<String, String>,
    #[serde(default)]
    pub default: Option<String>,
}

impl MockClient {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("bad mock client map: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Answers every sentence of `docs` with its gold display name.
    pub fn echo_gold(docs: &[Document]) -> Self {
        let responses = docs
            .iter()
            .flat_map(|d| &d.sentences)
            .filter_map(|s| s.label.map(|l| (s.text.clone(), l.display_name())))
            .collect();
        Self {
            responses,
            default: None,
        }
    }
}

impl CompletionClient for MockClient {
    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, String> {
        self.responses
            .get(&request.prompt)
            .or_else(|| input_segment(&request.prompt).and_then(|s| self.responses.get(s)))
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| "mock client has no response for this prompt".to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEvalConfig {
    pub mode: PromptMode,
    pub exemplar_seed: u64,
    pub params: CompletionParams,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub universe: LabelUniverse,
}

impl Default for LlmEvalConfig {
    fn default() -> Self {
        Self {
            mode: PromptMode::Zero,
            exemplar_seed: 0,
            params: CompletionParams::default(),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            universe: LabelUniverse::Observed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEvalReport {
    pub metrics: MetricsReport,
    pub unparseable: usize,
    pub ambiguous: usize,
    pub exemplars: Vec<Exemplar>,
}

/// Prompt the client once per sentence of `docs`. Completions that do not
/// name exactly one role count as wrong. Exemplars for few-shot prompts come
/// from `pool`.
pub fn run_llm_eval(
    client: &dyn CompletionClient,
    docs: &[Document],
    pool: &[Document],
    cfg: &LlmEvalConfig,
) -> Result<LlmEvalReport> {
    let deck = default_deck();
    let exemplars = match cfg.mode {
        PromptMode::Zero => Vec::new(),
        PromptMode::Few => select_exemplars(pool, cfg.exemplar_seed)?,
    };
    let mut jobs = Vec::new();
    let mut gold = Vec::with_capacity(docs.len());
    for d in docs {
        gold.push(d.label_codes()?);
        for s in &d.sentences {
            let prompt = match cfg.mode {
                PromptMode::Zero => build_zero_shot(&deck, &s.text)?,
                PromptMode::Few => build_few_shot(&deck, &exemplars, &s.text)?,
            };
            jobs.push((d.doc_id.as_str(), s.index, prompt));
        }
    }
    let pool_threads = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let answers: Vec<Result<Result<RhetoricalRole>>> = pool_threads.install(|| {
        jobs.par_iter()
            .map(|(doc_id, index, prompt)| {
                let req = CompletionRequest {
                    prompt: prompt.clone(),
                    params: cfg.params,
                };
                let text = complete_with_retry(client, &req, &cfg.retry).map_err(|message| Error::Client {
                    doc_id: doc_id.to_string(),
                    index: *index,
                    message,
                })?;
                Ok(parse_label(&text))
            })
            .collect()
    });
    let (mut unparseable, mut ambiguous) = (0, 0);
    let mut flat = Vec::with_capacity(answers.len());
    for a in answers {
        flat.push(match a? {
            Ok(r) => Some(r.code()),
            Err(Error::Ambiguous { .. }) => {
                ambiguous += 1;
                None
            }
            Err(_) => {
                unparseable += 1;
                None
            }
        });
    }
    let mut pred = Vec::with_capacity(docs.len());
    let mut it = flat.into_iter();
    for g in &gold {
        pred.push(it.by_ref().take(g.len()).collect::<Vec<_>>());
    }
    Ok(LlmEvalReport {
        metrics: evaluate_predictions(&gold, &pred, cfg.universe)?,
        unparseable,
        ambiguous,
        exemplars,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use RhetoricalRole::*;

    #[test]
    fn zero_shot_layout() {
        let p = build_zero_shot(&default_deck(), "Appeal dismissed.").unwrap();
        let lines: Vec<&str> = p.lines().collect();
        assert_eq!(lines[0], TASK_LINE);
        assert_eq!(lines[1], "");
        assert_eq!(lines[2], LABELS_HEADER);
        assert_eq!(
            lines[3],
            "1. \"Facts (FAC)\": \"This label refers to the facts pertinent to the case.\""
        );
        assert_eq!(lines.len(), 3 + 7 + 4);
        assert!(p.ends_with("Input segment: \u{27E8}Appeal dismissed.\u{27E9}"));
        assert!(build_zero_shot(&default_deck(), "").unwrap().ends_with("\u{27E8}\u{27E9}"));
    }

    #[test]
    fn deck_must_be_complete() {
        let mut deck = default_deck();
        deck.retain(|c| c.role != Rpc);
        assert!(matches!(build_zero_shot(&deck, "x"), Err(Error::MissingRole(Rpc))));
        let mut shuffled = default_deck();
        shuffled.reverse();
        assert_eq!(
            build_zero_shot(&shuffled, "x").unwrap(),
            build_zero_shot(&default_deck(), "x").unwrap()
        );
    }

    fn exemplars() -> Vec<Exemplar> {
        RhetoricalRole::ALL
            .into_iter()
            .map(|r| Exemplar {
                span: format!("example for {}", r.abbrev()),
                role: r,
            })
            .collect()
    }

    #[test]
    fn few_shot_exemplar_rules() {
        let mut ex = exemplars();
        ex.reverse();
        let p = build_few_shot(&default_deck(), &ex, "x").unwrap();
        assert!(p.contains("1. The text \"example for FAC\" is of type \"Facts (FAC)\".\n2. The text \"example for RLC\""));
        let mut dup = exemplars();
        dup[1].role = Fac;
        assert!(matches!(build_few_shot(&default_deck(), &dup, "x"), Err(Error::DuplicateExemplar(Fac))));
        let short = &exemplars()[..6];
        assert!(matches!(build_few_shot(&default_deck(), short, "x"), Err(Error::MissingRole(Rpc))));
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_label("Facts (FAC)").unwrap(), Fac);
        assert_eq!(parse_label("The label is RATIO.").unwrap(), Ratio);
        assert_eq!(parse_label("ratio of the decision").unwrap(), Ratio);
        assert_eq!(parse_label("Ruling by Lower Court (RLC)").unwrap(), Rlc);
        assert!(matches!(parse_label("Could be FAC or ARG"), Err(Error::Ambiguous { .. })));
        assert!(matches!(parse_label("unknown"), Err(Error::Unparseable(_))));
        assert!(matches!(parse_label("factual"), Err(Error::Unparseable(_))));
        // display names outrank the bare words they contain
        assert_eq!(parse_label("Statute (STA), not a precedent").unwrap(), Sta);
        for r in RhetoricalRole::ALL {
            assert_eq!(parse_label(&r.display_name()).unwrap(), r);
            assert_eq!(parse_label(&r.abbrev().to_lowercase()).unwrap(), r);
        }
    }

    fn doc() -> Document {
        Document::new(
            "d",
            None,
            [
                ("The accused fled.".to_string(), Some(Fac)),
                ("Counsel submitted otherwise.".to_string(), Some(Arg)),
                ("Appeal dismissed.".to_string(), Some(Rpc)),
            ],
        )
    }

    #[test]
    fn echo_mock_scores_perfectly() {
        let docs = vec![doc()];
        let client = MockClient::echo_gold(&docs);
        for mode in [PromptMode::Zero, PromptMode::Few] {
            let pool = vec![Document::new(
                "p",
                None,
                RhetoricalRole::ALL.into_iter().map(|r| (format!("pool {r}"), Some(r))),
            )];
            let cfg = LlmEvalConfig {
                mode,
                ..Default::default()
            };
            let r = run_llm_eval(&client, &docs, &pool, &cfg).unwrap();
            assert_eq!(r.metrics.macro_f1, 1.0);
            assert_eq!(r.unparseable, 0);
        }
    }

    #[test]
    fn unknown_completions_score_zero() {
        let client = MockClient {
            responses: HashMap::new(),
            default: Some("unknown".into()),
        };
        let r = run_llm_eval(&client, &[doc()], &[], &LlmEvalConfig::default()).unwrap();
        assert_eq!(r.metrics.macro_f1, 0.0);
        assert_eq!(r.unparseable, 3);
    }

    #[test]
    fn client_failure_names_the_sentence() {
        let client = MockClient::default();
        let cfg = LlmEvalConfig {
            retry: RetryPolicy {
                max_attempts: 2,
                initial_backoff_ms: 0,
                multiplier: 1.0,
            },
            ..Default::default()
        };
        match run_llm_eval(&client, &[doc()], &[], &cfg) {
            Err(Error::Client { doc_id, .. }) => assert_eq!(doc_id, "d"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exemplar_selection_is_seeded() {
        let pool: Vec<Document> = (0..3)
            .map(|i| {
                Document::new(
                    format!("p{i}"),
                    None,
                    RhetoricalRole::ALL.into_iter().map(move |r| (format!("{r} from {i}"), Some(r))),
                )
            })
            .collect();
        assert_eq!(select_exemplars(&pool, 4).unwrap(), select_exemplars(&pool, 4).unwrap());
        assert!(matches!(select_exemplars(&[doc()], 4), Err(Error::MissingRole(Rlc))));
    }

    #[test]
    fn retry_recovers_from_transient_failures() {
        use std::sync::atomic::{AtomicU32, Ordering};
        struct Flaky(AtomicU32);
        impl CompletionClient for Flaky {
            fn complete(&self, _: &CompletionRequest) -> std::result::Result<String, String> {
                if self.0.fetch_add(1, Ordering::SeqCst) < 2 {
                    Err("busy".into())
                } else {
                    Ok("FAC".into())
                }
            }
        }
        let req = CompletionRequest {
            prompt: "p".into(),
            params: CompletionParams::default(),
        };
        let policy = RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 1,
            multiplier: 1.0,
        };
        assert_eq!(complete_with_retry(&Flaky(AtomicU32::new(0)), &req, &policy).unwrap(), "FAC");
        let policy = RetryPolicy {
            max_attempts: 2,
            ..policy
        };
        assert!(complete_with_retry(&Flaky(AtomicU32::new(0)), &req, &policy).is_err());
    }
}
