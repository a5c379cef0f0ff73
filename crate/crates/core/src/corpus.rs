//! Labeled corpora: JSON-Lines I/O, role statistics, label-shift sequences,
//! and document-level cross-validation folds.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::role::{RhetoricalRole, NUM_ROLES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub label: Option<RhetoricalRole>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub category: Option<String>,
    pub sentences: Vec<Sentence>,
}

impl Document {
    /// Builds a document from `(text, label)` pairs, numbering sentences in order.
    pub fn new(
        doc_id: impl Into<String>,
        category: Option<String>,
        sentences: impl IntoIterator<Item = (String, Option<RhetoricalRole>)>,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            category,
            sentences: sentences
                .into_iter()
                .enumerate()
                .map(|(index, (text, label))| Sentence { index, text, label })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Gold labels; fails on the first unlabeled sentence.
    pub fn labels(&self) -> Result<Vec<RhetoricalRole>> {
        self.sentences
            .iter()
            .map(|s| {
                s.label.ok_or_else(|| Error::Unlabeled {
                    doc_id: self.doc_id.clone(),
                    index: s.index,
                })
            })
            .collect()
    }

    pub fn label_codes(&self) -> Result<Vec<usize>> {
        Ok(self.labels()?.into_iter().map(RhetoricalRole::code).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub documents: Vec<Document>,
}

impl Corpus {
    /// Validates doc_id uniqueness and non-empty documents, and renumbers sentences.
    pub fn new(name: impl Into<String>, mut documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &mut documents {
            if !seen.insert(d.doc_id.clone()) {
                return Err(Error::DuplicateDocId(d.doc_id.clone()));
            }
            if d.sentences.is_empty() {
                return Err(Error::EmptyDocument(d.doc_id.clone()));
            }
            for (i, s) in d.sentences.iter_mut().enumerate() {
                s.index = i;
            }
        }
        Ok(Self {
            name: name.into(),
            documents,
        })
    }

    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    /// Documents whose ids satisfy `keep`, in corpus order.
    pub fn filter(&self, mut keep: impl FnMut(&Document) -> bool) -> Vec<Document> {
        self.documents.iter().filter(|d| keep(d)).cloned().collect()
    }
}

#[derive(Deserialize)]
struct RawDocument {
    doc_id: String,
    #[serde(default)]
    category: Option<String>,
    sentences: Vec<RawSentence>,
}

#[derive(Serialize, Deserialize)]
struct RawSentence {
    text: String,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Serialize)]
struct RawDocumentOut<'a> {
    doc_id: &'a str,
    category: &'a Option<String>,
    sentences: Vec<RawSentenceOut<'a>>,
}

#[derive(Serialize)]
struct RawSentenceOut<'a> {
    text: &'a str,
    label: Option<&'static str>,
}

/// Parses JSON-Lines corpus text. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_corpus(name: &str, text: &str) -> Result<Corpus> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        let mut sentences = Vec::with_capacity(raw.sentences.len());
        for (index, s) in raw.sentences.into_iter().enumerate() {
            let label = match s.label {
                None => None,
                Some(l) => Some(l.parse::<RhetoricalRole>().map_err(|_| Error::UnknownLabel {
                    doc_id: raw.doc_id.clone(),
                    label: l.clone(),
                })?),
            };
            sentences.push(Sentence {
                index,
                text: s.text,
                label,
            });
        }
        docs.push(Document {
            doc_id: raw.doc_id,
            category: raw.category,
            sentences,
        });
    }
    Corpus::new(name, docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_corpus(&name, &text)
}

/// One JSON object per line, LF-terminated.
pub fn corpus_to_jsonl(c: &Corpus) -> String {
    let mut out = String::new();
    for d in &c.documents {
        let raw = RawDocumentOut {
            doc_id: &d.doc_id,
            category: &d.category,
            sentences: d
                .sentences
                .iter()
                .map(|s| RawSentenceOut {
                    text: &s.text,
                    label: s.label.map(RhetoricalRole::abbrev),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&raw).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(c: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, corpus_to_jsonl(c)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleStat {
    pub role: RhetoricalRole,
    pub count: usize,
    pub fraction: f64,
}

/// Per-role sentence counts in role-code order.
pub fn corpus_stats(c: &Corpus) -> Result<Vec<RoleStat>> {
    let mut counts = [0usize; NUM_ROLES];
    for d in &c.documents {
        for r in d.labels()? {
            counts[r.code()] += 1;
        }
    }
    let total = c.num_sentences();
    if total == 0 {
        return Err(Error::InvalidArgument("corpus has no sentences".into()));
    }
    Ok(RhetoricalRole::ALL
        .iter()
        .map(|&role| RoleStat {
            role,
            count: counts[role.code()],
            fraction: counts[role.code()] as f64 / total as f64,
        })
        .collect())
}

/// `role,count,fraction` CSV with fractions to four decimals and a `TOTAL` row.
pub fn stats_csv(stats: &[RoleStat]) -> String {
    let mut out = String::from("role,count,fraction\n");
    let mut total = 0;
    let mut frac = 0.0;
    for s in stats {
        out.push_str(&format!("{},{},{:.4}\n", s.role, s.count, s.fraction));
        total += s.count;
        frac += s.fraction;
    }
    out.push_str(&format!("TOTAL,{total},{frac:.4}\n"));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSequence {
    pub doc_id: String,
    pub shifts: Vec<u8>,
}

/// `shifts[i] = 1` iff sentence `i` and `i + 1` carry different roles.
pub fn derive_shifts(d: &Document) -> Result<ShiftSequence> {
    Ok(ShiftSequence {
        doc_id: d.doc_id.clone(),
        shifts: shifts_of(&d.labels()?),
    })
}

pub fn shifts_of<T: PartialEq>(labels: &[T]) -> Vec<u8> {
    labels.windows(2).map(|w| u8::from(w[0] != w[1])).collect()
}

/// Fraction of within-document adjacent pairs whose labels agree.
pub fn shift_rate(c: &Corpus) -> Result<f64> {
    let mut same = 0usize;
    let mut pairs = 0usize;
    for d in &c.documents {
        let s = derive_shifts(d)?;
        pairs += s.shifts.len();
        same += s.shifts.iter().filter(|&&v| v == 0).count();
    }
    if pairs == 0 {
        return Err(Error::InvalidArgument(
            "no document has two or more sentences".into(),
        ));
    }
    Ok(same as f64 / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    /// Doc ids in fold `f`, sorted.
    pub fn fold(&self, f: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &v)| v == f)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn fold_of(&self, doc_id: &str) -> Option<usize> {
        self.assignment.get(doc_id).copied()
    }
}

/// Seeded Fisher-Yates shuffle of the lexicographically sorted doc ids,
/// then round-robin assignment, so the split is independent of file order.
pub fn make_folds(c: &Corpus, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    if k > c.documents.len() {
        return Err(Error::InvalidArgument(format!(
            "{k} folds for {} documents",
            c.documents.len()
        )));
    }
    let mut ids: Vec<&str> = c.documents.iter().map(|d| d.doc_id.as_str()).collect();
    ids.sort_unstable();
    SplitMix64::new(seed).shuffle(&mut ids);
    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), i % k))
        .collect();
    Ok(FoldSplit { k, seed, assignment })
}
