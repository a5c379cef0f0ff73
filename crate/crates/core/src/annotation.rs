//! Pairwise inter-annotator agreement and majority-vote gold curation.
//!
//! Agreement between a key annotator and a response annotator counts the
//! positions where both chose the same label. Every sentence carries exactly
//! one label, so both denominators equal the sentence count and precision,
//! recall and F coincide per document.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::role::RhetoricalRole;

pub const DEFAULT_ANNOTATORS: [&str; 3] = ["A1", "A2", "A3"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub doc_id: String,
    pub annotations: BTreeMap<String, Vec<RhetoricalRole>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl Prf {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f_score = if precision + recall == 0.0 {
            0.0
        } else if precision == recall {
            precision
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub key: String,
    pub response: String,
    /// Document-averaged precision.
    pub precision: f64,
    /// Document-averaged recall.
    pub recall: f64,
    /// Document-averaged F.
    pub f_score: f64,
    /// Harmonic mean of the averaged precision and recall.
    pub f_of_means: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub documents: usize,
    pub per_pair: Vec<PairAgreement>,
    /// Mean of the pairwise F scores.
    pub overall_f: f64,
}

pub fn pair_agreement(key: &[RhetoricalRole], response: &[RhetoricalRole]) -> Result<Prf> {
    if key.len() != response.len() {
        return Err(Error::Annotation(format!(
            "sequence lengths differ: {} vs {}",
            key.len(),
            response.len()
        )));
    }
    if key.is_empty() {
        return Err(Error::Annotation("empty label sequences".into()));
    }
    let matched = key.iter().zip(response).filter(|(a, b)| a == b).count() as f64;
    Ok(Prf::from_pr(
        matched / response.len() as f64,
        matched / key.len() as f64,
    ))
}

/// Annotator pairs in the order (A1,A2), (A2,A3), (A1,A3) for three
/// annotators; in general, adjacent pairs first, then the rest.
pub fn annotator_pairs(annotators: &[&str]) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for w in annotators.windows(2) {
        pairs.push((w[0].to_string(), w[1].to_string()));
    }
    for i in 0..annotators.len() {
        for j in i + 2..annotators.len() {
            pairs.push((annotators[i].to_string(), annotators[j].to_string()));
        }
    }
    pairs
}

fn sequence<'a>(s: &'a AnnotationSet, who: &str) -> Result<&'a [RhetoricalRole]> {
    s.annotations
        .get(who)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Annotation(format!("document {:?} lacks annotator {who}", s.doc_id)))
}

/// Unweighted mean over documents of each document-level metric.
pub fn corpus_agreement(sets: &[AnnotationSet], annotators: &[&str]) -> Result<AgreementReport> {
    if annotators.len() < 2 {
        return Err(Error::Annotation("need at least two annotators".into()));
    }
    if sets.is_empty() {
        return Err(Error::Annotation("no annotated documents".into()));
    }
    let pairs = annotator_pairs(annotators);
    let mut per_pair = Vec::with_capacity(pairs.len());
    for (key, response) in pairs {
        let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
        for s in sets {
            let m = pair_agreement(sequence(s, &key)?, sequence(s, &response)?)
                .map_err(|e| Error::Annotation(format!("document {:?}: {e}", s.doc_id)))?;
            p += m.precision;
            r += m.recall;
            f += m.f_score;
        }
        let n = sets.len() as f64;
        let (p, r, f) = (p / n, r / n, f / n);
        per_pair.push(PairAgreement {
            key,
            response,
            precision: p,
            recall: r,
            f_score: f,
            f_of_means: Prf::from_pr(p, r).f_score,
        });
    }
    let overall_f = per_pair.iter().map(|p| p.f_score).sum::<f64>() / per_pair.len() as f64;
    Ok(AgreementReport {
        documents: sets.len(),
        per_pair,
        overall_f,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityGold {
    pub doc_id: String,
    pub labels: Vec<RhetoricalRole>,
    /// Positions where all three annotators disagreed.
    pub flagged: Vec<usize>,
}

/// Per-position label chosen by at least two of the three annotators. On a
/// three-way split the first annotator's label is kept and the position flagged.
pub fn majority_gold(s: &AnnotationSet, annotators: &[&str]) -> Result<MajorityGold> {
    if annotators.len() != 3 {
        return Err(Error::Annotation(format!(
            "majority vote needs exactly 3 annotators, got {}",
            annotators.len()
        )));
    }
    let a = sequence(s, annotators[0])?;
    let b = sequence(s, annotators[1])?;
    let c = sequence(s, annotators[2])?;
    if a.len() != b.len() || a.len() != c.len() {
        return Err(Error::Annotation(format!(
            "document {:?}: sequence lengths differ",
            s.doc_id
        )));
    }
    let mut labels = Vec::with_capacity(a.len());
    let mut flagged = Vec::new();
    for i in 0..a.len() {
        let label = if a[i] == b[i] || a[i] == c[i] {
            a[i]
        } else if b[i] == c[i] {
            b[i]
        } else {
            flagged.push(i);
            a[i]
        };
        labels.push(label);
    }
    Ok(MajorityGold {
        doc_id: s.doc_id.clone(),
        labels,
        flagged,
    })
}

/// JSON-Lines: `{"doc_id": ..., "annotations": {"A1": [...], ...}}` per line.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationSet>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let set: AnnotationSet = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(set);
    }
    Ok(out)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationSet>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use RhetoricalRole::*;

    fn set(doc: &str, seqs: &[(&str, Vec<RhetoricalRole>)]) -> AnnotationSet {
        AnnotationSet {
            doc_id: doc.into(),
            annotations: seqs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    #[test]
    fn pair_examples() {
        let m = pair_agreement(&[Fac, Fac, Arg], &[Fac, Arg, Arg]).unwrap();
        assert_eq!((m.precision, m.recall), (2.0 / 3.0, 2.0 / 3.0));
        assert!((m.f_score - 2.0 / 3.0).abs() < 1e-15);
        let m = pair_agreement(&[Sta, Pre], &[Sta, Pre]).unwrap();
        assert_eq!((m.precision, m.recall, m.f_score), (1.0, 1.0, 1.0));
        let m = pair_agreement(&[Fac, Fac], &[Arg, Ratio]).unwrap();
        assert_eq!((m.precision, m.recall, m.f_score), (0.0, 0.0, 0.0));
        assert!(pair_agreement(&[Fac], &[Fac, Fac]).is_err());
        assert!(pair_agreement(&[], &[]).is_err());
    }

    #[test]
    fn pair_order_matches_convention() {
        let pairs = annotator_pairs(&DEFAULT_ANNOTATORS);
        let names: Vec<_> = pairs.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        assert_eq!(names, ["A1-A2", "A2-A3", "A1-A3"]);
    }

    #[test]
    fn unweighted_document_mean() {
        let d1 = set("d1", &[("A1", vec![Fac, Fac]), ("A2", vec![Fac, Fac]), ("A3", vec![Fac, Fac])]);
        let d2 = set("d2", &[("A1", vec![Fac, Arg]), ("A2", vec![Fac, Fac]), ("A3", vec![Fac, Arg])]);
        let r = corpus_agreement(&[d1, d2], &DEFAULT_ANNOTATORS).unwrap();
        let a12 = &r.per_pair[0];
        assert_eq!((a12.key.as_str(), a12.response.as_str()), ("A1", "A2"));
        assert!((a12.f_score - 0.75).abs() < 1e-15);
        assert!((r.per_pair[2].f_score - 1.0).abs() < 1e-15);
        assert!((r.overall_f - (0.75 + 0.75 + 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_annotators_agree_fully() {
        let s = set("d", &[("A1", vec![Fac, Rpc]), ("A2", vec![Fac, Rpc]), ("A3", vec![Fac, Rpc])]);
        let r = corpus_agreement(&[s], &DEFAULT_ANNOTATORS).unwrap();
        assert_eq!(r.overall_f, 1.0);
        assert!(r.per_pair.iter().all(|p| p.precision == 1.0 && p.recall == 1.0));
    }

    #[test]
    fn missing_annotator_is_an_error() {
        let s = set("d", &[("A1", vec![Fac]), ("A2", vec![Fac])]);
        assert!(corpus_agreement(&[s], &DEFAULT_ANNOTATORS).is_err());
    }

    #[test]
    fn majority_examples() {
        let s = set(
            "d",
            &[("A1", vec![Fac, Fac, Sta]), ("A2", vec![Fac, Arg, Sta]), ("A3", vec![Arg, Ratio, Sta])],
        );
        let g = majority_gold(&s, &DEFAULT_ANNOTATORS).unwrap();
        assert_eq!(g.labels, vec![Fac, Fac, Sta]);
        assert_eq!(g.flagged, vec![1]);

        let s = set("d", &[("A1", vec![Arg]), ("A2", vec![Fac]), ("A3", vec![Fac])]);
        assert_eq!(majority_gold(&s, &DEFAULT_ANNOTATORS).unwrap().labels, vec![Fac]);

        let s = set("d", &[("A1", vec![Arg]), ("A2", vec![Fac, Fac]), ("A3", vec![Fac])]);
        assert!(majority_gold(&s, &DEFAULT_ANNOTATORS).is_err());
    }

    #[test]
    fn parses_annotation_lines() {
        let text = r#"{"doc_id":"d1","annotations":{"A1":["FAC","ARG"],"A2":["fac","ARG"],"A3":["FAC","RATIO"]}}"#;
        let sets = parse_annotations(text).unwrap();
        assert_eq!(sets[0].annotations["A2"], vec![Fac, Arg]);
        assert!(parse_annotations(r#"{"doc_id":"d1","annotations":{"A1":["NOPE"]}}"#).is_err());
    }
}
