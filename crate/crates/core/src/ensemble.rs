//! Combining per-model softmax outputs into one prediction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    #[default]
    AverageConfidence,
    MajorityVote,
}

impl std::str::FromStr for VoteRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "average_confidence" => Ok(VoteRule::AverageConfidence),
            "majority" | "majority_vote" => Ok(VoteRule::MajorityVote),
            _ => Err(Error::InvalidArgument(format!("unknown vote rule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceVector {
    pub model: String,
    scores: Vec<f64>,
}

impl ConfidenceVector {
    /// Scores must be finite, non-negative and sum to 1 within 1e-6.
    pub fn new(model: impl Into<String>, scores: Vec<f64>) -> Result<Self> {
        let model = model.into();
        if scores.is_empty() {
            return Err(Error::Validation(format!("{model}: empty score vector")));
        }
        if let Some((i, s)) = scores.iter().enumerate().find(|(_, s)| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Validation(format!("{model}: scores[{i}] = {s}")));
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Validation(format!("{model}: scores sum to {sum}")));
        }
        Ok(Self { model, scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.scores)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDecision {
    pub label: usize,
    /// Mean confidence of the winning label across models.
    pub mean_score: f64,
    /// Each model's own argmax, in input order.
    pub votes: Vec<usize>,
    pub rule: VoteRule,
}

// First maximum wins, so ties go to the lowest index.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check(vectors: &[ConfidenceVector]) -> Result<usize> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("no confidence vectors".into()))?;
    let n = first.scores.len();
    if let Some(v) = vectors.iter().find(|v| v.scores.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} labels, {} has {n}",
            v.model,
            v.scores.len(),
            first.model
        )));
    }
    Ok(n)
}

// Per-label means. Summing each label's values in sorted order makes the
// result independent of model order down to the last bit.
fn means(vectors: &[ConfidenceVector], labels: usize) -> Vec<f64> {
    let mut column = Vec::with_capacity(vectors.len());
    (0..labels)
        .map(|l| {
            column.clear();
            column.extend(vectors.iter().map(|v| v.scores[l]));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / vectors.len() as f64
        })
        .collect()
}

pub fn average_confidence(vectors: &[ConfidenceVector]) -> Result<EnsembleDecision> {
    let n = check(vectors)?;
    let m = means(vectors, n);
    let label = argmax(&m);
    Ok(EnsembleDecision {
        label,
        mean_score: m[label],
        votes: vectors.iter().map(ConfidenceVector::argmax).collect(),
        rule: VoteRule::AverageConfidence,
    })
}

/// Most common per-model argmax. Ties go to the higher mean confidence,
/// then the lower label.
pub fn majority_vote(vectors: &[ConfidenceVector]) -> Result<EnsembleDecision> {
    let n = check(vectors)?;
    let m = means(vectors, n);
    let votes: Vec<usize> = vectors.iter().map(ConfidenceVector::argmax).collect();
    let mut counts = BTreeMap::new();
    for &v in &votes {
        *counts.entry(v).or_insert(0usize) += 1;
    }
    // BTreeMap iterates labels ascending; only strictly better replaces.
    let mut best: Option<(usize, usize)> = None;
    for (&label, &count) in &counts {
        let better = match best {
            None => true,
            Some((b, bc)) => count > bc || (count == bc && m[label] > m[b]),
        };
        if better {
            best = Some((label, count));
        }
    }
    let label = best.expect("at least one vote").0;
    Ok(EnsembleDecision {
        label,
        mean_score: m[label],
        votes,
        rule: VoteRule::MajorityVote,
    })
}

pub fn decide(rule: VoteRule, vectors: &[ConfidenceVector]) -> Result<EnsembleDecision> {
    match rule {
        VoteRule::AverageConfidence => average_confidence(vectors),
        VoteRule::MajorityVote => majority_vote(vectors),
    }
}

/// One line of a per-model score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub image: String,
    pub scores: Vec<f64>,
}

/// Scores of one model keyed by image name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScores {
    pub model: String,
    pub scores: BTreeMap<String, Vec<f64>>,
}

impl ModelScores {
    pub fn parse(model: impl Into<String>, text: &str) -> Result<Self> {
        let model = model.into();
        let mut scores = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScoreLine = crate::json::from_str_with_path(line)
                .map_err(|e| Error::Validation(format!("{model} line {}: {e}", i + 1)))?;
            if scores.insert(rec.image.clone(), rec.scores).is_some() {
                return Err(Error::Validation(format!(
                    "{model} line {}: duplicate image {:?}",
                    i + 1,
                    rec.image
                )));
            }
        }
        Ok(Self { model, scores })
    }

    /// Reads a JSON-lines file; the model id is the file stem.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(model, &text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VoteOutcome {
    Ok {
        image: String,
        #[serde(flatten)]
        decision: EnsembleDecision,
    },
    /// Some models have no scores for this image.
    Incomplete { image: String, missing: Vec<String> },
}

impl VoteOutcome {
    pub fn image(&self) -> &str {
        match self {
            VoteOutcome::Ok { image, .. } | VoteOutcome::Incomplete { image, .. } => image,
        }
    }
}

/// Joins score files on image name and decides every image, sorted by name.
pub fn vote_join(models: &[ModelScores], rule: VoteRule) -> Result<Vec<VoteOutcome>> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no score files".into()));
    }
    let images: BTreeSet<&String> = models.iter().flat_map(|m| m.scores.keys()).collect();
    images
        .into_iter()
        .map(|image| {
            let missing: Vec<String> = models
                .iter()
                .filter(|m| !m.scores.contains_key(image))
                .map(|m| m.model.clone())
                .collect();
            if !missing.is_empty() {
                return Ok(VoteOutcome::Incomplete {
                    image: image.clone(),
                    missing,
                });
            }
            let vectors: Vec<ConfidenceVector> = models
                .iter()
                .map(|m| ConfidenceVector::new(m.model.clone(), m.scores[image].clone()))
                .collect::<Result<_>>()
                .map_err(|e| Error::Validation(format!("{image}: {e}")))?;
            let decision = decide(rule, &vectors).map_err(|e| Error::Validation(format!("{image}: {e}")))?;
            Ok(VoteOutcome::Ok {
                image: image.clone(),
                decision,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(scores: &[f64]) -> ConfidenceVector {
        ConfidenceVector::new("m", scores.to_vec()).unwrap()
    }

    #[test]
    fn average_examples() {
        assert_eq!(average_confidence(&[cv(&[0.2, 0.5, 0.3])]).unwrap().label, 1);
        let d = average_confidence(&[cv(&[0.6, 0.4]), cv(&[0.3, 0.7])]).unwrap();
        assert_eq!(d.label, 1);
        assert!((d.mean_score - 0.55).abs() < 1e-12);
        assert_eq!(d.votes, vec![0, 1]);
        // exact tie goes to the lower label
        assert_eq!(average_confidence(&[cv(&[0.5, 0.5])]).unwrap().label, 0);
        assert_eq!(average_confidence(&[cv(&[0.25, 0.75]), cv(&[0.75, 0.25])]).unwrap().label, 0);
    }

    #[test]
    fn majority_examples() {
        let a = cv(&[0.9, 0.1]);
        let b = cv(&[0.2, 0.8]);
        assert_eq!(majority_vote(&[a.clone(), a.clone(), b.clone()]).unwrap().label, 0);
        // one vote each: higher mean wins
        let a = cv(&[0.55, 0.45]);
        let b = cv(&[0.25, 0.75]);
        assert_eq!(majority_vote(&[a, b]).unwrap().label, 1);
        // tied count and tied mean: lower label
        let a = cv(&[0.6, 0.4]);
        let b = cv(&[0.4, 0.6]);
        assert_eq!(majority_vote(&[b, a]).unwrap().label, 0);
    }

    #[test]
    fn errors() {
        assert!(average_confidence(&[]).is_err());
        assert!(majority_vote(&[cv(&[1.0]), cv(&[0.5, 0.5])]).is_err());
        assert!(ConfidenceVector::new("m", vec![0.5, 0.6]).is_err());
        assert!(ConfidenceVector::new("m", vec![-0.1, 1.1]).is_err());
        assert!(ConfidenceVector::new("m", vec![f64::NAN]).is_err());
        assert!(ConfidenceVector::new("m", vec![]).is_err());
    }

    #[test]
    fn join_reports_incomplete() {
        let a = ModelScores::parse(
            "a",
            "{\"image\":\"x\",\"scores\":[0.9,0.1]}\n{\"image\":\"y\",\"scores\":[0.5,0.5]}\n",
        )
        .unwrap();
        let b = ModelScores::parse("b", "{\"image\":\"x\",\"scores\":[0.2,0.8]}\n").unwrap();
        let out = vote_join(&[a, b], VoteRule::AverageConfidence).unwrap();
        assert_eq!(out.len(), 2);
        match &out[0] {
            VoteOutcome::Ok { image, decision } => {
                assert_eq!(image, "x");
                assert_eq!(decision.label, 0);
            }
            o => panic!("{o:?}"),
        }
        assert_eq!(
            out[1],
            VoteOutcome::Incomplete {
                image: "y".into(),
                missing: vec!["b".into()]
            }
        );
        let line = serde_json::to_string(&out[1]).unwrap();
        assert!(line.contains("\"status\":\"incomplete\""), "{line}");
        let line = serde_json::to_string(&out[0]).unwrap();
        assert!(line.contains("\"label\":0") && line.contains("\"rule\":\"average_confidence\""), "{line}");
    }

    #[test]
    fn parse_errors_name_line() {
        let e = ModelScores::parse("a", "{\"image\":\"x\",\"scores\":[1]}\n{\"image\":3}\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = ModelScores::parse("a", "{\"image\":\"x\",\"scores\":[1]}\n{\"image\":\"x\",\"scores\":[1]}").unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
    }
}
