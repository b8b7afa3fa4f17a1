//! Null-injected candidate re-ranking.
//!
//! Each candidate list gets one extra NULL entry standing for "new concept".
//! A [`PairScorer`] assigns a logit to every entry; the softmax over those
//! logits gives the confidence, and the argmax gives the prediction.

use serde::{Deserialize, Serialize};

use crate::candidates::{Candidate, CandidateList};
use crate::error::{Error, Result};
use crate::kb::{Label, Prediction, QueryAtom};

pub const PREFERRED_MARKER: &str = " (Preferred)";
pub const NO_PREFERRED_MARKER: &str = " (No Preferred Candidate)";
pub const NULL_TEXT: &str = "NULL";
/// Per-side character cap on texts sent to an external scorer. Markers are
/// always kept whole; the term itself is shortened to make room.
pub const MAX_SIDE_CHARS: usize = 256;

fn with_marker(base: &str, marker: &str) -> String {
    let room = MAX_SIDE_CHARS.saturating_sub(marker.chars().count());
    let mut out: String = base.chars().take(room).collect();
    out.push_str(marker);
    out
}

/// Builds the (query, candidate) text pair for one list entry. `None` is the
/// NULL entry.
pub fn format_pair(query: &str, candidate: Option<&Candidate>, has_rba_synonyms: bool) -> (String, String) {
    let query_text = if has_rba_synonyms {
        with_marker(query, "")
    } else {
        with_marker(query, NO_PREFERRED_MARKER)
    };
    let candidate_text = match candidate {
        None => NULL_TEXT.to_string(),
        Some(c) if c.rba_preferred => with_marker(&c.representative_string, PREFERRED_MARKER),
        Some(c) => with_marker(&c.representative_string, ""),
    };
    (query_text, candidate_text)
}

/// One request of the scorer wire protocol. The last candidate is always NULL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: String,
    pub query: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: String,
    pub logits: Vec<f64>,
}

pub fn build_request(q: &QueryAtom, list: &CandidateList) -> ScoreRequest {
    let (query, _) = format_pair(&q.string, None, list.has_rba_synonyms);
    let mut candidates: Vec<String> = list
        .entries
        .iter()
        .map(|c| format_pair(&q.string, Some(c), list.has_rba_synonyms).1)
        .collect();
    candidates.push(NULL_TEXT.to_string());
    ScoreRequest {
        id: q.atom_id.clone(),
        query,
        candidates,
    }
}

/// Anything that can score a candidate list plus its NULL entry.
pub trait PairScorer: Send + Sync {
    /// One logit per list entry followed by the NULL logit.
    fn logits(&self, q: &QueryAtom, list: &CandidateList) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredList {
    pub query_atom_id: String,
    /// Candidate logits in list order, NULL last.
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl ScoredList {
    pub fn from_logits(query_atom_id: &str, logits: Vec<f64>) -> Result<Self> {
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFiniteLogit(query_atom_id.to_string()));
        }
        let probabilities = softmax(&logits);
        Ok(Self {
            query_atom_id: query_atom_id.to_string(),
            logits,
            probabilities,
        })
    }
}

pub fn score_list(q: &QueryAtom, list: &CandidateList, scorer: &dyn PairScorer) -> Result<ScoredList> {
    let logits = scorer.logits(q, list)?;
    let want = list.entries.len() + 1;
    if logits.len() != want {
        return Err(Error::Scorer {
            id: q.atom_id.clone(),
            message: format!("expected {want} logits, got {}", logits.len()),
        });
    }
    ScoredList::from_logits(&q.atom_id, logits)
}

/// Index of the winning entry. NULL (the last entry) only wins outright;
/// among concepts the earlier entry wins ties.
pub(crate) fn winner(logits: &[f64]) -> usize {
    let null = logits.len() - 1;
    let mut best = null;
    for i in 0..null {
        if best == null {
            if logits[i] >= logits[null] {
                best = i;
            }
        } else if logits[i] > logits[best] {
            best = i;
        }
    }
    best
}

pub fn rerank_predict(list: &CandidateList, scored: &ScoredList) -> Prediction {
    // decided on logits so tiny softmax rounding cannot flip ties
    let best = winner(&scored.logits);
    let predicted = if best == list.entries.len() {
        Label::New
    } else {
        Label::Existing(list.entries[best].concept_id.clone())
    };
    let mut rank_trace: Vec<(String, f64)> = list
        .entries
        .iter()
        .zip(&scored.probabilities)
        .map(|(c, &p)| (c.concept_id.clone(), p))
        .collect();
    rank_trace.sort_by(|a, b| b.1.total_cmp(&a.1));
    Prediction {
        query_atom_id: scored.query_atom_id.clone(),
        predicted,
        confidence: scored.probabilities[best],
        rank_trace,
    }
}
