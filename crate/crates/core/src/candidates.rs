//! Candidate concept lists for re-ranking.
//!
//! Rule-proposed concepts come first, ranked by their best atom's similarity
//! to the query. The list is then filled from the nearest-neighbor ranking,
//! one entry per concept, until it holds `k` concepts.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Label, Prediction, QueryAtom};
use crate::vecindex::{cosine_confidence, query_vector, EmbeddingStore, KbIndex};

pub const DEFAULT_K: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub concept_id: String,
    pub representative_atom_id: String,
    pub representative_string: String,
    pub score: f64,
    pub rba_preferred: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub query_atom_id: String,
    pub k: usize,
    /// Whether the rules proposed any concept for this query.
    pub has_rba_synonyms: bool,
    pub entries: Vec<Candidate>,
}

impl CandidateList {
    pub fn position_of(&self, concept_id: &str) -> Option<usize> {
        self.entries.iter().position(|c| c.concept_id == concept_id)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n").map_err(|e| Error::io("<candidate dump>", e))
    }
}

fn resolve(rba_set: &BTreeSet<String>, kb: &KnowledgeBase) -> Result<Vec<usize>> {
    rba_set
        .iter()
        .map(|c| {
            kb.concept_position(c)
                .ok_or_else(|| Error::Data(format!("rule candidate {c:?} is not a KB concept")))
        })
        .collect()
}

fn make(kb: &KnowledgeBase, atom_pos: usize, score: f64, rba_preferred: bool) -> Candidate {
    let atom = &kb.atoms()[atom_pos];
    Candidate {
        concept_id: atom.concept_id.clone(),
        representative_atom_id: atom.atom_id.clone(),
        representative_string: atom.string.clone(),
        score,
        rba_preferred,
    }
}

/// Rule-proposed concepts with their most similar atom, best first.
fn preferred_block(concepts: &[usize], qv: &[f32], index: &KbIndex, kb: &KnowledgeBase) -> Vec<Candidate> {
    let mut block: Vec<Candidate> = concepts
        .iter()
        .map(|&c| {
            let (pos, score) = kb
                .members(c)
                .iter()
                .map(|&a| (a, index.similarity(a, qv)))
                .reduce(|best, cur| {
                    let better = cur.1 > best.1
                        || (cur.1 == best.1 && kb.atoms()[cur.0].atom_id < kb.atoms()[best.0].atom_id);
                    if better {
                        cur
                    } else {
                        best
                    }
                })
                .expect("concepts are non-empty");
            make(kb, pos, score, true)
        })
        .collect();
    block.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.representative_atom_id.cmp(&b.representative_atom_id))
    });
    block
}

pub fn generate(
    q: &QueryAtom,
    rba_set: &BTreeSet<String>,
    vectors: &EmbeddingStore,
    index: &KbIndex,
    kb: &KnowledgeBase,
    k: usize,
) -> Result<CandidateList> {
    let concepts = resolve(rba_set, kb)?;
    generate_from_positions(q, &concepts, vectors, index, kb, k)
}

pub(crate) fn generate_from_positions(
    q: &QueryAtom,
    rba_concepts: &[usize],
    vectors: &EmbeddingStore,
    index: &KbIndex,
    kb: &KnowledgeBase,
    k: usize,
) -> Result<CandidateList> {
    if k == 0 {
        return Err(Error::Config("candidate count k must be at least 1".into()));
    }
    let qv = query_vector(vectors, q)?;
    let mut entries = preferred_block(rba_concepts, qv, index, kb);
    entries.truncate(k);
    let preferred_len = entries.len();
    let store_len = index.store().len();

    let mut fetch = (4 * k).min(store_len);
    while entries.len() < k && fetch > 0 {
        entries.truncate(preferred_len);
        let mut seen: HashSet<usize> = rba_concepts.iter().copied().collect();
        for n in index.top_atoms(qv, fetch)? {
            if entries.len() >= k {
                break;
            }
            if seen.insert(kb.concept_of(n.pos)) {
                entries.push(make(kb, n.pos, n.score, false));
            }
        }
        if entries.len() >= k || fetch >= store_len {
            break;
        }
        fetch = (fetch * 2).min(store_len);
    }

    Ok(CandidateList {
        query_atom_id: q.atom_id.clone(),
        k,
        has_rba_synonyms: !rba_concepts.is_empty(),
        entries,
    })
}

/// Rule-based prediction with the candidate concepts ranked by similarity.
/// Without rule candidates the query is NEW, exactly as for plain RBA.
pub fn augmented_rba_predict(
    q: &QueryAtom,
    rba_set: &BTreeSet<String>,
    vectors: &EmbeddingStore,
    index: &KbIndex,
    kb: &KnowledgeBase,
) -> Result<Prediction> {
    let concepts = resolve(rba_set, kb)?;
    augmented_from_positions(q, &concepts, vectors, index, kb)
}

pub(crate) fn augmented_from_positions(
    q: &QueryAtom,
    rba_concepts: &[usize],
    vectors: &EmbeddingStore,
    index: &KbIndex,
    kb: &KnowledgeBase,
) -> Result<Prediction> {
    if rba_concepts.is_empty() {
        return Ok(Prediction::new_concept(&q.atom_id, 1.0));
    }
    let qv = query_vector(vectors, q)?;
    let block = preferred_block(rba_concepts, qv, index, kb);
    let top = &block[0];
    Ok(Prediction {
        query_atom_id: q.atom_id.clone(),
        predicted: Label::Existing(top.concept_id.clone()),
        confidence: cosine_confidence(top.score),
        rank_trace: block.iter().map(|c| (c.concept_id.clone(), c.score)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Atom;
    use crate::vecindex::IndexMode;

    fn atom(id: &str, concept: &str) -> Atom {
        Atom {
            atom_id: id.into(),
            concept_id: concept.into(),
            string: format!("str {id}"),
            source: "S".into(),
            source_concept_id: None,
            semantic_group: "G".into(),
            language: "ENG".into(),
            active: true,
            suppressible: false,
        }
    }

    fn query() -> QueryAtom {
        QueryAtom {
            atom_id: "q".into(),
            string: "query".into(),
            source: "S".into(),
            source_concept_id: None,
            semantic_group: "G".into(),
            language: "ENG".into(),
            active: true,
            suppressible: false,
            gold: None,
        }
    }

    /// Atoms with prescribed similarity to the query direction e0.
    fn fixture(specs: &[(&str, &str, f64)]) -> (KnowledgeBase, EmbeddingStore, KbIndex) {
        let kb = KnowledgeBase::from_atoms(specs.iter().map(|(a, c, _)| atom(a, c)).collect()).unwrap();
        let dim = specs.len() + 1;
        let mut vs = EmbeddingStore::new(dim);
        let mut qv = vec![0f32; dim];
        qv[0] = 1.0;
        vs.insert("q", &qv).unwrap();
        for (i, (a, _, s)) in specs.iter().enumerate() {
            let mut v = vec![0f32; dim];
            v[0] = *s as f32;
            v[i + 1] = (1.0 - s * s).sqrt() as f32;
            vs.insert(a, &v).unwrap();
        }
        let idx = KbIndex::build(&kb, &vs, IndexMode::Exact).unwrap();
        (kb, vs, idx)
    }

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn preferred_first_then_fill() {
        let (kb, vs, idx) = fixture(&[
            ("a1", "C1", 0.5),
            ("a2", "C2", 0.95),
            ("a3", "C3", 0.9),
            ("a4", "C4", 0.85),
            ("a5", "C5", 0.8),
            ("a6", "C6", 0.75),
            ("a7", "C7", 0.7),
        ]);
        let list = generate(&query(), &set(&["C1", "C2"]), &vs, &idx, &kb, 5).unwrap();
        let ids: Vec<&str> = list.entries.iter().map(|c| c.concept_id.as_str()).collect();
        assert_eq!(ids, ["C2", "C1", "C3", "C4", "C5"]);
        let prefs: Vec<bool> = list.entries.iter().map(|c| c.rba_preferred).collect();
        assert_eq!(prefs, [true, true, false, false, false]);
        assert!(list.has_rba_synonyms);
    }

    #[test]
    fn no_rule_candidates_is_plain_knn() {
        let (kb, vs, idx) = fixture(&[("a1", "C1", 0.2), ("a2", "C1", 0.9), ("a3", "C2", 0.5), ("a4", "C3", 0.1)]);
        let list = generate(&query(), &BTreeSet::new(), &vs, &idx, &kb, 2).unwrap();
        let got: Vec<(&str, &str)> = list
            .entries
            .iter()
            .map(|c| (c.concept_id.as_str(), c.representative_atom_id.as_str()))
            .collect();
        assert_eq!(got, [("C1", "a2"), ("C2", "a3")]);
        assert!(!list.has_rba_synonyms);
    }

    #[test]
    fn oversized_rule_set_is_truncated_to_best() {
        let (kb, vs, idx) = fixture(&[("a1", "C1", 0.1), ("a2", "C2", 0.3), ("a3", "C3", 0.2)]);
        let list = generate(&query(), &set(&["C1", "C2", "C3"]), &vs, &idx, &kb, 2).unwrap();
        let ids: Vec<&str> = list.entries.iter().map(|c| c.concept_id.as_str()).collect();
        assert_eq!(ids, ["C2", "C3"]);
    }

    #[test]
    fn list_stops_at_reachable_concepts() {
        let (kb, vs, idx) = fixture(&[("a1", "C1", 0.1), ("a2", "C1", 0.3)]);
        let list = generate(&query(), &BTreeSet::new(), &vs, &idx, &kb, 50).unwrap();
        assert_eq!(list.entries.len(), 1);
    }

    #[test]
    fn augmented_prediction() {
        let (kb, vs, idx) = fixture(&[("a1", "C1", 0.7), ("a2", "C2", 0.9)]);
        let p = augmented_rba_predict(&query(), &BTreeSet::new(), &vs, &idx, &kb).unwrap();
        assert_eq!(p.predicted, Label::New);
        let p = augmented_rba_predict(&query(), &set(&["C1", "C2"]), &vs, &idx, &kb).unwrap();
        assert_eq!(p.predicted, Label::Existing("C2".into()));
        let list = generate(&query(), &set(&["C1", "C2"]), &vs, &idx, &kb, 50).unwrap();
        assert_eq!(list.entries[0].concept_id, "C2");
    }

    #[test]
    fn missing_query_vector_is_error() {
        let (kb, vs, idx) = fixture(&[("a1", "C1", 0.7)]);
        let mut q = query();
        q.atom_id = "other".into();
        assert!(matches!(
            generate(&q, &BTreeSet::new(), &vs, &idx, &kb, 3),
            Err(Error::MissingEmbeddings(ids)) if ids == ["other"]
        ));
    }

    #[test]
    fn jsonl_dump_has_entry_fields() {
        let (kb, vs, idx) = fixture(&[("a1", "C1", 0.7)]);
        let list = generate(&query(), &set(&["C1"]), &vs, &idx, &kb, 3).unwrap();
        let mut buf = Vec::new();
        list.write_jsonl(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let e = &v["entries"][0];
        assert_eq!(e["concept_id"], "C1");
        assert_eq!(e["representative_string"], "str a1");
        assert_eq!(e["rba_preferred"], true);
        assert!(e["score"].is_f64());
    }
}
