//! Rule-based synonymy closure over knowledge-base and query atoms.
//!
//! Two atoms are linked when the same source vocabulary groups them under one
//! source concept, or when their normalized strings are identical and their
//! semantic groups are compatible. Classes are the transitive closure of both
//! link kinds. A query's candidate concepts are the concepts of the KB atoms in
//! its class.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::kb::{InsertionSet, KnowledgeBase, Label, Prediction, QueryAtom};
use crate::lexnorm::{normalize, CompatibilityMatrix, NormConfig};
use crate::unionfind::DisjointSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Rule {
    /// Same source vocabulary and non-empty source concept ID.
    SourceSynonymy,
    /// Identical normalized string and compatible semantic groups.
    NormalizedMatch,
}

/// A union that merged two previously distinct classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UnionRecord {
    pub a: usize,
    pub b: usize,
    pub rule: Rule,
}

/// Frozen partition over KB atoms (nodes `0..n`) followed by query atoms
/// (nodes `n..n+m`).
#[derive(Debug, Clone)]
pub struct SynonymyClosure {
    kb_atoms: usize,
    query_ids: Vec<String>,
    query_index: HashMap<String, usize>,
    forest: DisjointSet,
    class_min: Vec<usize>,
    unions: Vec<UnionRecord>,
    class_concepts: HashMap<usize, Vec<usize>>,
}

struct NodeView<'a> {
    string: &'a str,
    source: &'a str,
    source_concept_id: Option<&'a str>,
    group: &'a str,
}

/// Groups node indices by key, preserving first-seen order of keys.
fn buckets<'a>(keys: impl Iterator<Item = Option<(usize, &'a str, &'a str)>>) -> Vec<Vec<usize>> {
    let mut index: HashMap<(&str, &str), usize> = HashMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (node, a, b) in keys.flatten() {
        let slot = *index.entry((a, b)).or_insert_with(|| {
            out.push(Vec::new());
            out.len() - 1
        });
        out[slot].push(node);
    }
    out
}

pub fn build_closure(
    kb: &KnowledgeBase,
    q_set: &InsertionSet,
    norm_cfg: &NormConfig,
    compat: &CompatibilityMatrix,
) -> SynonymyClosure {
    let n = kb.atom_count();
    let views: Vec<NodeView<'_>> = kb
        .atoms()
        .iter()
        .map(|a| NodeView {
            string: &a.string,
            source: &a.source,
            source_concept_id: a.source_concept_id.as_deref(),
            group: &a.semantic_group,
        })
        .chain(q_set.iter().map(|q| NodeView {
            string: &q.string,
            source: &q.source,
            source_concept_id: q.source_concept_id.as_deref(),
            group: &q.semantic_group,
        }))
        .collect();
    let total = views.len();

    let mut compat = compat.clone();
    compat.register(views.iter().map(|v| v.group));

    let normalized: Vec<String> = views.par_iter().map(|v| normalize(v.string, norm_cfg)).collect();

    let mut forest = DisjointSet::new(total);
    let mut unions = Vec::new();
    let mut link = |forest: &mut DisjointSet, a: usize, b: usize, rule: Rule| {
        if forest.union(a, b) {
            unions.push(UnionRecord { a, b, rule });
        }
    };

    let rule1 = buckets(
        views
            .iter()
            .enumerate()
            .map(|(i, v)| v.source_concept_id.filter(|s| !s.is_empty()).map(|s| (i, v.source, s))),
    );
    for bucket in &rule1 {
        for w in bucket.windows(2) {
            link(&mut forest, w[0], w[1], Rule::SourceSynonymy);
        }
    }

    // empty normalized forms carry no lexical evidence and are never matched
    let rule2 = buckets(
        normalized
            .iter()
            .enumerate()
            .map(|(i, s)| (!s.is_empty()).then_some((i, s.as_str(), ""))),
    );
    for bucket in &rule2 {
        if bucket.len() < 2 {
            continue;
        }
        let by_group = buckets(bucket.iter().map(|&i| Some((i, views[i].group, ""))));
        for members in &by_group {
            for w in members.windows(2) {
                link(&mut forest, w[0], w[1], Rule::NormalizedMatch);
            }
        }
        for (x, gx) in by_group.iter().enumerate() {
            for gy in &by_group[x + 1..] {
                if compat.allows(views[gx[0]].group, views[gy[0]].group) {
                    link(&mut forest, gx[0], gy[0], Rule::NormalizedMatch);
                }
            }
        }
    }

    forest.flatten();
    let mut class_min = vec![usize::MAX; total];
    for i in 0..total {
        let r = forest.root(i);
        class_min[r] = class_min[r].min(i);
    }
    let mut class_concepts: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        class_concepts.entry(forest.root(i)).or_default().push(kb.concept_of(i));
    }
    for concepts in class_concepts.values_mut() {
        concepts.sort_unstable();
        concepts.dedup();
    }

    let query_ids: Vec<String> = q_set.iter().map(|q| q.atom_id.clone()).collect();
    let query_index = query_ids.iter().enumerate().map(|(i, id)| (id.clone(), n + i)).collect();

    SynonymyClosure {
        kb_atoms: n,
        query_ids,
        query_index,
        forest,
        class_min,
        unions,
        class_concepts,
    }
}

impl SynonymyClosure {
    pub fn node_count(&self) -> usize {
        self.forest.len()
    }

    pub fn kb_atom_count(&self) -> usize {
        self.kb_atoms
    }

    /// Node index of a query atom, if it took part in the build.
    pub fn query_node(&self, atom_id: &str) -> Option<usize> {
        self.query_index.get(atom_id).copied()
    }

    /// Canonical class label of a node: the smallest node index in its class.
    pub fn class_of(&self, node: usize) -> usize {
        self.class_min[self.forest.root(node)]
    }

    /// Class label per node.
    pub fn partition(&self) -> Vec<usize> {
        (0..self.node_count()).map(|i| self.class_of(i)).collect()
    }

    pub fn unions(&self) -> &[UnionRecord] {
        &self.unions
    }

    /// Distinct KB concept positions sharing a class with `node`, ascending.
    pub fn concepts_of_node(&self, node: usize) -> &[usize] {
        self.class_concepts
            .get(&self.forest.root(node))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn node_id<'a>(&'a self, kb: &'a KnowledgeBase, node: usize) -> &'a str {
        if node < self.kb_atoms {
            &kb.atoms()[node].atom_id
        } else {
            &self.query_ids[node - self.kb_atoms]
        }
    }

    /// Writes `atom_id<TAB>class_id`, where `class_id` is the atom ID of the
    /// class's first node.
    pub fn dump<W: Write>(&self, kb: &KnowledgeBase, mut out: W) -> std::io::Result<()> {
        for node in 0..self.node_count() {
            writeln!(
                out,
                "{}\t{}",
                self.node_id(kb, node),
                self.node_id(kb, self.class_of(node))
            )?;
        }
        Ok(())
    }
}

/// Concept positions the rules propose for `q`. Empty when the query did not
/// take part in the closure build.
pub(crate) fn candidate_positions<'a>(q: &QueryAtom, closure: &'a SynonymyClosure) -> &'a [usize] {
    match closure.query_node(&q.atom_id) {
        Some(node) => closure.concepts_of_node(node),
        None => &[],
    }
}

pub fn rba_candidates(q: &QueryAtom, closure: &SynonymyClosure, kb: &KnowledgeBase) -> BTreeSet<String> {
    candidate_positions(q, closure)
        .iter()
        .map(|&c| kb.concepts()[c].concept_id.clone())
        .collect()
}

/// Uniform pick in `0..n` determined by the run seed and the atom ID only.
pub(crate) fn seeded_pick(seed: u64, atom_id: &str, n: usize) -> usize {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(atom_id.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key).gen_range(0..n)
}

/// Rule-based prediction: NEW without candidates, otherwise a seeded uniform
/// choice among the candidate concepts. Confidence is `1 / |candidates|`.
pub fn rba_predict(q: &QueryAtom, closure: &SynonymyClosure, kb: &KnowledgeBase, seed: u64) -> Prediction {
    let candidates: Vec<String> = rba_candidates(q, closure, kb).into_iter().collect();
    if candidates.is_empty() {
        return Prediction::new_concept(&q.atom_id, 1.0);
    }
    let share = 1.0 / candidates.len() as f64;
    let pick = seeded_pick(seed, &q.atom_id, candidates.len());
    Prediction {
        query_atom_id: q.atom_id.clone(),
        predicted: Label::Existing(candidates[pick].clone()),
        confidence: share,
        rank_trace: candidates.into_iter().map(|c| (c, share)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Atom;

    pub(crate) fn atom(id: &str, concept: &str, s: &str, src: &str, scid: Option<&str>, group: &str) -> Atom {
        Atom {
            atom_id: id.into(),
            concept_id: concept.into(),
            string: s.into(),
            source: src.into(),
            source_concept_id: scid.map(Into::into),
            semantic_group: group.into(),
            language: "ENG".into(),
            active: true,
            suppressible: false,
        }
    }

    fn query(id: &str, s: &str, src: &str, scid: Option<&str>, group: &str) -> QueryAtom {
        QueryAtom {
            atom_id: id.into(),
            string: s.into(),
            source: src.into(),
            source_concept_id: scid.map(Into::into),
            semantic_group: group.into(),
            language: "ENG".into(),
            active: true,
            suppressible: false,
            gold: None,
        }
    }

    fn closure(kb: &KnowledgeBase, q: &InsertionSet) -> SynonymyClosure {
        build_closure(kb, q, &NormConfig::default(), &CompatibilityMatrix::default())
    }

    #[test]
    fn chain_through_both_rules() {
        let kb = KnowledgeBase::from_atoms(vec![
            atom("a", "C1", "fever", "MSH", Some("D1"), "Disorders"),
            atom("b", "C2", "pyrexia", "MSH", Some("D1"), "Disorders"),
            atom("c", "C3", "Pyrexia", "SNOMED", None, "Disorders"),
            atom("d", "C4", "cough", "SNOMED", None, "Disorders"),
        ])
        .unwrap();
        let c = closure(&kb, &InsertionSet::default());
        assert_eq!(c.class_of(0), c.class_of(1));
        assert_eq!(c.class_of(1), c.class_of(2));
        assert_ne!(c.class_of(0), c.class_of(3));
        let rules: Vec<Rule> = c.unions().iter().map(|u| u.rule).collect();
        assert_eq!(rules, vec![Rule::SourceSynonymy, Rule::NormalizedMatch]);
    }

    #[test]
    fn distinct_atoms_stay_singletons() {
        let kb = KnowledgeBase::from_atoms(vec![
            atom("a", "C1", "fever", "MSH", Some("D1"), "Disorders"),
            atom("b", "C2", "cough", "MSH", Some("D2"), "Disorders"),
            atom("c", "C3", "rash", "SNOMED", Some("D1"), "Disorders"),
        ])
        .unwrap();
        let c = closure(&kb, &InsertionSet::default());
        assert_eq!(c.partition(), vec![0, 1, 2]);
        assert!(c.unions().is_empty());
    }

    #[test]
    fn incompatible_groups_do_not_link() {
        let kb = KnowledgeBase::from_atoms(vec![
            atom("a", "C1", "cold", "X", None, "Disorders"),
            atom("b", "C2", "Cold", "Y", None, "Phenomena"),
        ])
        .unwrap();
        let c = closure(&kb, &InsertionSet::default());
        assert_ne!(c.class_of(0), c.class_of(1));
        let mut m = CompatibilityMatrix::default();
        m.allow("Disorders", "Phenomena");
        let c = build_closure(&kb, &InsertionSet::default(), &NormConfig::default(), &m);
        assert_eq!(c.class_of(0), c.class_of(1));
    }

    #[test]
    fn candidates_group_by_concept() {
        let kb = KnowledgeBase::from_atoms(vec![
            atom("a", "C1", "heart attack", "X", None, "Disorders"),
            atom("b", "C1", "Attack, heart", "Y", None, "Disorders"),
            atom("c", "C2", "HEART ATTACK", "Z", None, "Disorders"),
            atom("d", "C3", "stroke", "Z", None, "Disorders"),
        ])
        .unwrap();
        let qs = InsertionSet::new(vec![
            query("q1", "heart-attack", "NEW", None, "Disorders"),
            query("q2", "brand new term", "NEW", None, "Disorders"),
        ]);
        let c = closure(&kb, &qs);
        let got = rba_candidates(&qs.queries[0], &c, &kb);
        assert_eq!(got, ["C1".to_string(), "C2".to_string()].into());
        assert!(rba_candidates(&qs.queries[1], &c, &kb).is_empty());

        let p = rba_predict(&qs.queries[1], &c, &kb, 0);
        assert_eq!(p.predicted, Label::New);
        let p = rba_predict(&qs.queries[0], &c, &kb, 0);
        assert!(matches!(&p.predicted, Label::Existing(x) if x == "C1" || x == "C2"));
        assert_eq!(p.confidence, 0.5);
        assert_eq!(rba_predict(&qs.queries[0], &c, &kb, 0), p);
    }

    #[test]
    fn single_candidate_is_returned() {
        let kb = KnowledgeBase::from_atoms(vec![atom("a", "C7", "fever", "X", Some("S"), "Disorders")]).unwrap();
        let qs = InsertionSet::new(vec![query("q", "anything", "X", Some("S"), "Disorders")]);
        let c = closure(&kb, &qs);
        let p = rba_predict(&qs.queries[0], &c, &kb, 123);
        assert_eq!(p.predicted, Label::Existing("C7".into()));
        assert_eq!(p.confidence, 1.0);
    }

    #[test]
    fn tie_break_ignores_batch_order() {
        let kb = KnowledgeBase::from_atoms(vec![
            atom("a", "C1", "x y", "X", None, "G"),
            atom("b", "C2", "y x", "Y", None, "G"),
            atom("c", "C3", "X Y", "Z", None, "G"),
        ])
        .unwrap();
        let qs: Vec<QueryAtom> = (0..20).map(|i| query(&format!("q{i}"), "x, y", "N", None, "G")).collect();
        let forward = InsertionSet::new(qs.clone());
        let mut rev = qs;
        rev.reverse();
        let backward = InsertionSet::new(rev);
        let cf = closure(&kb, &forward);
        let cb = closure(&kb, &backward);
        let mut picked = BTreeSet::new();
        for q in forward.iter() {
            let a = rba_predict(q, &cf, &kb, 7);
            let b = rba_predict(q, &cb, &kb, 7);
            assert_eq!(a, b);
            picked.insert(a.predicted);
        }
        assert!(picked.len() > 1, "20 draws over 3 concepts should not all agree");
    }

    #[test]
    fn dump_uses_first_member_as_class_id() {
        let kb = KnowledgeBase::from_atoms(vec![
            atom("a", "C1", "fever", "MSH", Some("D1"), "G"),
            atom("b", "C2", "chills", "MSH", Some("D1"), "G"),
        ])
        .unwrap();
        let qs = InsertionSet::new(vec![query("q", "Fever", "N", None, "G")]);
        let c = closure(&kb, &qs);
        let mut out = Vec::new();
        c.dump(&kb, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a\ta\nb\ta\nq\ta\n");
    }
}
