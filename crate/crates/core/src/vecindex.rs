//! Embedding storage, nearest-neighbor search and threshold-based bi-encoder
//! prediction.
//!
//! Vectors are unit-normalized on insertion, so cosine similarity is a plain
//! dot product. Exact search is the default; an HNSW graph is available behind
//! the same [`SearchIndex`] interface.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hnsw::{HnswIndex, HnswParams};
use crate::kb::{InsertionSet, KnowledgeBase, Label, Prediction, QueryAtom};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"UVIEMB1\0";
const UNIT_TOLERANCE: f64 = 1e-5;

/// Unit-normalized vectors keyed by atom ID, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, pos: usize) -> &str {
        &self.ids[pos]
    }

    pub fn vector(&self, pos: usize) -> &[f32] {
        &self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|p| self.vector(p))
    }

    /// Adds a vector, normalizing it to unit length.
    pub fn insert(&mut self, id: &str, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        if self.index.contains_key(id) {
            return Err(Error::EmbeddingFormat(format!("duplicate id {id:?}")));
        }
        let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::ZeroVector(id.to_string()));
        }
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        self.data.extend(v.iter().map(|&x| (f64::from(x) / norm) as f32));
        Ok(())
    }

    /// IDs from `wanted` that have no vector here.
    pub fn missing<'a>(&self, wanted: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        wanted
            .into_iter()
            .filter(|id| !self.index.contains_key(*id))
            .map(str::to_string)
            .collect()
    }

    /// A new store holding exactly `ids`, in that order.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str> + Clone) -> Result<Self> {
        let missing = self.missing(ids.clone());
        if !missing.is_empty() {
            return Err(Error::MissingEmbeddings(missing));
        }
        let mut out = Self::new(self.dim);
        for id in ids {
            let pos = self.index[id];
            out.index.insert(id.to_string(), out.ids.len());
            out.ids.push(id.to_string());
            out.data.extend_from_slice(self.vector(pos));
        }
        Ok(out)
    }

    pub fn is_unit_normalized(&self) -> bool {
        (0..self.len()).all(|i| (norm(self.vector(i)) - 1.0).abs() <= UNIT_TOLERANCE)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        let io = |e| Error::io("<embedding writer>", e);
        out.write_all(EMBEDDING_MAGIC).map_err(io)?;
        out.write_all(&(self.len() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        for (i, id) in self.ids.iter().enumerate() {
            let len = u16::try_from(id.len())
                .map_err(|_| Error::EmbeddingFormat(format!("id too long: {id:?}")))?;
            out.write_all(&len.to_le_bytes()).map_err(io)?;
            out.write_all(id.as_bytes()).map_err(io)?;
            for x in self.vector(i) {
                out.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(f)
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = BufReader::new(input);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != EMBEDDING_MAGIC {
            return Err(Error::EmbeddingFormat("bad magic".into()));
        }
        let count = read_u32(&mut r, "count")? as usize;
        let dim = read_u32(&mut r, "dim")? as usize;
        if dim == 0 {
            return Err(Error::EmbeddingFormat("dim must be positive".into()));
        }
        let mut store = Self::new(dim);
        let mut buf = vec![0u8; dim * 4];
        let mut v = vec![0f32; dim];
        for rec in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut r, &mut len, "id length")?;
            let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut r, &mut id, "id")?;
            let id = String::from_utf8(id)
                .map_err(|_| Error::EmbeddingFormat(format!("record {rec}: id is not UTF-8")))?;
            r.read_exact(&mut buf).map_err(|_| {
                Error::EmbeddingFormat(format!("record {rec} ({id:?}): expected {dim} floats"))
            })?;
            for (x, chunk) in v.iter_mut().zip(buf.chunks_exact(4)) {
                *x = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            }
            store.insert(&id, &v)?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::io("<embedding reader>", e))? != 0 {
            return Err(Error::EmbeddingFormat(format!(
                "trailing bytes after {count} records of dim {dim}"
            )));
        }
        Ok(store)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::EmbeddingFormat(format!("truncated file while reading {what}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::read(f)
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Cosine similarity of two unit vectors.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Position in the searched store.
    pub pos: usize,
    pub score: f64,
}

/// Descending score, then ascending atom ID.
pub(crate) fn rank_order(store: &EmbeddingStore, a: &Neighbor, b: &Neighbor) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| store.id(a.pos).cmp(store.id(b.pos)))
}

/// Exact top-`k` by cosine. `k` larger than the store returns the full ranking.
pub fn knn(store: &EmbeddingStore, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
    if query.len() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            actual: query.len(),
        });
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut all: Vec<Neighbor> = (0..store.len())
        .map(|pos| Neighbor {
            pos,
            score: dot(store.vector(pos), query),
        })
        .collect();
    let order = |a: &Neighbor, b: &Neighbor| rank_order(store, a, b);
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, order);
        all.truncate(k);
    }
    all.sort_unstable_by(order);
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum IndexMode {
    Exact,
    Approximate(HnswParams),
}

impl Default for IndexMode {
    fn default() -> Self {
        IndexMode::Exact
    }
}

#[derive(Debug, Clone)]
pub enum SearchIndex {
    Exact,
    Hnsw(HnswIndex),
}

impl SearchIndex {
    pub fn build(store: &EmbeddingStore, mode: IndexMode) -> Self {
        match mode {
            IndexMode::Exact => SearchIndex::Exact,
            IndexMode::Approximate(params) => SearchIndex::Hnsw(HnswIndex::build(store, params)),
        }
    }

    pub fn search(&self, store: &EmbeddingStore, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        match self {
            SearchIndex::Exact => knn(store, query, k),
            SearchIndex::Hnsw(h) => h.search(store, query, k),
        }
    }
}

/// Embeddings of every KB atom, aligned with KB atom positions, plus a search
/// index over them.
#[derive(Debug, Clone)]
pub struct KbIndex {
    store: EmbeddingStore,
    search: SearchIndex,
}

impl KbIndex {
    pub fn build(kb: &KnowledgeBase, vectors: &EmbeddingStore, mode: IndexMode) -> Result<Self> {
        let store = vectors.subset(kb.atoms().iter().map(|a| a.atom_id.as_str()))?;
        let search = SearchIndex::build(&store, mode);
        Ok(Self { store, search })
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    /// Top-`k` KB atoms; `Neighbor::pos` is the KB atom position.
    pub fn top_atoms(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        if self.store.is_empty() {
            return Ok(Vec::new());
        }
        self.search.search(&self.store, query, k)
    }

    pub fn similarity(&self, atom_pos: usize, query: &[f32]) -> f64 {
        dot(self.store.vector(atom_pos), query)
    }
}

pub(crate) fn query_vector<'a>(vectors: &'a EmbeddingStore, q: &QueryAtom) -> Result<&'a [f32]> {
    vectors
        .get(&q.atom_id)
        .ok_or_else(|| Error::MissingEmbeddings(vec![q.atom_id.clone()]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdObjective {
    #[default]
    Accuracy,
    NewConceptF1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityThreshold {
    pub theta: f64,
    pub objective: ThresholdObjective,
    /// Objective value reached on the tuning set.
    pub train_score: f64,
}

/// Maps a cosine in [-1, 1] to a confidence in [0, 1].
pub fn cosine_confidence(s: f64) -> f64 {
    ((s + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Links `q` to the concept of its most similar KB atom unless that
/// similarity falls below `theta`.
pub fn biencoder_predict(
    q: &QueryAtom,
    vectors: &EmbeddingStore,
    index: &KbIndex,
    kb: &KnowledgeBase,
    theta: f64,
) -> Result<Prediction> {
    let qv = query_vector(vectors, q)?;
    let Some(top) = index.top_atoms(qv, 1)?.into_iter().next() else {
        return Ok(Prediction::new_concept(&q.atom_id, 0.0));
    };
    let concept = kb.concepts()[kb.concept_of(top.pos)].concept_id.clone();
    let predicted = if top.score < theta {
        Label::New
    } else {
        Label::Existing(concept.clone())
    };
    Ok(Prediction {
        query_atom_id: q.atom_id.clone(),
        predicted,
        confidence: cosine_confidence(top.score),
        rank_trace: vec![(concept, top.score)],
    })
}

/// Top-1 similarity and whether linking would be correct, per query.
pub(crate) struct TopHit {
    pub score: f64,
    pub gold_new: bool,
    pub link_correct: bool,
}

pub(crate) fn top_hits(
    train: &InsertionSet,
    vectors: &EmbeddingStore,
    index: &KbIndex,
    kb: &KnowledgeBase,
) -> Result<Vec<TopHit>> {
    train
        .queries
        .par_iter()
        .map(|q| {
            let gold = q
                .gold
                .as_ref()
                .ok_or_else(|| Error::Data(format!("training query {:?} has no gold label", q.atom_id)))?;
            let qv = query_vector(vectors, q)?;
            let top = index.top_atoms(qv, 1)?.into_iter().next();
            let (score, concept) = match top {
                Some(n) => (n.score, Some(kb.concepts()[kb.concept_of(n.pos)].concept_id.as_str())),
                None => (-1.0, None),
            };
            Ok(TopHit {
                score,
                gold_new: gold.is_new(),
                link_correct: concept.is_some() && gold.concept() == concept,
            })
        })
        .collect()
}

fn objective_value(objective: ThresholdObjective, tp: usize, fp: usize, fn_: usize, correct: usize, total: usize) -> f64 {
    match objective {
        ThresholdObjective::Accuracy => correct as f64 / total as f64,
        ThresholdObjective::NewConceptF1 => {
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        }
    }
}

/// Picks the threshold maximizing the objective over the observed top-1
/// similarities (plus one value above the maximum). Ties go to the smallest
/// threshold.
pub fn tune_threshold(
    vectors: &EmbeddingStore,
    train: &InsertionSet,
    index: &KbIndex,
    kb: &KnowledgeBase,
    objective: ThresholdObjective,
) -> Result<SimilarityThreshold> {
    if train.is_empty() {
        return Err(Error::Data("threshold tuning needs a non-empty training set".into()));
    }
    let mut hits = top_hits(train, vectors, index, kb)?;
    hits.sort_by(|a, b| a.score.total_cmp(&b.score));
    let total = hits.len();
    let total_new = hits.iter().filter(|h| h.gold_new).count();
    let total_linked_correct = hits.iter().filter(|h| h.link_correct).count();

    // Sweep ascending: queries before index `i` fall below theta = hits[i].score.
    let mut best: Option<SimilarityThreshold> = None;
    let (mut below_new, mut below_existing, mut below_linked_correct) = (0usize, 0usize, 0usize);
    let mut i = 0;
    loop {
        let theta = if i < total {
            hits[i].score
        } else {
            hits[total - 1].score.next_up()
        };
        let tp = below_new;
        let fp = below_existing;
        let fn_ = total_new - below_new;
        let correct = below_new + (total_linked_correct - below_linked_correct);
        let score = objective_value(objective, tp, fp, fn_, correct, total);
        if best.map_or(true, |b| score > b.train_score) {
            best = Some(SimilarityThreshold {
                theta,
                objective,
                train_score: score,
            });
        }
        if i >= total {
            break;
        }
        let s = hits[i].score;
        while i < total && hits[i].score == s {
            if hits[i].gold_new {
                below_new += 1;
            } else {
                below_existing += 1;
            }
            if hits[i].link_correct {
                below_linked_correct += 1;
            }
            i += 1;
        }
    }
    Ok(best.expect("at least one candidate threshold"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Atom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(rows: &[(&str, &[f32])]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(rows[0].1.len());
        for (id, v) in rows {
            s.insert(id, v).unwrap();
        }
        s
    }

    #[test]
    fn insert_normalizes() {
        let s = store(&[("a", &[3.0, 4.0, 0.0, 0.0]), ("b", &[0.0, 0.0, 1.0, 0.0])]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.dim(), 4);
        let v = s.get("a").unwrap();
        assert!((v[0] - 0.6).abs() < 1e-7 && (v[1] - 0.8).abs() < 1e-7);
        assert!(s.is_unit_normalized());
    }

    #[test]
    fn zero_vector_rejected() {
        let mut s = EmbeddingStore::new(2);
        assert!(matches!(s.insert("z", &[0.0, 0.0]), Err(Error::ZeroVector(id)) if id == "z"));
        assert!(matches!(s.insert("z", &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn binary_round_trip() {
        let s = store(&[("a", &[3.0, 4.0, 0.0, 0.0]), ("αβ", &[0.0, 1.0, 1.0, 0.0])]);
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(&buf[..8], EMBEDDING_MAGIC);
        assert_eq!(EmbeddingStore::read(&buf[..]).unwrap(), s);
    }

    #[test]
    fn short_record_is_format_error() {
        let mut buf = Vec::new();
        buf.extend_from_slice(EMBEDDING_MAGIC);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&4u32.to_le_bytes());
        buf.extend_from_slice(&1u16.to_le_bytes());
        buf.push(b'a');
        for x in [1f32, 2.0, 3.0] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        assert!(matches!(EmbeddingStore::read(&buf[..]), Err(Error::EmbeddingFormat(_))));
    }

    #[test]
    fn knn_examples() {
        let s = store(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let top = knn(&s, &[1.0, 0.0], 1).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(s.id(top[0].pos), "a");
        assert!((top[0].score - 1.0).abs() < 1e-12);

        let h = std::f32::consts::FRAC_1_SQRT_2;
        let s = store(&[("b", &[0.0, 1.0]), ("a", &[1.0, 0.0])]);
        let tie = knn(&s, &[h, h], 2).unwrap();
        assert_eq!(s.id(tie[0].pos), "a");
        assert_eq!(s.id(tie[1].pos), "b");

        assert_eq!(knn(&s, &[1.0, 0.0], 10).unwrap().len(), 2);
        assert!(knn(&s, &[1.0, 0.0, 0.0], 1).is_err());
    }

    fn random_store(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(dim);
        for i in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            s.insert(&format!("x{i:04}"), &v).unwrap();
        }
        s
    }

    #[test]
    fn knn_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let s = random_store(&mut rng, 300, 8);
            let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut oracle: Vec<(f64, String)> = (0..s.len())
                .map(|i| {
                    let d: f64 = s.vector(i).iter().zip(&q).map(|(a, b)| *a as f64 * *b as f64).sum();
                    (d, s.id(i).to_string())
                })
                .collect();
            oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let got: Vec<String> = knn(&s, &q, 15).unwrap().iter().map(|n| s.id(n.pos).to_string()).collect();
            let want: Vec<String> = oracle.into_iter().take(15).map(|x| x.1).collect();
            assert_eq!(got, want);
        }
    }

    fn kb_atom(id: &str, concept: &str) -> Atom {
        Atom {
            atom_id: id.into(),
            concept_id: concept.into(),
            string: id.into(),
            source: "S".into(),
            source_concept_id: None,
            semantic_group: "G".into(),
            language: "ENG".into(),
            active: true,
            suppressible: false,
        }
    }

    fn q(id: &str, gold: Label) -> QueryAtom {
        QueryAtom {
            atom_id: id.into(),
            string: id.into(),
            source: "S".into(),
            source_concept_id: None,
            semantic_group: "G".into(),
            language: "ENG".into(),
            active: true,
            suppressible: false,
            gold: Some(gold),
        }
    }

    /// KB atoms on the unit circle; queries at a chosen angle from an atom.
    fn circle_fixture(specs: &[(f64, &str, Label)]) -> (KnowledgeBase, EmbeddingStore, InsertionSet) {
        let kb = KnowledgeBase::from_atoms(vec![kb_atom("k1", "C1"), kb_atom("k2", "C2")]).unwrap();
        let mut vs = EmbeddingStore::new(3);
        vs.insert("k1", &[1.0, 0.0, 0.0]).unwrap();
        vs.insert("k2", &[0.0, 1.0, 0.0]).unwrap();
        let mut qs = Vec::new();
        for (sim, id, gold) in specs {
            // similarity `sim` to k1, orthogonal to k2
            let v = [*sim as f32, 0.0, (1.0 - sim * sim).sqrt() as f32];
            vs.insert(id, &v).unwrap();
            qs.push(q(id, gold.clone()));
        }
        (kb, vs, InsertionSet::new(qs))
    }

    #[test]
    fn biencoder_thresholding() {
        let (kb, vs, qs) = circle_fixture(&[(0.95, "q1", Label::New), (0.40, "q2", Label::New)]);
        let idx = KbIndex::build(&kb, &vs, IndexMode::Exact).unwrap();
        let p1 = biencoder_predict(&qs.queries[0], &vs, &idx, &kb, 0.8).unwrap();
        assert_eq!(p1.predicted, Label::Existing("C1".into()));
        assert!((p1.confidence - 0.975).abs() < 1e-6);
        let p2 = biencoder_predict(&qs.queries[1], &vs, &idx, &kb, 0.8).unwrap();
        assert_eq!(p2.predicted, Label::New);
        for p in [&qs.queries[0], &qs.queries[1]] {
            assert!(!biencoder_predict(p, &vs, &idx, &kb, -1.0).unwrap().predicted.is_new());
            assert!(biencoder_predict(p, &vs, &idx, &kb, 1.0f64.next_up()).unwrap().predicted.is_new());
        }
        let missing = q("nope", Label::New);
        assert!(matches!(
            biencoder_predict(&missing, &vs, &idx, &kb, 0.5),
            Err(Error::MissingEmbeddings(_))
        ));
    }

    #[test]
    fn threshold_separable_case() {
        let c1 = Label::Existing("C1".into());
        let (kb, vs, qs) = circle_fixture(&[
            (0.95, "e1", c1.clone()),
            (0.90, "e2", c1.clone()),
            (0.99, "e3", c1),
            (0.50, "n1", Label::New),
            (0.20, "n2", Label::New),
        ]);
        let idx = KbIndex::build(&kb, &vs, IndexMode::Exact).unwrap();
        let t = tune_threshold(&vs, &qs, &idx, &kb, ThresholdObjective::Accuracy).unwrap();
        assert_eq!(t.train_score, 1.0);
        // smallest optimal observed value is the 0.90 query's similarity
        let s090 = dot(vs.get("e2").unwrap(), vs.get("k1").unwrap());
        assert_eq!(t.theta, s090);
    }

    #[test]
    fn threshold_all_new_goes_above_max() {
        let (kb, vs, qs) = circle_fixture(&[(0.95, "n1", Label::New), (0.30, "n2", Label::New)]);
        let idx = KbIndex::build(&kb, &vs, IndexMode::Exact).unwrap();
        let t = tune_threshold(&vs, &qs, &idx, &kb, ThresholdObjective::Accuracy).unwrap();
        assert_eq!(t.train_score, 1.0);
        let max = dot(vs.get("n1").unwrap(), vs.get("k1").unwrap());
        assert!(t.theta > max);
        assert!(tune_threshold(&vs, &InsertionSet::default(), &idx, &kb, ThresholdObjective::Accuracy).is_err());
    }
}
