//! Built-in linear feature scorer and its listwise training.
//!
//! Every list entry is mapped to a fixed feature vector; the logit is the dot
//! product with the learned weights. Training minimizes the softmax
//! cross-entropy of the gold entry over the whole list (NULL included).

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::{Candidate, CandidateList};
use crate::error::{Error, Result};
use crate::kb::{Label, QueryAtom};
use crate::lexnorm::{normalize, NormConfig};
use crate::reranker::{softmax, winner, PairScorer};

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "exact_normalized_match",
    "token_jaccard",
    "char_trigram_cosine",
    "candidate_cosine",
    "rba_preferred",
    "no_preferred_query",
    "is_null",
];
pub const NUM_FEATURES: usize = 7;
const WEIGHTS_VERSION: u32 = 1;

pub type Features = [f64; NUM_FEATURES];

fn tokens(normalized: &str) -> BTreeSet<&str> {
    normalized.split(' ').filter(|t| !t.is_empty()).collect()
}

fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn trigrams(s: &str) -> HashMap<[char; 3], f64> {
    let padded: Vec<char> = std::iter::once(' ')
        .chain(s.to_lowercase().chars())
        .chain(std::iter::once(' '))
        .collect();
    let mut out = HashMap::new();
    for w in padded.windows(3) {
        *out.entry([w[0], w[1], w[2]]).or_insert(0.0) += 1.0;
    }
    out
}

fn trigram_cosine(a: &HashMap<[char; 3], f64>, b: &HashMap<[char; 3], f64>) -> f64 {
    let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    dot / (na * nb)
}

/// Feature rows for every entry of `list`, NULL row last.
///
/// The no-preferred flag is placed on the NULL row only: a feature that is
/// constant across a list cannot change its softmax.
pub fn feature_rows(q: &QueryAtom, list: &CandidateList, norm: &NormConfig) -> Vec<Features> {
    let qn = normalize(&q.string, norm);
    let qt = tokens(&qn);
    let qg = trigrams(&q.string);
    let mut rows: Vec<Features> = list
        .entries
        .iter()
        .map(|c: &Candidate| {
            let cn = normalize(&c.representative_string, norm);
            [
                f64::from(u8::from(!qn.is_empty() && qn == cn)),
                jaccard(&qt, &tokens(&cn)),
                trigram_cosine(&qg, &trigrams(&c.representative_string)),
                c.score,
                f64::from(u8::from(c.rba_preferred)),
                0.0,
                0.0,
            ]
        })
        .collect();
    rows.push([0.0, 0.0, 0.0, 0.0, 0.0, f64::from(u8::from(!list.has_rba_synonyms)), 1.0]);
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScorerWeights {
    pub version: u32,
    pub features: Vec<String>,
    /// One weight per feature; the `is_null` weight is the NULL bias.
    pub weights: Vec<f64>,
}

impl Default for FeatureScorerWeights {
    fn default() -> Self {
        Self::from_array([0.0; NUM_FEATURES])
    }
}

impl FeatureScorerWeights {
    pub fn from_array(w: Features) -> Self {
        Self {
            version: WEIGHTS_VERSION,
            features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            weights: w.to_vec(),
        }
    }

    pub fn as_array(&self) -> Features {
        let mut w = [0.0; NUM_FEATURES];
        w.copy_from_slice(&self.weights);
        w
    }

    pub fn null_bias(&self) -> f64 {
        self.weights[NUM_FEATURES - 1]
    }

    fn validate(&self) -> Result<()> {
        if self.version != WEIGHTS_VERSION {
            return Err(Error::Data(format!("unsupported weights version {}", self.version)));
        }
        if self.features != FEATURE_NAMES || self.weights.len() != NUM_FEATURES {
            return Err(Error::Data(format!(
                "weights file must list features {FEATURE_NAMES:?} with one value each"
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Data("weights must be finite".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(s)?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

fn logit(w: &Features, f: &Features) -> f64 {
    w.iter().zip(f).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone)]
pub struct FeatureScorer {
    weights: Features,
    norm: NormConfig,
}

impl FeatureScorer {
    pub fn new(weights: &FeatureScorerWeights, norm: NormConfig) -> Self {
        Self {
            weights: weights.as_array(),
            norm,
        }
    }
}

impl PairScorer for FeatureScorer {
    fn logits(&self, q: &QueryAtom, list: &CandidateList) -> Result<Vec<f64>> {
        Ok(feature_rows(q, list, &self.norm)
            .iter()
            .map(|f| logit(&self.weights, f))
            .collect())
    }
}

/// Feature rows of one list with the index of its gold entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingList {
    pub query_atom_id: String,
    pub rows: Vec<Features>,
    pub gold: usize,
}

impl TrainingList {
    pub fn new(q: &QueryAtom, list: &CandidateList, norm: &NormConfig) -> Result<Self> {
        let gold = match &q.gold {
            None => return Err(Error::Data(format!("training query {:?} has no gold label", q.atom_id))),
            Some(Label::New) => list.entries.len(),
            Some(Label::Existing(c)) => list
                .position_of(c)
                .ok_or_else(|| Error::GoldNotInList(q.atom_id.clone()))?,
        };
        Ok(Self {
            query_atom_id: q.atom_id.clone(),
            rows: feature_rows(q, list, norm),
            gold,
        })
    }
}

/// Cross-entropy of the gold entry and its gradient with respect to the weights.
pub fn list_loss_and_grad(w: &Features, list: &TrainingList) -> (f64, Features) {
    let logits: Vec<f64> = list.rows.iter().map(|f| logit(w, f)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let loss = log_z - logits[list.gold];
    let p = softmax(&logits);
    let mut grad = [0.0; NUM_FEATURES];
    for (i, row) in list.rows.iter().enumerate() {
        let coeff = p[i] - if i == list.gold { 1.0 } else { 0.0 };
        for (g, x) in grad.iter_mut().zip(row) {
            *g += coeff * x;
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup_ratio: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            lr: 2e-5,
            batch_size: 1,
            warmup_ratio: 0.1,
            seed: 0,
            patience: 1,
        }
    }
}

/// Fraction of lists whose gold entry wins under the re-ranker's tie rule.
pub fn list_accuracy(w: &Features, lists: &[TrainingList]) -> f64 {
    if lists.is_empty() {
        return 0.0;
    }
    let hits = lists
        .iter()
        .filter(|l| {
            let logits: Vec<f64> = l.rows.iter().map(|f| logit(w, f)).collect();
            winner(&logits) == l.gold
        })
        .count();
    hits as f64 / lists.len() as f64
}

/// Linear warmup to `lr`, then linear decay to zero.
fn schedule(step: usize, total: usize, warmup: usize, lr: f64) -> f64 {
    if warmup > 0 && step < warmup {
        lr * (step + 1) as f64 / warmup as f64
    } else {
        let rest = total.saturating_sub(warmup).max(1);
        lr * (total.saturating_sub(step)) as f64 / rest as f64
    }
}

/// Minibatch gradient descent on the listwise loss, starting from zero
/// weights. With `valid`, the best epoch by validation accuracy is kept and
/// training stops after `patience` epochs without improvement.
pub fn train_feature_scorer(
    train: &[TrainingList],
    valid: Option<&[TrainingList]>,
    cfg: &TrainConfig,
) -> Result<FeatureScorerWeights> {
    if cfg.batch_size == 0 || !(cfg.lr.is_finite() && cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.warmup_ratio) {
        return Err(Error::Config(
            "training needs batch_size >= 1, lr > 0 and warmup_ratio in [0, 1)".into(),
        ));
    }
    for l in train.iter().chain(valid.unwrap_or(&[])) {
        if l.gold >= l.rows.len() {
            return Err(Error::GoldNotInList(l.query_atom_id.clone()));
        }
    }
    let mut w = [0.0; NUM_FEATURES];
    if train.is_empty() {
        return Ok(FeatureScorerWeights::from_array(w));
    }

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let warmup = (total as f64 * cfg.warmup_ratio).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;

    let mut best = (valid.map(|v| list_accuracy(&w, v)).unwrap_or(f64::NEG_INFINITY), w);
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = [0.0; NUM_FEATURES];
            for &i in batch {
                let (_, g) = list_loss_and_grad(&w, &train[i]);
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let rate = schedule(step, total, warmup, cfg.lr) / batch.len() as f64;
            for (wi, g) in w.iter_mut().zip(grad) {
                *wi -= rate * g;
            }
            step += 1;
        }
        if let Some(v) = valid {
            let acc = list_accuracy(&w, v);
            log::debug!("epoch {epoch}: validation accuracy {acc:.4}");
            if acc > best.0 {
                best = (acc, w);
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience.max(1) {
                    break;
                }
            }
        }
    }
    let final_w = if valid.is_some() { best.1 } else { w };
    Ok(FeatureScorerWeights::from_array(final_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_list(rng: &mut ChaCha8Rng) -> TrainingList {
        let n = rng.gen_range(1..12);
        let rows = (0..n)
            .map(|_| {
                let mut f = [0.0; NUM_FEATURES];
                for x in f.iter_mut() {
                    *x = rng.gen_range(-1.0..1.0);
                }
                f
            })
            .collect();
        TrainingList {
            query_atom_id: "q".into(),
            rows,
            gold: rng.gen_range(0..n),
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let list = random_list(&mut rng);
            let mut w = [0.0; NUM_FEATURES];
            for x in w.iter_mut() {
                *x = rng.gen_range(-2.0..2.0);
            }
            let (_, g) = list_loss_and_grad(&w, &list);
            let h = 1e-6;
            for j in 0..NUM_FEATURES {
                let mut up = w;
                up[j] += h;
                let mut down = w;
                down[j] -= h;
                let fd = (list_loss_and_grad(&up, &list).0 - list_loss_and_grad(&down, &list).0) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-4 * fd.abs().max(g[j].abs()).max(1e-3));
            }
        }
    }

    #[test]
    fn saturated_gold_has_vanishing_gradient() {
        let list = TrainingList {
            query_atom_id: "q".into(),
            rows: vec![[1.0, 0., 0., 0., 0., 0., 0.], [0., 0., 0., 0., 0., 0., 1.0]],
            gold: 0,
        };
        let w = [1e3, 0., 0., 0., 0., 0., -1e3];
        let (loss, g) = list_loss_and_grad(&w, &list);
        assert!(loss < 1e-300);
        assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-300);
    }

    #[test]
    fn identical_rows_stay_tied() {
        let row = [0.3, 0.2, 0.9, 0.1, 1.0, 0.0, 0.0];
        let lists: Vec<TrainingList> = (0..10)
            .map(|i| TrainingList {
                query_atom_id: format!("q{i}"),
                rows: vec![row, row, [0., 0., 0., 0., 0., 0., 1.]],
                gold: i % 2,
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 5,
            lr: 0.5,
            ..TrainConfig::default()
        };
        let w = train_feature_scorer(&lists, None, &cfg).unwrap().as_array();
        let p = softmax(&lists[0].rows.iter().map(|f| logit(&w, f)).collect::<Vec<_>>());
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn gold_out_of_range_is_error() {
        let bad = TrainingList {
            query_atom_id: "qbad".into(),
            rows: vec![[0.0; NUM_FEATURES]],
            gold: 3,
        };
        match train_feature_scorer(&[bad], None, &TrainConfig::default()) {
            Err(Error::GoldNotInList(id)) => assert_eq!(id, "qbad"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let w = FeatureScorerWeights::from_array([0.1, -2.5e-7, 1.0 / 3.0, 7.0, -0.0, 1e300, f64::MIN_POSITIVE]);
        let back = FeatureScorerWeights::from_json(&w.to_json().unwrap()).unwrap();
        for (a, b) in w.weights.iter().zip(&back.weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn weights_reject_wrong_feature_set() {
        let mut w = FeatureScorerWeights::default();
        w.features.pop();
        w.weights.pop();
        assert!(FeatureScorerWeights::from_json(&serde_json::to_string(&w).unwrap()).is_err());
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        assert_eq!(schedule(0, 10, 2, 1.0), 0.5);
        assert_eq!(schedule(1, 10, 2, 1.0), 1.0);
        assert_eq!(schedule(2, 10, 2, 1.0), 1.0);
        assert_eq!(schedule(9, 10, 2, 1.0), 0.125);
    }
}
