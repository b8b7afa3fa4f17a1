//! Hierarchical navigable small-world graph for approximate cosine search.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecindex::{dot, knn, rank_order, EmbeddingStore, Neighbor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Links per node on upper layers; layer 0 keeps twice as many.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    pos: usize,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.pos.cmp(&self.pos))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    params: HnswParams,
    /// links[node][layer] -> neighbor positions
    links: Vec<Vec<Vec<usize>>>,
    entry: Option<usize>,
    top_layer: usize,
}

impl HnswIndex {
    pub fn build(store: &EmbeddingStore, params: HnswParams) -> Self {
        let m = params.m.max(2);
        let level_mult = 1.0 / (m as f64).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut index = Self {
            params: HnswParams { m, ..params },
            links: Vec::with_capacity(store.len()),
            entry: None,
            top_layer: 0,
        };
        for pos in 0..store.len() {
            let u: f64 = 1.0 - rng.gen::<f64>();
            let level = ((-u.ln()) * level_mult).floor() as usize;
            index.insert(store, pos, level.min(16));
        }
        index
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    fn capacity(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, store: &EmbeddingStore, pos: usize, level: usize) {
        self.links.push(vec![Vec::new(); level + 1]);
        let Some(mut ep) = self.entry else {
            self.entry = Some(pos);
            self.top_layer = level;
            return;
        };
        let q = store.vector(pos);
        for layer in (level + 1..=self.top_layer).rev() {
            ep = self.greedy(store, q, ep, layer);
        }
        let mut entry_points = vec![ep];
        for layer in (0..=level.min(self.top_layer)).rev() {
            let found = self.search_layer(store, q, &entry_points, self.params.ef_construction, layer);
            let chosen = self.select(store, &found, self.capacity(layer));
            for &nb in &chosen {
                self.links[nb][layer].push(pos);
                if self.links[nb][layer].len() > self.capacity(layer) {
                    self.prune(store, nb, layer);
                }
            }
            self.links[pos][layer] = chosen;
            entry_points = found.iter().map(|s| s.pos).collect();
        }
        if level > self.top_layer {
            self.top_layer = level;
            self.entry = Some(pos);
        }
    }

    fn prune(&mut self, store: &EmbeddingStore, node: usize, layer: usize) {
        let base = store.vector(node);
        let mut cands: Vec<Scored> = self.links[node][layer]
            .iter()
            .map(|&p| Scored {
                sim: dot(base, store.vector(p)),
                pos: p,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        self.links[node][layer] = self.select(store, &cands, self.capacity(layer));
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the
    /// query than to every neighbor already kept, then top up with the best
    /// of the rejected ones. `cands` must be sorted best-first.
    fn select(&self, store: &EmbeddingStore, cands: &[Scored], limit: usize) -> Vec<usize> {
        let mut kept: Vec<usize> = Vec::with_capacity(limit);
        let mut rejected = Vec::new();
        for c in cands {
            if kept.len() >= limit {
                break;
            }
            let v = store.vector(c.pos);
            if kept.iter().all(|&k| dot(v, store.vector(k)) < c.sim) {
                kept.push(c.pos);
            } else {
                rejected.push(c.pos);
            }
        }
        for r in rejected {
            if kept.len() >= limit {
                break;
            }
            kept.push(r);
        }
        kept
    }

    fn greedy(&self, store: &EmbeddingStore, q: &[f32], mut ep: usize, layer: usize) -> usize {
        let mut best = dot(q, store.vector(ep));
        loop {
            let mut improved = false;
            for &nb in &self.links[ep][layer] {
                let s = dot(q, store.vector(nb));
                if s > best {
                    best = s;
                    ep = nb;
                    improved = true;
                }
            }
            if !improved {
                return ep;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` nodes, best first.
    fn search_layer(&self, store: &EmbeddingStore, q: &[f32], entry: &[usize], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited: HashSet<usize> = entry.iter().copied().collect();
        let mut frontier: BinaryHeap<Scored> = BinaryHeap::new();
        let mut best: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        for &e in entry {
            let s = Scored {
                sim: dot(q, store.vector(e)),
                pos: e,
            };
            frontier.push(s);
            best.push(std::cmp::Reverse(s));
            if best.len() > ef {
                best.pop();
            }
        }
        while let Some(cur) = frontier.pop() {
            let worst = best.peek().map(|r| r.0.sim).unwrap_or(f64::NEG_INFINITY);
            if best.len() >= ef && cur.sim < worst {
                break;
            }
            for &nb in self.links[cur.pos].get(layer).map(Vec::as_slice).unwrap_or(&[]) {
                if !visited.insert(nb) {
                    continue;
                }
                let s = Scored {
                    sim: dot(q, store.vector(nb)),
                    pos: nb,
                };
                let worst = best.peek().map(|r| r.0.sim).unwrap_or(f64::NEG_INFINITY);
                if best.len() < ef || s.sim > worst {
                    frontier.push(s);
                    best.push(std::cmp::Reverse(s));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    pub fn search(&self, store: &EmbeddingStore, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        if query.len() != store.dim() {
            return Err(Error::DimensionMismatch {
                expected: store.dim(),
                actual: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let Some(mut ep) = self.entry else {
            return Ok(Vec::new());
        };
        for layer in (1..=self.top_layer).rev() {
            ep = self.greedy(store, query, ep, layer);
        }
        let found = self.search_layer(store, query, &[ep], self.params.ef_search.max(k), 0);
        let mut out: Vec<Neighbor> = found
            .into_iter()
            .map(|s| Neighbor {
                pos: s.pos,
                score: s.sim,
            })
            .collect();
        out.sort_by(|a, b| rank_order(store, a, b));
        out.truncate(k);
        Ok(out)
    }

    /// Mean recall@k of this index against exact search over `queries`.
    pub fn recall(&self, store: &EmbeddingStore, queries: &[Vec<f32>], k: usize) -> Result<f64> {
        if queries.is_empty() {
            return Ok(1.0);
        }
        let mut total = 0.0;
        for q in queries {
            let exact: HashSet<usize> = knn(store, q, k)?.into_iter().map(|n| n.pos).collect();
            let approx = self.search(store, q, k)?;
            let hit = approx.iter().filter(|n| exact.contains(&n.pos)).count();
            total += hit as f64 / exact.len().max(1) as f64;
        }
        Ok(total / queries.len() as f64)
    }

    /// Doubles `ef_search` until the measured recall reaches `target` or
    /// `ef_search` covers the whole store. Returns the final recall.
    pub fn calibrate(&mut self, store: &EmbeddingStore, queries: &[Vec<f32>], k: usize, target: f64) -> Result<f64> {
        loop {
            let r = self.recall(store, queries, k)?;
            if r >= target || self.params.ef_search >= store.len() {
                return Ok(r);
            }
            self.params.ef_search = (self.params.ef_search * 2).min(store.len());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_store() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(2);
        for i in 0..64 {
            let a = i as f64 / 64.0 * std::f64::consts::TAU;
            s.insert(&format!("p{i:02}"), &[a.cos() as f32, a.sin() as f32]).unwrap();
        }
        s
    }

    #[test]
    fn finds_nearest_on_circle() {
        let s = grid_store();
        let h = HnswIndex::build(&s, HnswParams::default());
        let top = h.search(&s, s.vector(10), 3).unwrap();
        assert_eq!(s.id(top[0].pos), "p10");
        let ids: HashSet<&str> = top.iter().map(|n| s.id(n.pos)).collect();
        assert_eq!(ids, ["p09", "p10", "p11"].into());
    }

    #[test]
    fn empty_store_returns_nothing() {
        let s = EmbeddingStore::new(4);
        let h = HnswIndex::build(&s, HnswParams::default());
        assert!(h.search(&s, &[1.0, 0.0, 0.0, 0.0], 5).unwrap().is_empty());
    }

    #[test]
    fn build_is_seeded() {
        let s = grid_store();
        let a = HnswIndex::build(&s, HnswParams::default());
        let b = HnswIndex::build(&s, HnswParams::default());
        assert_eq!(a.links, b.links);
    }
}
