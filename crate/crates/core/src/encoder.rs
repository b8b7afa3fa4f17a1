//! Embedding providers.
//!
//! Neural encoders live outside the engine and hand over vectors through the
//! binary embedding file. [`HashedNgramEncoder`] is a built-in lexical
//! provider: signed feature hashing of character trigrams and word unigrams.

use rayon::prelude::*;

use crate::error::Result;
use crate::kb::{InsertionSet, KnowledgeBase};
use crate::vecindex::EmbeddingStore;

pub trait Encoder: Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Vec<f32>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedNgramEncoder {
    pub dim: usize,
}

impl Default for HashedNgramEncoder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

fn fnv1a(bytes: &[u8], salt: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ salt;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashedNgramEncoder {
    fn add(&self, v: &mut [f32], feature: &str, weight: f32) {
        let h = fnv1a(feature.as_bytes(), 0);
        let slot = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        v[slot] += sign * weight;
    }
}

impl Encoder for HashedNgramEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        for w in &words {
            let padded: Vec<char> = std::iter::once('#').chain(w.chars()).chain(std::iter::once('#')).collect();
            for tri in padded.windows(3) {
                let s: String = tri.iter().collect();
                self.add(&mut v, &s, 1.0);
            }
            self.add(&mut v, &format!("w:{w}"), 1.0);
        }
        if v.iter().all(|&x| x == 0.0) {
            // strings without alphanumerics still need a valid direction
            self.add(&mut v, &format!("raw:{text}"), 1.0);
        }
        v
    }
}

/// Encodes every KB atom and query atom into a store.
pub fn encode_atoms<E: Encoder>(encoder: &E, kb: &KnowledgeBase, queries: &[&InsertionSet]) -> Result<EmbeddingStore> {
    let items: Vec<(&str, &str)> = kb
        .atoms()
        .iter()
        .map(|a| (a.atom_id.as_str(), a.string.as_str()))
        .chain(
            queries
                .iter()
                .flat_map(|q| q.iter().map(|x| (x.atom_id.as_str(), x.string.as_str()))),
        )
        .collect();
    let vectors: Vec<Vec<f32>> = items.par_iter().map(|(_, s)| encoder.encode(s)).collect();
    let mut store = EmbeddingStore::new(encoder.dim());
    for ((id, _), v) in items.iter().zip(&vectors) {
        if store.position(id).is_none() {
            store.insert(id, v)?;
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecindex::dot;

    fn sim(a: &str, b: &str) -> f64 {
        let e = HashedNgramEncoder::default();
        let mut s = EmbeddingStore::new(e.dim);
        s.insert("a", &e.encode(a)).unwrap();
        s.insert("b", &e.encode(b)).unwrap();
        dot(s.get("a").unwrap(), s.get("b").unwrap())
    }

    #[test]
    fn similar_strings_score_higher() {
        assert!((sim("aspirin tablet", "Aspirin Tablet") - 1.0).abs() < 1e-6);
        assert!(sim("aspirin tablet", "aspirin tablets") > sim("aspirin tablet", "femur fracture"));
    }

    #[test]
    fn punctuation_only_is_nonzero() {
        let v = HashedNgramEncoder::default().encode("--");
        assert!(v.iter().any(|&x| x != 0.0));
    }
}
