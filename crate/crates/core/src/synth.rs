//! Seeded synthetic insertion corpora.
//!
//! Concept names are built from invented words, each used by one concept
//! only. Query atoms come in four kinds:
//! - new concepts with unseen words;
//! - rewrites of a KB term that normalize to it;
//! - rewrites of a term whose source identifier is shared by two concepts;
//! - lexical variants (a typo or an extra qualifier) that no rule links.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{write_insertion_set, write_kb, Atom, InsertionSet, KnowledgeBase, Label, QueryAtom};
use crate::lexnorm::{normalize, NormConfig};

pub const SYNTH_GROUPS: [&str; 6] = ["Anatomy", "Chemicals", "Devices", "Disorders", "Genes", "Procedures"];

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 5] = ["", "n", "r", "s", "x"];
const QUALIFIERS: [&str; 6] = ["oral", "acute", "chronic", "left", "right", "unspecified"];
const KB_SUFFIXES: [&str; 3] = ["product", "finding", "structure"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub concepts: usize,
    pub atoms: usize,
    /// Concept pairs whose atoms share one source identifier.
    pub ambiguous_pairs: usize,
    pub train_queries: usize,
    pub valid_queries: usize,
    pub test_queries: usize,
    pub new_ratio: f64,
    pub exact_ratio: f64,
    pub ambiguous_ratio: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            concepts: 1500,
            atoms: 5000,
            ambiguous_pairs: 150,
            train_queries: 1000,
            valid_queries: 300,
            test_queries: 500,
            new_ratio: 0.30,
            exact_ratio: 0.25,
            ambiguous_ratio: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    New,
    Exact,
    Ambiguous,
    Variant,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub kb: KnowledgeBase,
    pub train: InsertionSet,
    pub valid: InsertionSet,
    pub test: InsertionSet,
    /// Query kind per test query, in order.
    pub test_kinds: Vec<QueryKind>,
}

impl SynthCorpus {
    /// Writes `kb.tsv`, `train.tsv`, `valid.tsv` and `test.tsv`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| Error::io(&p, e))
        };
        write_kb(&self.kb, create("kb.tsv")?).map_err(|e| Error::io(dir.join("kb.tsv"), e))?;
        for (name, set) in [("train.tsv", &self.train), ("valid.tsv", &self.valid), ("test.tsv", &self.test)] {
            write_insertion_set(set, create(name)?).map_err(|e| Error::io(dir.join(name), e))?;
        }
        Ok(())
    }
}

struct Words {
    used: HashSet<String>,
}

impl Words {
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let syllables = rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(rng).unwrap());
                w.push_str(VOWELS.choose(rng).unwrap());
                w.push_str(CODAS.choose(rng).unwrap());
            }
            if w.len() >= 4 && self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn title(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

struct ConceptSpec {
    id: String,
    group: &'static str,
    words: Vec<String>,
    atoms: Vec<usize>,
}

/// Surface forms of a concept name. Index 0 and 1 normalize to the same key.
fn kb_string(words: &[String], variant: usize) -> String {
    match variant {
        0 => words.iter().map(|w| title(w)).collect::<Vec<_>>().join(" "),
        1 => {
            let r: Vec<&str> = words.iter().map(String::as_str).rev().collect();
            format!("{}, {}", r[0], r[1..].join(" "))
        }
        v => format!("{} {}", words.join(" "), KB_SUFFIXES[(v - 2) % KB_SUFFIXES.len()]),
    }
}

/// Rewrites that normalize to the same key as `s`.
fn normalizing_rewrite(s: &str, rng: &mut ChaCha8Rng) -> String {
    let mut toks: Vec<String> = s
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    toks.shuffle(rng);
    match rng.gen_range(0..3) {
        0 => toks.join(" ").to_uppercase(),
        1 => toks.join("-"),
        _ => {
            let last = toks.len() - 1;
            toks[last] = format!("{}'s", toks[last]);
            toks.join(" ")
        }
    }
}

fn typo(word: &str, rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = word.chars().collect();
    // keep the first two characters so the word stays recognizable
    let i = rng.gen_range(2..chars.len());
    let mut out = chars.clone();
    loop {
        let c = (b'a' + rng.gen_range(0..26u8)) as char;
        if c != chars[i] {
            out[i] = c;
            break;
        }
    }
    out.into_iter().collect()
}

struct Builder {
    rng: ChaCha8Rng,
    words: Words,
    concepts: Vec<ConceptSpec>,
    atoms: Vec<Atom>,
    ambiguous: Vec<(usize, usize)>,
    kb_keys: HashSet<String>,
    norm: NormConfig,
    next_query: usize,
}

impl Builder {
    fn query(&mut self, string: String, group: &str, source: (&str, Option<String>), gold: Label) -> QueryAtom {
        self.next_query += 1;
        QueryAtom {
            atom_id: format!("Q{:06}", self.next_query),
            string,
            source: source.0.to_string(),
            source_concept_id: source.1,
            semantic_group: group.to_string(),
            language: "ENG".into(),
            active: true,
            suppressible: false,
            gold: Some(gold),
        }
    }

    fn fresh_source(&self) -> (&'static str, Option<String>) {
        ("SRC_Q", Some(format!("QS{:06}", self.next_query + 1)))
    }

    fn make_query(&mut self, kind: QueryKind) -> QueryAtom {
        let plain = self.ambiguous.len() * 2;
        match kind {
            QueryKind::New => {
                let n = self.rng.gen_range(2..=3);
                let s = (0..n)
                    .map(|_| self.words.fresh(&mut self.rng))
                    .collect::<Vec<_>>()
                    .join(" ");
                let group = *SYNTH_GROUPS.choose(&mut self.rng).unwrap();
                let src = self.fresh_source();
                self.query(s, group, src, Label::New)
            }
            QueryKind::Exact => {
                let c = self.rng.gen_range(plain..self.concepts.len());
                let a = *self.concepts[c].atoms.choose(&mut self.rng).unwrap();
                let s = normalizing_rewrite(&self.atoms[a].string, &mut self.rng);
                let (id, group) = (self.concepts[c].id.clone(), self.concepts[c].group);
                let src = self.fresh_source();
                self.query(s, group, src, Label::Existing(id))
            }
            QueryKind::Ambiguous => {
                let (c, _) = *self.ambiguous.choose(&mut self.rng).unwrap();
                let a = self.concepts[c].atoms[0];
                let s = normalizing_rewrite(&self.atoms[a].string, &mut self.rng);
                let (id, group) = (self.concepts[c].id.clone(), self.concepts[c].group);
                let src = self.fresh_source();
                self.query(s, group, src, Label::Existing(id))
            }
            QueryKind::Variant => loop {
                let c = self.rng.gen_range(plain..self.concepts.len());
                let mut words = self.concepts[c].words.clone();
                if self.rng.gen_bool(0.6) {
                    let i = self.rng.gen_range(0..words.len());
                    words[i] = typo(&words[i], &mut self.rng);
                } else {
                    words.push(QUALIFIERS.choose(&mut self.rng).unwrap().to_string());
                }
                let s = words.join(" ");
                if self.kb_keys.contains(&normalize(&s, &self.norm)) {
                    continue;
                }
                let (id, group) = (self.concepts[c].id.clone(), self.concepts[c].group);
                let src = self.fresh_source();
                break self.query(s, group, src, Label::Existing(id));
            },
        }
    }

    fn query_set(&mut self, n: usize, cfg: &SynthConfig) -> (InsertionSet, Vec<QueryKind>) {
        let counts = crate::eval::largest_remainder(
            n,
            &[
                cfg.new_ratio,
                cfg.exact_ratio,
                cfg.ambiguous_ratio,
                1.0 - cfg.new_ratio - cfg.exact_ratio - cfg.ambiguous_ratio,
            ],
        );
        let mut kinds: Vec<QueryKind> = [QueryKind::New, QueryKind::Exact, QueryKind::Ambiguous, QueryKind::Variant]
            .into_iter()
            .zip(counts)
            .flat_map(|(k, c)| std::iter::repeat(k).take(c))
            .collect();
        if self.ambiguous.is_empty() {
            for k in &mut kinds {
                if *k == QueryKind::Ambiguous {
                    *k = QueryKind::Exact;
                }
            }
        }
        kinds.shuffle(&mut self.rng);
        let queries = kinds.iter().map(|&k| self.make_query(k)).collect();
        (InsertionSet::new(queries), kinds)
    }
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.concepts == 0 || cfg.atoms < 2 * cfg.concepts || cfg.atoms > 5 * cfg.concepts {
        return Err(Error::Config("synthetic corpus needs between 2 and 5 atoms per concept".into()));
    }
    if cfg.ambiguous_pairs * 2 >= cfg.concepts {
        return Err(Error::Config("too many ambiguous pairs for the concept count".into()));
    }
    let rest = 1.0 - cfg.new_ratio - cfg.exact_ratio - cfg.ambiguous_ratio;
    if [cfg.new_ratio, cfg.exact_ratio, cfg.ambiguous_ratio, rest].iter().any(|&r| r < 0.0) {
        return Err(Error::Config("query kind ratios must be non-negative and sum to at most 1".into()));
    }

    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        words: Words { used: HashSet::new() },
        concepts: Vec::new(),
        atoms: Vec::new(),
        ambiguous: Vec::new(),
        kb_keys: HashSet::new(),
        norm: NormConfig::default(),
        next_query: 0,
    };

    let mut sizes = vec![2usize; cfg.concepts];
    let mut extra = cfg.atoms - 2 * cfg.concepts;
    while extra > 0 {
        let c = b.rng.gen_range(0..cfg.concepts);
        if sizes[c] < 5 {
            sizes[c] += 1;
            extra -= 1;
        }
    }

    for (c, &size) in sizes.iter().enumerate() {
        let n_words = b.rng.gen_range(2..=3);
        let words: Vec<String> = (0..n_words).map(|_| b.words.fresh(&mut b.rng)).collect();
        let group = *SYNTH_GROUPS.choose(&mut b.rng).unwrap();
        let id = format!("C{:07}", c + 1);
        let mut atom_ids = Vec::new();
        for v in 0..size {
            let string = kb_string(&words, v);
            let (source, scid) = match v {
                0 => ("SRC_A", Some(format!("A{:06}", c))),
                1 => ("SRC_B", Some(format!("B{:06}", c))),
                _ => ("SRC_C", None),
            };
            b.kb_keys.insert(normalize(&string, &b.norm));
            atom_ids.push(b.atoms.len());
            b.atoms.push(Atom {
                atom_id: format!("A{:07}", b.atoms.len() + 1),
                concept_id: id.clone(),
                string,
                source: source.into(),
                source_concept_id: scid,
                semantic_group: group.into(),
                language: "ENG".into(),
                active: true,
                suppressible: false,
            });
        }
        b.concepts.push(ConceptSpec {
            id,
            group,
            words,
            atoms: atom_ids,
        });
    }

    // pair (2i, 2i+1): the partner's first atom reuses the first atom's source id
    for i in 0..cfg.ambiguous_pairs {
        let (c1, c2) = (2 * i, 2 * i + 1);
        let shared = b.atoms[b.concepts[c1].atoms[0]].source_concept_id.clone();
        let target = b.concepts[c2].atoms[0];
        b.atoms[target].source_concept_id = shared;
        b.concepts[c2].group = b.concepts[c1].group;
        for &a in &b.concepts[c2].atoms {
            b.atoms[a].semantic_group = b.concepts[c1].group.into();
        }
        b.ambiguous.push((c1, c2));
    }

    let (train, _) = b.query_set(cfg.train_queries, cfg);
    let (valid, _) = b.query_set(cfg.valid_queries, cfg);
    let (test, test_kinds) = b.query_set(cfg.test_queries, cfg);
    let kb = KnowledgeBase::from_atoms(b.atoms)?;
    Ok(SynthCorpus {
        kb,
        train,
        valid,
        test,
        test_kinds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            concepts: 60,
            atoms: 200,
            ambiguous_pairs: 6,
            train_queries: 40,
            valid_queries: 10,
            test_queries: 50,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn sizes_and_determinism() {
        let a = generate_corpus(&small()).unwrap();
        assert_eq!(a.kb.atom_count(), 200);
        assert_eq!(a.kb.concept_count(), 60);
        assert_eq!(a.test.len(), 50);
        assert_eq!(a.test_kinds.iter().filter(|k| **k == QueryKind::New).count(), 15);
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.kb.atoms(), b.kb.atoms());
    }

    #[test]
    fn gold_labels_are_consistent() {
        let c = generate_corpus(&small()).unwrap();
        let norm = NormConfig::default();
        let keys: HashSet<String> = c.kb.atoms().iter().map(|a| normalize(&a.string, &norm)).collect();
        for (q, kind) in c.test.iter().zip(&c.test_kinds) {
            let gold = q.gold.as_ref().unwrap();
            match kind {
                QueryKind::New => assert!(gold.is_new()),
                _ => assert!(c.kb.contains_concept(gold.concept().unwrap())),
            }
            let linked = keys.contains(&normalize(&q.string, &norm));
            assert_eq!(linked, matches!(kind, QueryKind::Exact | QueryKind::Ambiguous), "{q:?}");
        }
    }

    #[test]
    fn rejects_impossible_shapes() {
        let bad = SynthConfig {
            atoms: 10,
            ..small()
        };
        assert!(generate_corpus(&bad).is_err());
    }
}
