//! Lexical normalization and semantic-group compatibility.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormConfig {
    pub unicode_fold: bool,
    pub strip_possessives: bool,
    pub punctuation_to_space: bool,
    pub sort_tokens: bool,
    #[serde(default)]
    pub stopwords: BTreeSet<String>,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self {
            unicode_fold: true,
            strip_possessives: true,
            punctuation_to_space: true,
            sort_tokens: true,
            stopwords: BTreeSet::new(),
        }
    }
}

/// Normalizes a term string.
///
/// Steps, in order: NFKC fold, lowercase, possessive strip, punctuation to
/// space, whitespace collapse, stopword removal, token sort.
pub fn normalize(s: &str, cfg: &NormConfig) -> String {
    let folded: String = if cfg.unicode_fold { s.nfkc().collect() } else { s.to_string() };
    let lower = folded.to_lowercase();

    let mut tokens: Vec<String> = Vec::new();
    for raw in lower.split_whitespace() {
        let mut word = raw.to_string();
        if cfg.strip_possessives {
            word = strip_possessives(&word);
        }
        if cfg.punctuation_to_space {
            let mapped: String = word
                .chars()
                .map(|c| if c.is_alphanumeric() { c } else { ' ' })
                .collect();
            tokens.extend(mapped.split_whitespace().map(str::to_string));
        } else if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens.retain(|t| !cfg.stopwords.contains(t));
    if cfg.sort_tokens {
        tokens.sort();
    }
    tokens.join(" ")
}

/// Removes trailing `'s` (straight or curly apostrophe) from a whitespace
/// token, and from every punctuation-delimited word inside it.
fn strip_possessives(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    let mut out = String::with_capacity(word.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if is_apostrophe(c)
            && i + 1 < chars.len()
            && chars[i + 1] == 's'
            && chars.get(i + 2).map_or(true, |n| !n.is_alphanumeric())
            && i > 0
            && chars[i - 1].is_alphanumeric()
        {
            i += 2;
            continue;
        }
        out.push(c);
        i += 1;
    }
    if out.len() != word.len() {
        // "x's's" collapses one layer per pass; repeat so the result is a fixed point
        strip_possessives(&out)
    } else {
        out
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Symmetric, reflexive compatibility relation over semantic groups.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompatibilityMatrix {
    groups: BTreeSet<String>,
    pairs: HashSet<(String, String)>,
}

impl CompatibilityMatrix {
    /// Identity matrix over the given groups.
    pub fn identity<I, S>(groups: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut m = Self::default();
        m.register(groups);
        m
    }

    pub fn register<I, S>(&mut self, groups: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.groups.extend(groups.into_iter().map(Into::into));
    }

    pub fn allow(&mut self, a: &str, b: &str) {
        self.register([a, b]);
        if a != b {
            self.pairs.insert(ordered(a, b));
        }
    }

    pub fn groups(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(String::as_str)
    }

    pub fn knows(&self, g: &str) -> bool {
        self.groups.contains(g)
    }

    /// Lookup assuming both groups are registered; unknown pairs are incompatible.
    pub(crate) fn allows(&self, a: &str, b: &str) -> bool {
        a == b || self.pairs.contains(&ordered(a, b))
    }

    /// Reads `group1<TAB>group2<TAB>flag` rows. A `1` flag marks the pair
    /// compatible; `0` only registers the groups.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |message: String| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 columns, found {}", fields.len())));
            }
            match fields[2] {
                "1" => m.allow(fields[0], fields[1]),
                "0" => m.register([fields[0], fields[1]]),
                other => return Err(bad(format!("flag must be 0 or 1, got {other:?}"))),
            }
        }
        Ok(m)
    }
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

pub fn compatible(g1: &str, g2: &str, m: &CompatibilityMatrix) -> Result<bool> {
    for g in [g1, g2] {
        if !m.knows(g) {
            return Err(Error::UnknownGroup(g.to_string()));
        }
    }
    Ok(m.allows(g1, g2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(s: &str) -> String {
        normalize(s, &NormConfig::default())
    }

    #[test]
    fn default_pipeline_examples() {
        assert_eq!(norm("Addison's Disease"), "addison disease");
        assert_eq!(norm("Heart attack"), "attack heart");
        assert_eq!(norm("ATTACK, HEART"), "attack heart");
        assert_eq!(norm(""), "");
        assert_eq!(norm("  \t "), "");
    }

    #[test]
    fn curly_apostrophe_and_compat_forms() {
        assert_eq!(norm("Addison\u{2019}s disease"), "addison disease");
        // fullwidth letters and the fi ligature fold to ASCII
        assert_eq!(norm("\u{FF21}spirin \u{FB01}ber"), "aspirin fiber");
    }

    #[test]
    fn possessive_only_at_word_end() {
        assert_eq!(norm("o'sullivan"), "o sullivan");
        assert_eq!(norm("children's"), "children");
        assert_eq!(norm("Charles's's"), "charles");
    }

    #[test]
    fn switches_are_respected() {
        let mut cfg = NormConfig {
            sort_tokens: false,
            ..NormConfig::default()
        };
        assert_eq!(normalize("Heart attack", &cfg), "heart attack");
        cfg.punctuation_to_space = false;
        assert_eq!(normalize("Heart-attack", &cfg), "heart-attack");
        cfg.stopwords.insert("of".into());
        assert_eq!(normalize("fracture of femur", &cfg), "fracture femur");
    }

    #[test]
    fn compatibility_lookup() {
        let mut m = CompatibilityMatrix::identity(["Disorders", "Anatomy"]);
        assert!(compatible("Disorders", "Disorders", &m).unwrap());
        assert!(!compatible("Disorders", "Anatomy", &m).unwrap());
        m.allow("Drugs", "Chemicals");
        assert!(compatible("Drugs", "Chemicals", &m).unwrap());
        assert!(compatible("Chemicals", "Drugs", &m).unwrap());
        match compatible("Disorders", "Genes", &m) {
            Err(Error::UnknownGroup(g)) => assert_eq!(g, "Genes"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matrix_file() {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "Drugs\tChemicals\t1\nAnatomy\tDisorders\t0").unwrap();
        let m = CompatibilityMatrix::load(f.path()).unwrap();
        assert!(compatible("Chemicals", "Drugs", &m).unwrap());
        assert!(!compatible("Anatomy", "Disorders", &m).unwrap());
        assert!(compatible("Anatomy", "Anatomy", &m).unwrap());
    }

    fn any_config() -> impl Strategy<Value = NormConfig> {
        (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>(), prop::bool::ANY).prop_map(
            |(unicode_fold, strip_possessives, punctuation_to_space, sort_tokens, stop)| NormConfig {
                unicode_fold,
                strip_possessives,
                punctuation_to_space,
                sort_tokens,
                stopwords: if stop { ["of".to_string(), "the".to_string()].into() } else { BTreeSet::new() },
            },
        )
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}", cfg in any_config()) {
            let once = normalize(&s, &cfg);
            prop_assert_eq!(normalize(&once, &cfg), once.clone());
        }

        #[test]
        fn normalize_is_idempotent_on_term_like_text(
            s in "[A-Za-z0-9 ,.'’()\\-/]{0,40}( of| the|'s)?",
            cfg in any_config(),
        ) {
            let once = normalize(&s, &cfg);
            prop_assert_eq!(normalize(&once, &cfg), once.clone());
            prop_assert_eq!(normalize(&s, &cfg.clone()), once);
        }

        #[test]
        fn compatibility_is_symmetric(
            pairs in prop::collection::vec((0usize..5, 0usize..5), 0..8),
            a in 0usize..5,
            b in 0usize..5,
        ) {
            let names = ["A", "B", "C", "D", "E"];
            let mut m = CompatibilityMatrix::identity(names);
            for (x, y) in pairs {
                m.allow(names[x], names[y]);
            }
            prop_assert_eq!(
                compatible(names[a], names[b], &m).unwrap(),
                compatible(names[b], names[a], &m).unwrap()
            );
        }
    }
}
