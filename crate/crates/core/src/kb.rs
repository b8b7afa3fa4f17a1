//! Knowledge base and insertion set model, plus TSV ingestion.
//!
//! The knowledge base is a flat list of atoms; concepts are materialized from
//! the `concept_id` column. Insertion sets carry the same per-atom metadata
//! plus an optional gold label (an existing concept ID or `NEW`).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Literal used in files for the "new concept" label.
pub const NEW_LABEL: &str = "NEW";

/// A concept assignment: either an existing concept in the knowledge base or
/// the distinguished new-concept value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Existing(String),
    New,
}

impl Label {
    pub fn parse(s: &str) -> Self {
        if s == NEW_LABEL {
            Label::New
        } else {
            Label::Existing(s.to_string())
        }
    }

    pub fn is_new(&self) -> bool {
        matches!(self, Label::New)
    }

    pub fn concept(&self) -> Option<&str> {
        match self {
            Label::Existing(c) => Some(c),
            Label::New => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Existing(c) => f.write_str(c),
            Label::New => f.write_str(NEW_LABEL),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Label::parse(&s))
    }
}

/// One source-specific term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub atom_id: String,
    pub concept_id: String,
    pub string: String,
    pub source: String,
    /// Groups atoms the source vocabulary itself declares synonymous.
    pub source_concept_id: Option<String>,
    pub semantic_group: String,
    pub language: String,
    pub active: bool,
    pub suppressible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub concept_id: String,
    pub atom_ids: Vec<String>,
}

/// A new atom to be inserted. `gold` is `None` in prediction-only mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAtom {
    pub atom_id: String,
    pub string: String,
    pub source: String,
    pub source_concept_id: Option<String>,
    pub semantic_group: String,
    pub language: String,
    pub active: bool,
    pub suppressible: bool,
    pub gold: Option<Label>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertionSet {
    pub queries: Vec<QueryAtom>,
}

impl InsertionSet {
    pub fn new(queries: Vec<QueryAtom>) -> Self {
        Self { queries }
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, QueryAtom> {
        self.queries.iter()
    }

    pub fn has_gold(&self) -> bool {
        !self.queries.is_empty() && self.queries.iter().all(|q| q.gold.is_some())
    }
}

/// Output of any insertion method for a single query atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub query_atom_id: String,
    pub predicted: Label,
    pub confidence: f64,
    /// Candidate concepts in the order the method ranked them.
    pub rank_trace: Vec<(String, f64)>,
}

impl Prediction {
    pub fn new_concept(query_atom_id: &str, confidence: f64) -> Self {
        Self {
            query_atom_id: query_atom_id.to_string(),
            predicted: Label::New,
            confidence,
            rank_trace: Vec::new(),
        }
    }
}

/// Row eligibility applied while loading the knowledge base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityFilter {
    pub english_only: bool,
    pub active_only: bool,
    pub non_suppressible_only: bool,
}

impl Default for EligibilityFilter {
    fn default() -> Self {
        Self {
            english_only: true,
            active_only: true,
            non_suppressible_only: true,
        }
    }
}

impl EligibilityFilter {
    pub fn none() -> Self {
        Self {
            english_only: false,
            active_only: false,
            non_suppressible_only: false,
        }
    }

    pub fn admits(&self, language: &str, active: bool, suppressible: bool) -> bool {
        (!self.english_only || is_english(language))
            && (!self.active_only || active)
            && (!self.non_suppressible_only || !suppressible)
    }
}

fn is_english(code: &str) -> bool {
    code.eq_ignore_ascii_case("ENG") || code.eq_ignore_ascii_case("EN")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_filtered: usize,
    /// Concepts that appeared in the file but had no eligible atom.
    pub concepts_dropped: usize,
}

/// The pre-insertion knowledge base. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    atoms: Vec<Atom>,
    concepts: Vec<Concept>,
    atom_index: HashMap<String, usize>,
    concept_index: HashMap<String, usize>,
    atom_concept: Vec<usize>,
    concept_members: Vec<Vec<usize>>,
    report: IngestReport,
}

impl KnowledgeBase {
    /// Builds a knowledge base from atoms; concepts appear in first-seen order.
    pub fn from_atoms(atoms: Vec<Atom>) -> Result<Self> {
        let mut atom_index = HashMap::with_capacity(atoms.len());
        let mut concept_index: HashMap<String, usize> = HashMap::new();
        let mut concepts: Vec<Concept> = Vec::new();
        let mut concept_members: Vec<Vec<usize>> = Vec::new();
        let mut atom_concept = Vec::with_capacity(atoms.len());

        for (i, atom) in atoms.iter().enumerate() {
            if atom.string.is_empty() {
                return Err(Error::Data(format!("atom {:?} has an empty string", atom.atom_id)));
            }
            if atom_index.insert(atom.atom_id.clone(), i).is_some() {
                return Err(Error::DuplicateAtom(atom.atom_id.clone()));
            }
            let ci = *concept_index.entry(atom.concept_id.clone()).or_insert_with(|| {
                concepts.push(Concept {
                    concept_id: atom.concept_id.clone(),
                    atom_ids: Vec::new(),
                });
                concept_members.push(Vec::new());
                concepts.len() - 1
            });
            concepts[ci].atom_ids.push(atom.atom_id.clone());
            concept_members[ci].push(i);
            atom_concept.push(ci);
        }

        Ok(Self {
            atoms,
            concepts,
            atom_index,
            concept_index,
            atom_concept,
            concept_members,
            report: IngestReport::default(),
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn concept_count(&self) -> usize {
        self.concepts.len()
    }

    pub fn atom(&self, atom_id: &str) -> Option<&Atom> {
        self.atom_index.get(atom_id).map(|&i| &self.atoms[i])
    }

    pub fn atom_position(&self, atom_id: &str) -> Option<usize> {
        self.atom_index.get(atom_id).copied()
    }

    pub fn concept_position(&self, concept_id: &str) -> Option<usize> {
        self.concept_index.get(concept_id).copied()
    }

    pub fn contains_concept(&self, concept_id: &str) -> bool {
        self.concept_index.contains_key(concept_id)
    }

    /// Concept index of the atom at `atom_pos`.
    pub fn concept_of(&self, atom_pos: usize) -> usize {
        self.atom_concept[atom_pos]
    }

    /// Atom positions belonging to the concept at `concept_pos`.
    pub fn members(&self, concept_pos: usize) -> &[usize] {
        &self.concept_members[concept_pos]
    }

    pub fn ingest_report(&self) -> IngestReport {
        self.report
    }
}

const KB_COLUMNS: usize = 9;
const KB_HEADER: &str = "atom_id\tconcept_id\tstring\tsource\tsource_concept_id\tsemantic_group\tlanguage\tactive\tsuppressible";
const Q_HEADER: &str = "atom_id\tstring\tsource\tsource_concept_id\tsemantic_group\tlanguage\tactive\tsuppressible\tgold";

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Yields `(line_number, fields)` for every data row, skipping blank lines
/// and an optional leading header starting with `atom_id`.
fn rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() || (i == 0 && line.starts_with("atom_id\t")) {
            continue;
        }
        out.push((i + 1, line.split('\t').map(str::to_string).collect()));
    }
    Ok(out)
}

fn parse_flag(path: &Path, line: usize, name: &str, v: &str) -> Result<bool> {
    match v {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::Malformed {
            path: path.to_path_buf(),
            line,
            message: format!("{name} must be 0 or 1, got {v:?}"),
        }),
    }
}

fn non_empty(path: &Path, line: usize, name: &str, v: String) -> Result<String> {
    if v.is_empty() {
        Err(Error::Malformed {
            path: path.to_path_buf(),
            line,
            message: format!("{name} is empty"),
        })
    } else {
        Ok(v)
    }
}

fn optional(v: String) -> Option<String> {
    (!v.is_empty()).then_some(v)
}

/// Loads a knowledge base TSV, keeping only rows the filter admits.
pub fn load_kb(path: impl AsRef<Path>, filter: EligibilityFilter) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let mut atoms = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut all_concepts: HashSet<String> = HashSet::new();
    let mut report = IngestReport::default();

    for (line, fields) in rows(path)? {
        if fields.len() != KB_COLUMNS {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line,
                message: format!("expected {KB_COLUMNS} columns, found {}", fields.len()),
            });
        }
        report.rows_read += 1;
        let mut it = fields.into_iter();
        let mut next = || it.next().unwrap_or_default();
        let atom_id = non_empty(path, line, "atom_id", next())?;
        let concept_id = non_empty(path, line, "concept_id", next())?;
        let string = non_empty(path, line, "string", next())?;
        let source = next();
        let source_concept_id = optional(next());
        let semantic_group = next();
        let language = next();
        let active = parse_flag(path, line, "active", &next())?;
        let suppressible = parse_flag(path, line, "suppressible", &next())?;

        if !seen_ids.insert(atom_id.clone()) {
            return Err(Error::DuplicateAtom(atom_id));
        }
        all_concepts.insert(concept_id.clone());
        if !filter.admits(&language, active, suppressible) {
            report.rows_filtered += 1;
            continue;
        }
        atoms.push(Atom {
            atom_id,
            concept_id,
            string,
            source,
            source_concept_id,
            semantic_group,
            language,
            active,
            suppressible,
        });
    }

    let mut kb = KnowledgeBase::from_atoms(atoms)?;
    report.concepts_dropped = all_concepts.len() - kb.concept_count();
    if report.concepts_dropped > 0 {
        log::warn!(
            "{}: {} concept(s) dropped with no eligible atoms",
            path.display(),
            report.concepts_dropped
        );
    }
    kb.report = report;
    Ok(kb)
}

/// Loads an insertion set. When `kb` is given, every gold concept must exist in it.
pub fn load_insertion_set(path: impl AsRef<Path>, kb: Option<&KnowledgeBase>) -> Result<InsertionSet> {
    let path = path.as_ref();
    let mut queries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (line, fields) in rows(path)? {
        if fields.len() != 8 && fields.len() != 9 {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line,
                message: format!("expected 8 or 9 columns, found {}", fields.len()),
            });
        }
        let mut it = fields.into_iter();
        let mut next = || it.next().unwrap_or_default();
        let atom_id = non_empty(path, line, "atom_id", next())?;
        let string = non_empty(path, line, "string", next())?;
        let source = next();
        let source_concept_id = optional(next());
        let semantic_group = next();
        let language = next();
        let active = parse_flag(path, line, "active", &next())?;
        let suppressible = parse_flag(path, line, "suppressible", &next())?;
        let gold = optional(next()).map(|g| Label::parse(&g));
        if !seen.insert(atom_id.clone()) {
            return Err(Error::DuplicateAtom(atom_id));
        }
        queries.push(QueryAtom {
            atom_id,
            string,
            source,
            source_concept_id,
            semantic_group,
            language,
            active,
            suppressible,
            gold,
        });
    }
    let set = InsertionSet::new(queries);
    if let Some(kb) = kb {
        validate_gold(&set, kb)?;
    }
    Ok(set)
}

/// Errors listing every query whose gold concept is absent from `kb`.
pub fn validate_gold(set: &InsertionSet, kb: &KnowledgeBase) -> Result<()> {
    let offending: Vec<String> = set
        .iter()
        .filter_map(|q| match &q.gold {
            Some(Label::Existing(c)) if !kb.contains_concept(c) => Some(format!("{} -> {}", q.atom_id, c)),
            _ => None,
        })
        .collect();
    if offending.is_empty() {
        Ok(())
    } else {
        Err(Error::UnknownGold(offending))
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_kb<W: Write>(kb: &KnowledgeBase, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{KB_HEADER}")?;
    for a in kb.atoms() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            a.atom_id,
            a.concept_id,
            a.string,
            a.source,
            a.source_concept_id.as_deref().unwrap_or(""),
            a.semantic_group,
            a.language,
            flag(a.active),
            flag(a.suppressible)
        )?;
    }
    Ok(())
}

pub fn write_insertion_set<W: Write>(set: &InsertionSet, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{Q_HEADER}")?;
    for q in set.iter() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            q.atom_id,
            q.string,
            q.source,
            q.source_concept_id.as_deref().unwrap_or(""),
            q.semantic_group,
            q.language,
            flag(q.active),
            flag(q.suppressible),
            q.gold.as_ref().map(Label::to_string).unwrap_or_default()
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbStats {
    pub atoms: usize,
    pub concepts: usize,
    pub insertions: usize,
    pub new_concepts: usize,
    pub group_histogram: BTreeMap<String, usize>,
}

pub fn kb_stats(kb: &KnowledgeBase, q: &InsertionSet) -> KbStats {
    let mut group_histogram = BTreeMap::new();
    for query in q.iter() {
        *group_histogram.entry(query.semantic_group.clone()).or_insert(0) += 1;
    }
    KbStats {
        atoms: kb.atom_count(),
        concepts: kb.concept_count(),
        insertions: q.len(),
        new_concepts: q.iter().filter(|x| x.gold == Some(Label::New)).count(),
        group_histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tsv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const THREE: &str = "A1\tC1\tHeart attack\tSNOMED\tS1\tDisorders\tENG\t1\t0\n\
                         A2\tC1\tmyocardial infarction\tMSH\t\tDisorders\tENG\t1\t0\n\
                         A3\tC2\tleft hand\tSNOMED\tS2\tAnatomy\tENG\t1\t0\n";

    #[test]
    fn loads_atoms_and_concepts() {
        let f = tsv(THREE);
        let kb = load_kb(f.path(), EligibilityFilter::default()).unwrap();
        assert_eq!(kb.atom_count(), 3);
        assert_eq!(kb.concept_count(), 2);
        assert_eq!(kb.atom("A2").unwrap().source_concept_id, None);
        assert_eq!(kb.concepts()[0].atom_ids, vec!["A1", "A2"]);
    }

    #[test]
    fn english_filter_drops_other_languages() {
        let f = tsv("A1\tC1\tfever\tMSH\t\tDisorders\tENG\t1\t0\n\
                     A2\tC2\tfièvre\tMSHFRE\t\tDisorders\tFRE\t1\t0\n");
        let kb = load_kb(f.path(), EligibilityFilter::default()).unwrap();
        assert_eq!(kb.atom_count(), 1);
        assert_eq!(kb.ingest_report().concepts_dropped, 1);
        let all = load_kb(f.path(), EligibilityFilter::none()).unwrap();
        assert_eq!(all.atom_count(), 2);
    }

    #[test]
    fn suppressible_and_inactive_rows_filtered() {
        let f = tsv("A1\tC1\tfever\tMSH\t\tDisorders\tENG\t0\t0\n\
                     A2\tC1\tpyrexia\tMSH\t\tDisorders\tENG\t1\t1\n\
                     A3\tC1\tfebrile\tMSH\t\tDisorders\tENG\t1\t0\n");
        let kb = load_kb(f.path(), EligibilityFilter::default()).unwrap();
        assert_eq!(kb.atom_count(), 1);
        assert_eq!(kb.ingest_report().rows_filtered, 2);
    }

    #[test]
    fn duplicate_atom_id_is_an_error() {
        let f = tsv("A1\tC1\tfever\tMSH\t\tDisorders\tENG\t1\t0\n\
                     A1\tC2\tcough\tMSH\t\tDisorders\tENG\t1\t0\n");
        match load_kb(f.path(), EligibilityFilter::default()) {
            Err(Error::DuplicateAtom(id)) => assert_eq!(id, "A1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = tsv("A1\tC1\tfever\tMSH\t\tDisorders\tENG\t1\t0\nA2\tC1\tcough\n");
        match load_kb(f.path(), EligibilityFilter::default()) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = tsv("A1\tC1\tfever\tMSH\t\tDisorders\tENG\tyes\t0\n");
        assert!(matches!(
            load_kb(f.path(), EligibilityFilter::default()),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn insertion_set_with_gold() {
        let kbf = tsv(THREE);
        let kb = load_kb(kbf.path(), EligibilityFilter::default()).unwrap();
        let q = tsv("Q1\theart attacks\tMDR\t\tDisorders\tENG\t1\t0\tC1\n\
                     Q2\tnew thing\tMDR\t\tDisorders\tENG\t1\t0\tNEW\n");
        let set = load_insertion_set(q.path(), Some(&kb)).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.queries[1].gold, Some(Label::New));
        let stats = kb_stats(&kb, &set);
        assert_eq!((stats.atoms, stats.concepts, stats.insertions, stats.new_concepts), (3, 2, 2, 1));
    }

    #[test]
    fn empty_insertion_file_is_empty_set() {
        let q = tsv("");
        let set = load_insertion_set(q.path(), None).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn unknown_gold_lists_rows() {
        let kbf = tsv(THREE);
        let kb = load_kb(kbf.path(), EligibilityFilter::default()).unwrap();
        let q = tsv("Q1\tx\tMDR\t\tDisorders\tENG\t1\t0\tC999\n");
        match load_insertion_set(q.path(), Some(&kb)) {
            Err(Error::UnknownGold(rows)) => assert_eq!(rows, vec!["Q1 -> C999"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn prediction_only_rows_have_no_gold() {
        let q = tsv("Q1\tx\tMDR\t\tDisorders\tENG\t1\t0\nQ2\ty\tMDR\t\tDisorders\tENG\t1\t0\t\n");
        let set = load_insertion_set(q.path(), None).unwrap();
        assert!(set.iter().all(|q| q.gold.is_none()));
        assert!(!set.has_gold());
    }

    #[test]
    fn histogram_sums_to_insertion_size() {
        let kb = KnowledgeBase::default();
        let mk = |id: &str, g: &str| QueryAtom {
            atom_id: id.into(),
            string: "s".into(),
            source: "X".into(),
            source_concept_id: None,
            semantic_group: g.into(),
            language: "ENG".into(),
            active: true,
            suppressible: false,
            gold: Some(Label::New),
        };
        let set = InsertionSet::new(vec![mk("1", "Disorders"), mk("2", "Disorders"), mk("3", "Anatomy")]);
        let stats = kb_stats(&kb, &set);
        assert_eq!(stats.group_histogram["Disorders"], 2);
        assert_eq!(stats.group_histogram.values().sum::<usize>(), 3);
    }

    #[test]
    fn write_then_load_round_trips() {
        let f = tsv(THREE);
        let kb = load_kb(f.path(), EligibilityFilter::none()).unwrap();
        let mut buf = Vec::new();
        write_kb(&kb, &mut buf).unwrap();
        let g = tsv(std::str::from_utf8(&buf).unwrap());
        let again = load_kb(g.path(), EligibilityFilter::none()).unwrap();
        assert_eq!(kb.atoms(), again.atoms());
        assert_eq!(kb.concepts(), again.concepts());
    }
}
