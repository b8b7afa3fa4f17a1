//! End-to-end runs: load inputs, predict with one method, evaluate, and
//! write predictions, metrics and a manifest that reproduces the run.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::candidates::{augmented_from_positions, generate_from_positions, CandidateList, DEFAULT_K};
use crate::encoder::{encode_atoms, HashedNgramEncoder};
use crate::error::{Error, Result};
use crate::eval::{calibration_bins, compute_metrics, latency_bench, render_calibration, write_predictions, CalibrationBin, LatencyReport, MetricsReport};
use crate::kb::{load_insertion_set, load_kb, EligibilityFilter, InsertionSet, KnowledgeBase, Prediction, QueryAtom};
use crate::lexnorm::{CompatibilityMatrix, NormConfig};
use crate::protocol::{Endpoint, ProtocolScorer, RecordingScorer, ReplayScorer};
use crate::rba::{build_closure, candidate_positions, rba_predict, SynonymyClosure};
use crate::reranker::{rerank_predict, score_list, PairScorer};
use crate::scorer::{FeatureScorer, FeatureScorerWeights, TrainingList};
use crate::vecindex::{biencoder_predict, load_embeddings, EmbeddingStore, IndexMode, KbIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rba")]
    Rba,
    #[serde(rename = "biencoder")]
    Biencoder,
    #[serde(rename = "rba+rank")]
    RbaRank,
    #[serde(rename = "rerank")]
    Rerank,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Rba, Method::Biencoder, Method::RbaRank, Method::Rerank];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rba => "rba",
            Method::Biencoder => "biencoder",
            Method::RbaRank => "rba+rank",
            Method::Rerank => "rerank",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        self != Method::Rba
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected rba, biencoder, rba+rank or rerank)")))
    }
}

/// Everything a run depends on. Serialized verbatim into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kb: PathBuf,
    pub queries: PathBuf,
    /// Binary embedding file; without it the built-in hashed encoder is used.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub matrix: Option<PathBuf>,
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub scorer: Option<String>,
    #[serde(default)]
    pub replay: Option<PathBuf>,
    #[serde(default)]
    pub record: Option<PathBuf>,
    pub method: Method,
    pub k: usize,
    #[serde(default)]
    pub theta: Option<f64>,
    pub seed: u64,
    pub norm: NormConfig,
    pub filter: EligibilityFilter,
    pub index: IndexMode,
    /// Worker threads; 0 lets the runtime choose.
    pub workers: usize,
    /// Connections kept open to an external scorer.
    pub scorer_connections: usize,
    pub dump_candidates: bool,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(kb: impl Into<PathBuf>, queries: impl Into<PathBuf>, method: Method, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            kb: kb.into(),
            queries: queries.into(),
            embeddings: None,
            matrix: None,
            weights: None,
            scorer: None,
            replay: None,
            record: None,
            method,
            k: DEFAULT_K,
            theta: None,
            seed: 0,
            norm: NormConfig::default(),
            filter: EligibilityFilter::default(),
            index: IndexMode::Exact,
            workers: 0,
            scorer_connections: 4,
            dump_candidates: false,
            output_dir: output_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        match self.method {
            Method::Biencoder if self.theta.map_or(true, |t| t.is_nan()) => {
                Err(Error::Config("method biencoder needs a similarity threshold (theta)".into()))
            }
            Method::Rerank => {
                let sources = [self.weights.is_some(), self.scorer.is_some(), self.replay.is_some()]
                    .into_iter()
                    .filter(|&b| b)
                    .count();
                match sources {
                    0 => Err(Error::Config(
                        "method rerank needs scorer weights, a scorer endpoint or a replay file".into(),
                    )),
                    1 => Ok(()),
                    _ => Err(Error::Config(
                        "give only one of scorer weights, scorer endpoint and replay file".into(),
                    )),
                }
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 of the configuration without its output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, InputDigest>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// Fails when an input file no longer matches its recorded digest.
    pub fn verify_inputs(&self) -> Result<()> {
        for (name, d) in &self.inputs {
            let now = file_digest(&d.path)?;
            if now != d.sha256 {
                return Err(Error::Data(format!(
                    "input {name} ({}) changed since the manifest was written",
                    d.path.display()
                )));
            }
        }
        Ok(())
    }
}

fn input_digests(cfg: &RunConfig) -> Result<BTreeMap<String, InputDigest>> {
    let mut out = BTreeMap::new();
    let named = [
        ("kb", Some(&cfg.kb)),
        ("queries", Some(&cfg.queries)),
        ("embeddings", cfg.embeddings.as_ref()),
        ("matrix", cfg.matrix.as_ref()),
        ("weights", cfg.weights.as_ref()),
        ("replay", cfg.replay.as_ref()),
    ];
    for (name, path) in named {
        if let Some(p) = path {
            out.insert(
                name.to_string(),
                InputDigest {
                    path: p.clone(),
                    sha256: file_digest(p)?,
                },
            );
        }
    }
    Ok(out)
}

/// Loaded inputs plus the closure and nearest-neighbor index built over them.
pub struct Engine {
    pub kb: KnowledgeBase,
    pub queries: InsertionSet,
    pub closure: SynonymyClosure,
    pub vectors: Option<EmbeddingStore>,
    pub index: Option<KbIndex>,
    pub norm: NormConfig,
}

impl Engine {
    /// `vectors` must cover every KB atom and query atom when given.
    pub fn build(
        kb: KnowledgeBase,
        queries: InsertionSet,
        norm: NormConfig,
        compat: &CompatibilityMatrix,
        vectors: Option<EmbeddingStore>,
        mode: IndexMode,
    ) -> Result<Self> {
        let closure = build_closure(&kb, &queries, &norm, compat);
        let index = match &vectors {
            Some(v) => {
                let missing = v.missing(queries.iter().map(|q| q.atom_id.as_str()));
                if !missing.is_empty() {
                    return Err(Error::MissingEmbeddings(missing).at_stage("index"));
                }
                Some(KbIndex::build(&kb, v, mode).map_err(|e| e.at_stage("index"))?)
            }
            None => None,
        };
        Ok(Self {
            kb,
            queries,
            closure,
            vectors,
            index,
            norm,
        })
    }

    /// Builds with vectors from the built-in hashed encoder.
    pub fn with_hashed_vectors(
        kb: KnowledgeBase,
        queries: InsertionSet,
        norm: NormConfig,
        compat: &CompatibilityMatrix,
        mode: IndexMode,
    ) -> Result<Self> {
        let vectors = encode_atoms(&HashedNgramEncoder::default(), &kb, &[&queries])?;
        Self::build(kb, queries, norm, compat, Some(vectors), mode)
    }

    fn dense(&self) -> Result<(&EmbeddingStore, &KbIndex)> {
        match (&self.vectors, &self.index) {
            (Some(v), Some(i)) => Ok((v, i)),
            _ => Err(Error::Config("this method needs embeddings".into())),
        }
    }

    pub fn predict_one_rba(&self, q: &QueryAtom, seed: u64) -> Prediction {
        rba_predict(q, &self.closure, &self.kb, seed)
    }

    pub fn predict_one_biencoder(&self, q: &QueryAtom, theta: f64) -> Result<Prediction> {
        let (v, i) = self.dense()?;
        biencoder_predict(q, v, i, &self.kb, theta)
    }

    pub fn predict_one_augmented(&self, q: &QueryAtom) -> Result<Prediction> {
        let (v, i) = self.dense()?;
        augmented_from_positions(q, candidate_positions(q, &self.closure), v, i, &self.kb)
    }

    pub fn candidate_list(&self, q: &QueryAtom, k: usize) -> Result<CandidateList> {
        let (v, i) = self.dense()?;
        generate_from_positions(q, candidate_positions(q, &self.closure), v, i, &self.kb, k)
    }

    pub fn predict_one_rerank(&self, q: &QueryAtom, k: usize, scorer: &dyn PairScorer) -> Result<Prediction> {
        let list = self.candidate_list(q, k)?;
        let scored = score_list(q, &list, scorer)?;
        Ok(rerank_predict(&list, &scored))
    }

    pub fn predict_rba(&self, seed: u64) -> Vec<Prediction> {
        self.queries.queries.par_iter().map(|q| self.predict_one_rba(q, seed)).collect()
    }

    pub fn predict_biencoder(&self, theta: f64) -> Result<Vec<Prediction>> {
        self.queries
            .queries
            .par_iter()
            .map(|q| self.predict_one_biencoder(q, theta))
            .collect()
    }

    pub fn predict_augmented(&self) -> Result<Vec<Prediction>> {
        self.queries.queries.par_iter().map(|q| self.predict_one_augmented(q)).collect()
    }

    pub fn candidate_lists(&self, k: usize) -> Result<Vec<CandidateList>> {
        self.queries.queries.par_iter().map(|q| self.candidate_list(q, k)).collect()
    }

    pub fn predict_rerank(&self, lists: &[CandidateList], scorer: &dyn PairScorer) -> Result<Vec<Prediction>> {
        self.queries
            .queries
            .par_iter()
            .zip(lists)
            .map(|(q, list)| {
                let scored = score_list(q, list, scorer)?;
                Ok(rerank_predict(list, &scored))
            })
            .collect()
    }

    /// Training lists for every query whose gold entry made it into its
    /// candidate list, and the number of queries dropped because it did not.
    pub fn training_lists(&self, k: usize) -> Result<(Vec<TrainingList>, usize)> {
        let lists = self.candidate_lists(k)?;
        let mut out = Vec::with_capacity(lists.len());
        let mut dropped = 0;
        for (q, list) in self.queries.iter().zip(&lists) {
            match TrainingList::new(q, list, &self.norm) {
                Ok(t) => out.push(t),
                Err(Error::GoldNotInList(_)) => dropped += 1,
                Err(e) => return Err(e),
            }
        }
        Ok((out, dropped))
    }
}

/// Loads the compatibility matrix, or the identity over no groups.
pub fn load_matrix(path: Option<&Path>) -> Result<CompatibilityMatrix> {
    match path {
        Some(p) => CompatibilityMatrix::load(p),
        None => Ok(CompatibilityMatrix::default()),
    }
}

/// Loads the KB, queries and vectors named by a config and builds an engine.
pub fn load_engine(cfg: &RunConfig) -> Result<Engine> {
    let kb = load_kb(&cfg.kb, cfg.filter).map_err(|e| e.at_stage("ingest"))?;
    let queries = load_insertion_set(&cfg.queries, Some(&kb)).map_err(|e| e.at_stage("ingest"))?;
    let compat = load_matrix(cfg.matrix.as_deref()).map_err(|e| e.at_stage("ingest"))?;
    if !cfg.method.needs_embeddings() {
        return Engine::build(kb, queries, cfg.norm.clone(), &compat, None, cfg.index);
    }
    let vectors = match &cfg.embeddings {
        Some(p) => load_embeddings(p).map_err(|e| e.at_stage("index"))?,
        None => encode_atoms(&HashedNgramEncoder::default(), &kb, &[&queries]).map_err(|e| e.at_stage("index"))?,
    };
    Engine::build(kb, queries, cfg.norm.clone(), &compat, Some(vectors), cfg.index)
}

/// The scorer a rerank config names, wrapped for recording when asked.
pub fn open_scorer(cfg: &RunConfig) -> Result<Box<dyn PairScorer>> {
    let inner: Box<dyn PairScorer> = if let Some(w) = &cfg.weights {
        let weights = FeatureScorerWeights::load(w)?;
        Box::new(FeatureScorer::new(&weights, cfg.norm.clone()))
    } else if let Some(ep) = &cfg.scorer {
        Box::new(ProtocolScorer::new(Endpoint::parse(ep)?, cfg.scorer_connections))
    } else if let Some(r) = &cfg.replay {
        Box::new(ReplayScorer::load(r)?)
    } else {
        return Err(Error::Config("no scorer configured".into()));
    };
    Ok(inner)
}

struct BoxedScorer(Box<dyn PairScorer>);

impl PairScorer for BoxedScorer {
    fn logits(&self, q: &QueryAtom, list: &CandidateList) -> Result<Vec<f64>> {
        self.0.logits(q, list)
    }
}

pub fn predict(engine: &Engine, cfg: &RunConfig) -> Result<(Vec<Prediction>, Option<Vec<CandidateList>>)> {
    match cfg.method {
        Method::Rba => Ok((engine.predict_rba(cfg.seed), None)),
        Method::Biencoder => Ok((engine.predict_biencoder(cfg.theta.expect("validated"))?, None)),
        Method::RbaRank => Ok((engine.predict_augmented()?, None)),
        Method::Rerank => {
            let lists = engine.candidate_lists(cfg.k).map_err(|e| e.at_stage("candidates"))?;
            let scorer = open_scorer(cfg).map_err(|e| e.at_stage("score"))?;
            let preds = match &cfg.record {
                Some(path) => {
                    let rec = RecordingScorer::new(BoxedScorer(scorer));
                    let p = engine.predict_rerank(&lists, &rec).map_err(|e| e.at_stage("score"))?;
                    rec.save(path).map_err(|e| e.at_stage("score"))?;
                    p
                }
                None => engine.predict_rerank(&lists, scorer.as_ref()).map_err(|e| e.at_stage("score"))?,
            };
            Ok((preds, Some(lists)))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub metrics: MetricsReport,
    pub calibration: Vec<CalibrationBin>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub predictions: Vec<Prediction>,
    pub evaluation: Option<EvaluationOutput>,
    pub manifest: Manifest,
}

pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";

/// Removes everything written so far unless disarmed.
struct OutputGuard {
    written: Vec<PathBuf>,
    armed: bool,
}

impl OutputGuard {
    fn create(&mut self, path: PathBuf) -> Result<BufWriter<File>> {
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.armed {
            for p in &self.written {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Runs one method end to end and writes its outputs to `cfg.output_dir`.
/// On failure no partial output files are left behind.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    with_workers(cfg.workers, || run_inner(cfg))?
}

fn run_inner(cfg: &RunConfig) -> Result<RunOutput> {
    let inputs = input_digests(cfg).map_err(|e| e.at_stage("ingest"))?;
    let engine = load_engine(cfg)?;
    let (predictions, lists) = predict(&engine, cfg)?;

    let evaluation = if engine.queries.has_gold() {
        let metrics = compute_metrics(&predictions, &engine.queries).map_err(|e| e.at_stage("evaluate"))?;
        let calibration = calibration_bins(&predictions, &engine.queries, 0.1).map_err(|e| e.at_stage("evaluate"))?;
        Some(EvaluationOutput { metrics, calibration })
    } else {
        None
    };

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        inputs,
        config: cfg.clone(),
    };

    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).at_stage("write"))?;
    let mut guard = OutputGuard {
        written: Vec::new(),
        armed: true,
    };
    let write = |guard: &mut OutputGuard| -> Result<()> {
        let path = dir.join(PREDICTIONS_FILE);
        let w = guard.create(path.clone())?;
        write_predictions(&predictions, w).map_err(|e| Error::io(&path, e))?;
        if let Some(ev) = &evaluation {
            let path = dir.join(METRICS_JSON);
            let mut w = guard.create(path.clone())?;
            serde_json::to_writer_pretty(&mut w, ev)?;
            writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
            let path = dir.join(METRICS_TXT);
            let mut w = guard.create(path.clone())?;
            write!(
                w,
                "method {}\n\n{}\n{}",
                cfg.method,
                ev.metrics.render_text(),
                render_calibration(&ev.calibration)
            )
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
        }
        if let (true, Some(lists)) = (cfg.dump_candidates, &lists) {
            let path = dir.join(CANDIDATES_FILE);
            let mut w = guard.create(path.clone())?;
            for l in lists {
                l.write_jsonl(&mut w)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let mut w = guard.create(path.clone())?;
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
    };
    write(&mut guard).map_err(|e| e.at_stage("write"))?;
    guard.armed = false;

    Ok(RunOutput {
        predictions,
        evaluation,
        manifest,
    })
}

/// Re-executes the run described by a manifest, writing to `output_dir`
/// (or the recorded directory). Inputs must still match their digests.
pub fn rerun(manifest: &Manifest, output_dir: Option<&Path>) -> Result<RunOutput> {
    manifest.verify_inputs().map_err(|e| e.at_stage("ingest"))?;
    let mut cfg = manifest.config.clone();
    if let Some(d) = output_dir {
        cfg.output_dir = d.to_path_buf();
    }
    run(&cfg)
}

/// Per-query latency of every method the config can run, over the first
/// `sample` queries.
pub fn bench(cfg: &RunConfig, sample: usize) -> Result<Vec<LatencyReport>> {
    let mut probe = cfg.clone();
    probe.method = Method::RbaRank;
    let engine = load_engine(&probe)?;
    let n = sample.min(engine.queries.len());
    if sample == 0 || n == 0 {
        return Err(Error::Config("latency sample must not be empty".into()));
    }
    let qs = &engine.queries.queries[..n];
    let mut out = vec![latency_bench("rba", qs, |q| {
        engine.predict_one_rba(q, cfg.seed);
        Ok(())
    })?];
    if let Some(theta) = cfg.theta {
        out.push(latency_bench("biencoder", qs, |q| engine.predict_one_biencoder(q, theta).map(drop))?);
    }
    out.push(latency_bench("rba+rank", qs, |q| engine.predict_one_augmented(q).map(drop))?);
    if cfg.weights.is_some() || cfg.scorer.is_some() || cfg.replay.is_some() {
        let scorer = open_scorer(cfg)?;
        out.push(latency_bench("rerank", qs, |q| {
            engine.predict_one_rerank(q, cfg.k, scorer.as_ref()).map(drop)
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Label;

    const KB: &str = "atom_id\tconcept_id\tstring\tsource\tsource_concept_id\tsemantic_group\tlanguage\tactive\tsuppressible\n\
A1\tC1\tHeart attack\tSNOMED\tS1\tDisorders\tENG\t1\t0\n\
A2\tC1\tMyocardial infarction\tMSH\tM1\tDisorders\tENG\t1\t0\n\
A3\tC2\tAspirin\tRXNORM\tR1\tChemicals\tENG\t1\t0\n";

    const QUERIES: &str = "atom_id\tstring\tsource\tsource_concept_id\tsemantic_group\tlanguage\tactive\tsuppressible\tgold\n\
Q1\tattack, heart\tNEW_SRC\tN1\tDisorders\tENG\t1\t0\tC1\n\
Q2\tibuprofen\tNEW_SRC\tN2\tChemicals\tENG\t1\t0\tNEW\n";

    fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
        let kb = dir.join("kb.tsv");
        let q = dir.join("q.tsv");
        std::fs::write(&kb, KB).unwrap();
        std::fs::write(&q, QUERIES).unwrap();
        (kb, q)
    }

    #[test]
    fn rba_run_on_three_atom_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (kb, q) = fixture(dir.path());
        let cfg = RunConfig::new(&kb, &q, Method::Rba, dir.path().join("out"));
        let out = run(&cfg).unwrap();
        assert_eq!(out.predictions.len(), 2);
        assert_eq!(out.predictions[0].predicted, Label::Existing("C1".into()));
        assert_eq!(out.predictions[1].predicted, Label::New);
        let text = std::fs::read_to_string(dir.path().join("out").join(PREDICTIONS_FILE)).unwrap();
        assert_eq!(text, "atom_id\tpredicted\tconfidence\nQ1\tC1\t1.000000\nQ2\tNEW\t1.000000\n");
        assert_eq!(out.evaluation.unwrap().metrics.accuracy, Some(1.0));
    }

    #[test]
    fn rerank_without_scorer_is_config_error() {
        let cfg = RunConfig::new("kb", "q", Method::Rerank, "out");
        assert_eq!(run(&cfg).unwrap_err().kind(), crate::ErrorKind::Config);
        let cfg = RunConfig::new("kb", "q", Method::Biencoder, "out");
        assert_eq!(run(&cfg).unwrap_err().kind(), crate::ErrorKind::Config);
    }

    #[test]
    fn failure_leaves_no_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let (kb, q) = fixture(dir.path());
        let mut cfg = RunConfig::new(&kb, &q, Method::Rerank, dir.path().join("out"));
        cfg.replay = Some(dir.path().join("empty.jsonl"));
        std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Scorer);
        assert!(err.to_string().starts_with("score:"));
        assert!(!dir.path().join("out").join(PREDICTIONS_FILE).exists());
    }

    #[test]
    fn rerun_from_manifest_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (kb, q) = fixture(dir.path());
        let mut cfg = RunConfig::new(&kb, &q, Method::RbaRank, dir.path().join("a"));
        cfg.seed = 3;
        run(&cfg).unwrap();
        let m = Manifest::load(dir.path().join("a").join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.config_hash, cfg.hash());
        rerun(&m, Some(&dir.path().join("b"))).unwrap();
        let a = std::fs::read(dir.path().join("a").join(PREDICTIONS_FILE)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(PREDICTIONS_FILE)).unwrap();
        assert_eq!(a, b);

        std::fs::write(&q, QUERIES.replace("ibuprofen", "naproxen")).unwrap();
        assert!(rerun(&m, Some(&dir.path().join("c"))).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!("lexlm".parse::<Method>().is_err());
    }
}
