mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use uvi_core::candidates::DEFAULT_K;
use uvi_core::encoder::{encode_atoms, HashedNgramEncoder};
use uvi_core::eval::{
    calibration_bins, compute_metrics, correction_analysis, read_predictions, render_calibration, render_comparison,
    render_latency, stratified_split, MetricsReport,
};
use uvi_core::hnsw::{HnswIndex, HnswParams};
use uvi_core::kb::{kb_stats, load_insertion_set, load_kb, write_insertion_set, EligibilityFilter};
use uvi_core::lexnorm::NormConfig;
use uvi_core::pipeline::{bench, load_matrix, rerun, run, Engine, EvaluationOutput, Manifest, Method, RunConfig};
use uvi_core::protocol::TextFeatureServer;
use uvi_core::rba::build_closure;
use uvi_core::scorer::{train_feature_scorer, FeatureScorerWeights, TrainConfig};
use uvi_core::synth::{generate_corpus, SynthConfig};
use uvi_core::vecindex::{load_embeddings, tune_threshold, IndexMode, KbIndex, ThresholdObjective};
use uvi_core::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "uvi", version, about = "Vocabulary insertion pipeline", args_override_self = true)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a KB and insertion set, print statistics.
    Ingest(IngestArgs),
    /// Stratified split of an insertion set by semantic group.
    Split(SplitArgs),
    /// Build the rule-based synonymy closure and dump atom classes.
    Closure(ClosureArgs),
    /// Encode atoms into an embedding file, or check an existing one.
    Index(IndexArgs),
    /// Pick the similarity threshold for the bi-encoder method.
    TuneThreshold(TuneArgs),
    /// Predict with one method and write predictions, metrics and a manifest.
    Predict(PredictArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
    /// Train the built-in feature scorer.
    TrainScorer(TrainArgs),
    /// Score a prediction file against gold labels.
    Evaluate(EvaluateArgs),
    /// Break down the queries one prediction file fixes relative to another.
    Compare(CompareArgs),
    /// Measure per-atom latency for each method.
    Bench(BenchArgs),
    /// Side-by-side table of several metrics files.
    Report(ReportArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Serve the feature scorer over the JSON-lines protocol.
    ServeScorer(ServeArgs),
}

#[derive(Args, Clone)]
struct NormArgs {
    /// Skip Unicode compatibility folding.
    #[arg(long)]
    no_unicode_fold: bool,
    /// Keep possessive 's.
    #[arg(long)]
    no_possessives: bool,
    /// Keep punctuation inside tokens.
    #[arg(long)]
    no_punctuation: bool,
    /// Keep token order.
    #[arg(long)]
    no_sort_tokens: bool,
    /// Comma-separated tokens dropped during normalization.
    #[arg(long, value_delimiter = ',')]
    stopwords: Vec<String>,
}

impl NormArgs {
    fn config(&self) -> NormConfig {
        NormConfig {
            unicode_fold: !self.no_unicode_fold,
            strip_possessives: !self.no_possessives,
            punctuation_to_space: !self.no_punctuation,
            sort_tokens: !self.no_sort_tokens,
            stopwords: self.stopwords.iter().filter(|s| !s.is_empty()).cloned().collect(),
        }
    }
}

#[derive(Args, Clone)]
struct KbArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Keep non-English, inactive and suppressible rows.
    #[arg(long)]
    no_filter: bool,
}

impl KbArgs {
    fn filter(&self) -> EligibilityFilter {
        if self.no_filter {
            EligibilityFilter::none()
        } else {
            EligibilityFilter::default()
        }
    }
}

#[derive(Args, Clone)]
struct IndexModeArgs {
    /// Use the approximate graph index instead of exact search.
    #[arg(long)]
    approximate: bool,
    #[arg(long, default_value_t = 64)]
    ef_search: usize,
    #[arg(long, default_value_t = 16)]
    hnsw_m: usize,
    #[arg(long, default_value_t = 200)]
    ef_construction: usize,
}

impl IndexModeArgs {
    fn mode(&self, seed: u64) -> IndexMode {
        if self.approximate {
            IndexMode::Approximate(HnswParams {
                m: self.hnsw_m,
                ef_construction: self.ef_construction,
                ef_search: self.ef_search,
                seed,
            })
        } else {
            IndexMode::Exact
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    kb: KbArgs,
    #[arg(long)]
    queries: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    queries: PathBuf,
    /// Comma-separated ratios summing to 1.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.25, 0.25])]
    ratios: Vec<f64>,
    /// Comma-separated subset names, one per ratio.
    #[arg(long, value_delimiter = ',', default_values_t = ["train".to_string(), "valid".to_string(), "test".to_string()])]
    names: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ClosureArgs {
    #[command(flatten)]
    kb: KbArgs,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[command(flatten)]
    norm: NormArgs,
    /// Where to write `atom_id<TAB>class_atom_id`; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    kb: KbArgs,
    /// Insertion sets whose atoms are encoded along with the KB.
    #[arg(long)]
    queries: Vec<PathBuf>,
    /// Existing embedding file to check against the KB and queries.
    #[arg(long, conflicts_with = "out")]
    check: Option<PathBuf>,
    /// Output embedding file written with the built-in hashed encoder.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    /// Report approximate-index recall on this many sampled KB atoms and raise
    /// ef_search until it reaches --target-recall.
    #[arg(long)]
    calibrate: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    target_recall: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    Accuracy,
    NewConceptF1,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    kb: KbArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Objective::Accuracy)]
    objective: Objective,
    #[command(flatten)]
    index: IndexModeArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    kb: KbArgs,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    method: String,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Feature scorer weights for the rerank method.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// External scorer: exec:<command> or tcp:<host:port>.
    #[arg(long)]
    scorer: Option<String>,
    /// Recorded scorer responses to answer from.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Record every scorer exchange to this file.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long)]
    theta: Option<f64>,
    /// Read theta from a tune-threshold output file.
    #[arg(long, conflicts_with = "theta")]
    theta_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value_t = 4)]
    scorer_connections: usize,
    /// Also write every candidate list.
    #[arg(long)]
    dump_candidates: bool,
    #[command(flatten)]
    norm: NormArgs,
    #[command(flatten)]
    index: IndexModeArgs,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct RerunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    kb: KbArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-5)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    warmup_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    patience: usize,
    #[command(flatten)]
    norm: NormArgs,
    #[command(flatten)]
    index: IndexModeArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Insertion set with gold labels.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Write the metrics and calibration table as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    bin_width: f64,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    queries: PathBuf,
    /// Baseline prediction file.
    #[arg(long)]
    a: PathBuf,
    /// Improved prediction file.
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    kb: KbArgs,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    sample: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// `label=path` pairs; each path is a metrics.json or a run directory.
    #[arg(required = true)]
    runs: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1500)]
    concepts: usize,
    #[arg(long, default_value_t = 5000)]
    atoms: usize,
    #[arg(long, default_value_t = 150)]
    ambiguous_pairs: usize,
    #[arg(long, default_value_t = 1000)]
    train_queries: usize,
    #[arg(long, default_value_t = 300)]
    valid_queries: usize,
    #[arg(long, default_value_t = 500)]
    test_queries: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Listen on this address instead of stdin/stdout.
    #[arg(long)]
    listen: Option<String>,
    #[command(flatten)]
    norm: NormArgs,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let kb = load_kb(&a.kb.kb, a.kb.filter())?;
    let queries = match &a.queries {
        Some(p) => load_insertion_set(p, Some(&kb))?,
        None => Default::default(),
    };
    let out = serde_json::json!({
        "ingest": kb.ingest_report(),
        "stats": kb_stats(&kb, &queries),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    if a.names.len() != a.ratios.len() {
        return Err(Error::Config(format!("{} names for {} ratios", a.names.len(), a.ratios.len())).into());
    }
    let set = load_insertion_set(&a.queries, None)?;
    let parts = stratified_split(&set, &a.ratios, a.seed)?;
    for (name, part) in a.names.iter().zip(&parts) {
        let path = a.out_dir.join(format!("{name}.tsv"));
        write_insertion_set(part, create(&path)?).map_err(|e| Error::io(&path, e))?;
        println!("{}\t{}", path.display(), part.len());
    }
    Ok(())
}

fn closure(a: ClosureArgs) -> Result<()> {
    let kb = load_kb(&a.kb.kb, a.kb.filter())?;
    let queries = load_insertion_set(&a.queries, None)?;
    let compat = load_matrix(a.matrix.as_deref())?;
    let c = build_closure(&kb, &queries, &a.norm.config(), &compat);
    log::info!("{} nodes, {} effective unions", c.node_count(), c.unions().len());
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            c.dump(&kb, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(p, e))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            c.dump(&kb, &mut w).and_then(|_| w.flush())?;
        }
    }
    Ok(())
}

fn index(a: IndexArgs) -> Result<()> {
    let kb = load_kb(&a.kb.kb, a.kb.filter())?;
    let sets = a
        .queries
        .iter()
        .map(|p| load_insertion_set(p, None))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<_> = sets.iter().collect();
    let store = match (&a.check, &a.out) {
        (Some(p), _) => {
            let s = load_embeddings(p)?;
            let wanted = kb
                .atoms()
                .iter()
                .map(|x| x.atom_id.as_str())
                .chain(sets.iter().flat_map(|s| s.iter().map(|q| q.atom_id.as_str())));
            let missing = s.missing(wanted);
            if !missing.is_empty() {
                return Err(Error::MissingEmbeddings(missing).into());
            }
            println!("{}: {} vectors of dimension {}, all atoms covered", p.display(), s.len(), s.dim());
            s
        }
        (None, Some(p)) => {
            if a.dim == 0 {
                return Err(Error::Config("--dim must be positive".into()).into());
            }
            let s = encode_atoms(&HashedNgramEncoder { dim: a.dim }, &kb, &refs)?;
            s.save(p)?;
            println!("{}: wrote {} vectors of dimension {}", p.display(), s.len(), s.dim());
            s
        }
        (None, None) => return Err(Error::Config("give --out to encode or --check to verify".into()).into()),
    };
    if let Some(n) = a.calibrate {
        let kb_index = KbIndex::build(&kb, &store, IndexMode::Exact)?;
        let kb_store = kb_index.store();
        let step = (kb_store.len() / n.max(1)).max(1);
        let sample: Vec<Vec<f32>> = (0..kb_store.len()).step_by(step).take(n).map(|i| kb_store.vector(i).to_vec()).collect();
        let mut h = HnswIndex::build(kb_store, HnswParams { seed: a.seed, ..HnswParams::default() });
        let recall = h.calibrate(kb_store, &sample, 10, a.target_recall)?;
        println!("approximate index: recall@10 {recall:.4} at ef_search {}", h.params().ef_search);
    }
    Ok(())
}

fn tune(a: TuneArgs) -> Result<()> {
    let kb = load_kb(&a.kb.kb, a.kb.filter())?;
    let train = load_insertion_set(&a.train, Some(&kb))?;
    let vectors = match &a.embeddings {
        Some(p) => load_embeddings(p)?,
        None => encode_atoms(&HashedNgramEncoder::default(), &kb, &[&train])?,
    };
    let index = KbIndex::build(&kb, &vectors, a.index.mode(0))?;
    let objective = match a.objective {
        Objective::Accuracy => ThresholdObjective::Accuracy,
        Objective::NewConceptF1 => ThresholdObjective::NewConceptF1,
    };
    let t = tune_threshold(&vectors, &train, &index, &kb, objective)?;
    let json = serde_json::to_string_pretty(&t)?;
    println!("{json}");
    if let Some(p) = &a.out {
        write_json(p, &t)?;
    }
    Ok(())
}

fn read_theta(path: &Path) -> Result<f64> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&s).map_err(Error::from)?;
    v.get("theta")
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| Error::Config(format!("{} has no numeric theta", path.display())).into())
}

fn predict(a: PredictArgs) -> Result<()> {
    let method: Method = a.method.parse()?;
    let mut cfg = RunConfig::new(&a.kb.kb, &a.queries, method, &a.output_dir);
    cfg.filter = a.kb.filter();
    cfg.embeddings = a.embeddings;
    cfg.matrix = a.matrix;
    cfg.weights = a.weights;
    cfg.scorer = a.scorer;
    cfg.replay = a.replay;
    cfg.record = a.record;
    cfg.k = a.k;
    cfg.theta = match &a.theta_file {
        Some(p) => Some(read_theta(p)?),
        None => a.theta,
    };
    cfg.seed = a.seed;
    cfg.workers = a.workers;
    cfg.scorer_connections = a.scorer_connections;
    cfg.dump_candidates = a.dump_candidates;
    cfg.norm = a.norm.config();
    cfg.index = a.index.mode(a.seed);
    let out = run(&cfg)?;
    print_run(&cfg, &out.evaluation);
    Ok(())
}

fn print_run(cfg: &RunConfig, ev: &Option<EvaluationOutput>) {
    println!("wrote {}", cfg.output_dir.display());
    if let Some(ev) = ev {
        print!("{}", ev.metrics.render_text());
    }
}

fn rerun_cmd(a: RerunArgs) -> Result<()> {
    let m = Manifest::load(&a.manifest)?;
    let out = rerun(&m, a.output_dir.as_deref())?;
    let mut cfg = m.config.clone();
    if let Some(d) = a.output_dir {
        cfg.output_dir = d;
    }
    print_run(&cfg, &out.evaluation);
    Ok(())
}

fn engine_for(
    kb: &KbArgs,
    queries: &Path,
    embeddings: Option<&Path>,
    matrix: Option<&Path>,
    norm: NormConfig,
    mode: IndexMode,
) -> Result<Engine> {
    let kbv = load_kb(&kb.kb, kb.filter())?;
    let q = load_insertion_set(queries, Some(&kbv))?;
    let compat = load_matrix(matrix)?;
    let engine = match embeddings {
        Some(p) => Engine::build(kbv, q, norm, &compat, Some(load_embeddings(p)?), mode)?,
        None => Engine::with_hashed_vectors(kbv, q, norm, &compat, mode)?,
    };
    Ok(engine)
}

fn train(a: TrainArgs) -> Result<()> {
    let norm = a.norm.config();
    let mode = a.index.mode(a.seed);
    let t = engine_for(&a.kb, &a.train, a.embeddings.as_deref(), a.matrix.as_deref(), norm.clone(), mode)?;
    let (train_lists, dropped) = t.training_lists(a.k)?;
    if dropped > 0 {
        log::warn!("{dropped} training queries skipped: gold concept not among the top {} candidates", a.k);
    }
    let valid_lists = match &a.valid {
        Some(v) => {
            let e = engine_for(&a.kb, v, a.embeddings.as_deref(), a.matrix.as_deref(), norm, mode)?;
            Some(e.training_lists(a.k)?.0)
        }
        None => None,
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        warmup_ratio: a.warmup_ratio,
        seed: a.seed,
        patience: a.patience,
    };
    let w = train_feature_scorer(&train_lists, valid_lists.as_deref(), &cfg)?;
    w.save(&a.out)?;
    println!(
        "wrote {} ({} training lists, {} skipped)",
        a.out.display(),
        train_lists.len(),
        dropped
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let gold = load_insertion_set(&a.queries, None)?;
    let preds = read_predictions(&a.predictions)?;
    let metrics = compute_metrics(&preds, &gold)?;
    let calibration = calibration_bins(&preds, &gold, a.bin_width)?;
    print!("{}\n{}", metrics.render_text(), render_calibration(&calibration));
    if let Some(p) = &a.json {
        write_json(p, &EvaluationOutput { metrics, calibration })?;
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let gold = load_insertion_set(&a.queries, None)?;
    let pa = read_predictions(&a.a)?;
    let pb = read_predictions(&a.b)?;
    let c = correction_analysis(&pa, &pb, &gold)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&c)?);
    } else {
        print!("{}", c.render_text());
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let mut cfg = RunConfig::new(&a.kb.kb, &a.queries, Method::Rba, "");
    cfg.filter = a.kb.filter();
    cfg.embeddings = a.embeddings;
    cfg.matrix = a.matrix;
    cfg.weights = a.weights;
    cfg.scorer = a.scorer;
    cfg.theta = a.theta;
    cfg.k = a.k;
    let reports = bench(&cfg, a.sample)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        print!("{}", render_latency(&reports));
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut columns = Vec::new();
    for spec in &a.runs {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected label=path, got {spec:?}")))?;
        let mut path = PathBuf::from(path);
        if path.is_dir() {
            path = path.join(uvi_core::pipeline::METRICS_JSON);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
        // run directories hold {metrics, calibration}; bare reports are accepted too
        let metrics: MetricsReport = serde_json::from_value(value.get("metrics").cloned().unwrap_or(value))
            .map_err(Error::from)?;
        columns.push((label.to_string(), metrics));
    }
    print!("{}", render_comparison(&columns));
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        concepts: a.concepts,
        atoms: a.atoms,
        ambiguous_pairs: a.ambiguous_pairs,
        train_queries: a.train_queries,
        valid_queries: a.valid_queries,
        test_queries: a.test_queries,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&cfg)?;
    corpus.write_to_dir(&a.out_dir)?;
    println!(
        "wrote {}: {} atoms, {} concepts, {}/{}/{} queries",
        a.out_dir.display(),
        corpus.kb.atom_count(),
        corpus.kb.concept_count(),
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len()
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let weights = FeatureScorerWeights::load(&a.weights)?;
    let server = TextFeatureServer::new(weights, a.norm.config());
    match &a.listen {
        None => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            server.serve(stdin.lock(), stdout.lock())?;
        }
        Some(addr) => {
            let listener =
                TcpListener::bind(addr).map_err(|e| Error::Config(format!("cannot listen on {addr}: {e}")))?;
            eprintln!("listening on {}", listener.local_addr()?);
            std::thread::scope(|s| {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    let server = &server;
                    s.spawn(move || {
                        let Ok(read_half) = stream.try_clone() else { return };
                        if let Err(e) = server.serve(BufReader::new(read_half), BufWriter::new(stream)) {
                            log::warn!("connection closed: {e}");
                        }
                    });
                }
            });
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::kind) {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Scorer) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let args = match config::expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Split(a) => split(a),
        Command::Closure(a) => closure(a),
        Command::Index(a) => index(a),
        Command::TuneThreshold(a) => tune(a),
        Command::Predict(a) => predict(a),
        Command::Rerun(a) => rerun_cmd(a),
        Command::TrainScorer(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Report(a) => report(a),
        Command::Synth(a) => synth(a),
        Command::ServeScorer(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
