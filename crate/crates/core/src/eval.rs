//! Evaluation: insertion metrics, stratified splits, calibration bins,
//! correction analysis, latency projection and report rendering.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kb::{InsertionSet, Label, Prediction, QueryAtom};

/// Counts with NEW as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp_nc: usize,
    pub fp_nc: usize,
    pub fn_nc: usize,
    pub n_ec: usize,
    pub correct_ec: usize,
    pub total: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn add(&mut self, gold: &Label, predicted: &Label) {
        self.total += 1;
        match (gold, predicted) {
            (Label::New, Label::New) => self.tp_nc += 1,
            (Label::New, Label::Existing(_)) => self.fn_nc += 1,
            (Label::Existing(g), p) => {
                self.n_ec += 1;
                match p {
                    Label::New => self.fp_nc += 1,
                    Label::Existing(c) if c == g => self.correct_ec += 1,
                    Label::Existing(_) => {}
                }
            }
        }
    }

    pub fn correct(&self) -> usize {
        self.correct_ec + self.tp_nc
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp_nc, self.tp_nc + self.fp_nc)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp_nc, self.tp_nc + self.fn_nc)
    }

    /// Harmonic mean of precision and recall. Absent when either is absent;
    /// zero when both are zero.
    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        if p + r == 0.0 {
            Some(0.0)
        } else {
            Some(2.0 * p * r / (p + r))
        }
    }

    pub fn ec_accuracy(&self) -> Option<f64> {
        ratio(self.correct_ec, self.n_ec)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.correct(), self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub nc_precision: Option<f64>,
    pub nc_recall: Option<f64>,
    pub nc_f1: Option<f64>,
    pub ec_accuracy: Option<f64>,
    pub per_semantic_group: BTreeMap<String, GroupAccuracy>,
}

impl MetricsReport {
    pub fn from_counts(counts: ConfusionCounts, per_semantic_group: BTreeMap<String, GroupAccuracy>) -> Self {
        Self {
            counts,
            accuracy: counts.accuracy(),
            nc_precision: counts.precision(),
            nc_recall: counts.recall(),
            nc_f1: counts.f1(),
            ec_accuracy: counts.ec_accuracy(),
            per_semantic_group,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render_text(&self) -> String {
        let rows = [
            ("accuracy", self.accuracy),
            ("nc_precision", self.nc_precision),
            ("nc_recall", self.nc_recall),
            ("nc_f1", self.nc_f1),
            ("ec_accuracy", self.ec_accuracy),
        ];
        let mut s = String::new();
        for (name, v) in rows {
            let _ = writeln!(s, "{name:<14}{:>8}", pct(v));
        }
        let c = &self.counts;
        let _ = writeln!(
            s,
            "{:<14}{:>8}  (tp_nc={} fp_nc={} fn_nc={} n_ec={} correct_ec={})",
            "queries", c.total, c.tp_nc, c.fp_nc, c.fn_nc, c.n_ec, c.correct_ec
        );
        if !self.per_semantic_group.is_empty() {
            let width = self.per_semantic_group.keys().map(|g| g.chars().count()).max().unwrap_or(0).max(5);
            let _ = writeln!(s, "\n{:<width$}  {:>7}  {:>8}", "group", "n", "accuracy");
            for (g, a) in &self.per_semantic_group {
                let _ = writeln!(s, "{g:<width$}  {:>7}  {:>8}", a.total, pct(Some(a.accuracy)));
            }
        }
        s
    }
}

/// Percentage with one decimal, or `n/a`.
pub fn pct(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.1}", 100.0 * x),
        None => "n/a".to_string(),
    }
}

/// Pairs every gold query with its prediction. Missing, extra or duplicate
/// predictions, and queries without a gold label, are errors.
fn align<'a>(preds: &'a [Prediction], gold: &'a InsertionSet) -> Result<Vec<(&'a QueryAtom, &'a Label, &'a Prediction)>> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.query_atom_id.as_str(), p).is_some() {
            return Err(Error::Data(format!("duplicate prediction for {:?}", p.query_atom_id)));
        }
    }
    let mut out = Vec::with_capacity(gold.len());
    let mut missing = Vec::new();
    for q in gold.iter() {
        let g = q
            .gold
            .as_ref()
            .ok_or_else(|| Error::Data(format!("query {:?} has no gold label", q.atom_id)))?;
        match by_id.remove(q.atom_id.as_str()) {
            Some(p) => out.push((q, g, p)),
            None => missing.push(q.atom_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{} queries have no prediction (first: {:?})",
            missing.len(),
            missing[0]
        )));
    }
    if !by_id.is_empty() {
        let mut extra: Vec<&str> = by_id.into_keys().collect();
        extra.sort_unstable();
        return Err(Error::Data(format!(
            "{} predictions match no query (first: {:?})",
            extra.len(),
            extra[0]
        )));
    }
    Ok(out)
}

pub fn compute_metrics(preds: &[Prediction], gold: &InsertionSet) -> Result<MetricsReport> {
    let mut counts = ConfusionCounts::default();
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (q, g, p) in align(preds, gold)? {
        counts.add(g, &p.predicted);
        let e = groups.entry(q.semantic_group.clone()).or_default();
        e.0 += 1;
        if *g == p.predicted {
            e.1 += 1;
        }
    }
    let per_group = groups
        .into_iter()
        .map(|(g, (total, correct))| {
            (
                g,
                GroupAccuracy {
                    total,
                    correct,
                    accuracy: correct as f64 / total as f64,
                },
            )
        })
        .collect();
    Ok(MetricsReport::from_counts(counts, per_group))
}

fn group_rng(seed: u64, group: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(group.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Subset sizes for `n` items: floors of the exact shares, then the leftover
/// items go to the largest fractional parts, earlier subsets first on ties.
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Splits queries by `ratios` within every semantic group. Each subset keeps
/// the input order of its queries.
pub fn stratified_split(q_set: &InsertionSet, ratios: &[f64], seed: u64) -> Result<Vec<InsertionSet>> {
    if ratios.is_empty() || ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, q) in q_set.iter().enumerate() {
        groups.entry(q.semantic_group.as_str()).or_default().push(i);
    }
    let mut assignment = vec![0usize; q_set.len()];
    for (group, mut members) in groups {
        members.shuffle(&mut group_rng(seed, group));
        let sizes = largest_remainder(members.len(), ratios);
        let mut it = members.into_iter();
        for (split, &size) in sizes.iter().enumerate() {
            for idx in it.by_ref().take(size) {
                assignment[idx] = split;
            }
        }
    }
    let mut out: Vec<Vec<QueryAtom>> = vec![Vec::new(); ratios.len()];
    for (q, &split) in q_set.iter().zip(&assignment) {
        out[split].push(q.clone());
    }
    Ok(out.into_iter().map(InsertionSet::new).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub correct: usize,
    /// Zero for an empty bin.
    pub accuracy: f64,
}

/// Accuracy by confidence bin: [0, w), [w, 2w), ..., with the last bin
/// closed at 1.
pub fn calibration_bins(preds: &[Prediction], gold: &InsertionSet, bin_width: f64) -> Result<Vec<CalibrationBin>> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(Error::Config(format!("bin width must be in (0, 1], got {bin_width}")));
    }
    let nbins = ((1.0 / bin_width) - 1e-9).ceil() as usize;
    let mut bins: Vec<CalibrationBin> = (0..nbins)
        .map(|i| CalibrationBin {
            lower: i as f64 * bin_width,
            upper: ((i + 1) as f64 * bin_width).min(1.0),
            count: 0,
            correct: 0,
            accuracy: 0.0,
        })
        .collect();
    for (_, g, p) in align(preds, gold)? {
        let c = if p.confidence.is_nan() { 0.0 } else { p.confidence.clamp(0.0, 1.0) };
        // small epsilon keeps 0.3 / 0.1 from landing in the bin below
        let i = (((c / bin_width) + 1e-9).floor() as usize).min(nbins - 1);
        bins[i].count += 1;
        if *g == p.predicted {
            bins[i].correct += 1;
        }
    }
    for b in &mut bins {
        if b.count > 0 {
            b.accuracy = b.correct as f64 / b.count as f64;
        }
    }
    Ok(bins)
}

pub fn render_calibration(bins: &[CalibrationBin]) -> String {
    let mut s = format!("{:>10}  {:>8}  {:>8}\n", "confidence", "count", "accuracy");
    for b in bins {
        let _ = writeln!(
            s,
            "{:>10}  {:>8}  {:>8}",
            format!("{:.0}", 100.0 * b.lower),
            b.count,
            format!("{:.1}", 100.0 * b.accuracy)
        );
    }
    s
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionCounts {
    pub concept_linking: usize,
    pub re_ranking: usize,
    pub new_concept_identification: usize,
}

impl CorrectionCounts {
    pub fn total(&self) -> usize {
        self.concept_linking + self.re_ranking + self.new_concept_identification
    }

    pub fn render_text(&self) -> String {
        let total = self.total();
        let share = |n: usize| pct(ratio(n, total));
        format!(
            "{:<28}{:>8}{:>8}\n{:<28}{:>8}{:>8}\n{:<28}{:>8}{:>8}\n{:<28}{:>8}{:>8}\n",
            "concept_linking",
            self.concept_linking,
            share(self.concept_linking),
            "re_ranking",
            self.re_ranking,
            share(self.re_ranking),
            "new_concept_identification",
            self.new_concept_identification,
            share(self.new_concept_identification),
            "total",
            total,
            share(total),
        )
    }
}

/// Classifies the queries `a` gets wrong and `b` gets right.
pub fn correction_analysis(preds_a: &[Prediction], preds_b: &[Prediction], gold: &InsertionSet) -> Result<CorrectionCounts> {
    let a = align(preds_a, gold)?;
    let b = align(preds_b, gold)?;
    let mut out = CorrectionCounts::default();
    for ((_, g, pa), (_, _, pb)) in a.iter().zip(&b) {
        if pa.predicted == **g || pb.predicted != **g {
            continue;
        }
        match (&pa.predicted, g) {
            (Label::New, _) => out.concept_linking += 1,
            (Label::Existing(_), Label::New) => out.new_concept_identification += 1,
            (Label::Existing(_), Label::Existing(_)) => out.re_ranking += 1,
        }
    }
    Ok(out)
}

pub const PROJECTION_ATOMS: f64 = 300_000.0;

/// Minutes needed for a 300k-atom insertion at `ms_per_atom`.
pub fn project_minutes(ms_per_atom: f64) -> f64 {
    ms_per_atom * PROJECTION_ATOMS / 60_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub method: String,
    pub sample_size: usize,
    pub ms_per_atom: f64,
    pub projected_minutes: f64,
}

/// Times `f` over the sample after one untimed warm-up call.
pub fn latency_bench<F>(method: &str, sample: &[QueryAtom], mut f: F) -> Result<LatencyReport>
where
    F: FnMut(&QueryAtom) -> Result<()>,
{
    if sample.is_empty() {
        return Err(Error::Config("latency sample must not be empty".into()));
    }
    f(&sample[0])?;
    let start = Instant::now();
    for q in sample {
        f(q)?;
    }
    let ms = start.elapsed().as_secs_f64() * 1000.0 / sample.len() as f64;
    Ok(LatencyReport {
        method: method.to_string(),
        sample_size: sample.len(),
        ms_per_atom: ms,
        projected_minutes: project_minutes(ms),
    })
}

pub fn render_latency(reports: &[LatencyReport]) -> String {
    let mut s = format!("{:<12}  {:>8}  {:>10}  {:>14}\n", "method", "sample", "ms/atom", "min/300k atoms");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<12}  {:>8}  {:>10.3}  {:>14.2}",
            r.method, r.sample_size, r.ms_per_atom, r.projected_minutes
        );
    }
    s
}

/// Per-group accuracy across labelled runs (for example one column per
/// insertion-set version and method), plus the overall metrics.
pub fn render_comparison(columns: &[(String, MetricsReport)]) -> String {
    let mut groups: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, r) in columns {
        for (g, a) in &r.per_semantic_group {
            *groups.entry(g.as_str()).or_default() += a.total;
        }
    }
    let label_w = groups
        .keys()
        .map(|g| g.chars().count())
        .chain(["nc_precision".len()])
        .max()
        .unwrap_or(0);
    let col_w = columns.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<label_w$}", "");
    for (l, _) in columns {
        let _ = write!(s, "  {l:>col_w$}");
    }
    s.push('\n');
    let mut line = |name: &str, f: &dyn Fn(&MetricsReport) -> Option<f64>| {
        let _ = write!(s, "{name:<label_w$}");
        for (_, r) in columns {
            let _ = write!(s, "  {:>col_w$}", pct(f(r)));
        }
        s.push('\n');
    };
    line("accuracy", &|r| r.accuracy);
    line("nc_precision", &|r| r.nc_precision);
    line("nc_recall", &|r| r.nc_recall);
    line("nc_f1", &|r| r.nc_f1);
    line("ec_accuracy", &|r| r.ec_accuracy);
    let mut ordered: Vec<(&str, usize)> = groups.into_iter().collect();
    // most frequent groups first
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    if !ordered.is_empty() {
        s.push('\n');
    }
    for (g, _) in ordered {
        let _ = write!(s, "{g:<label_w$}");
        for (_, r) in columns {
            let v = r.per_semantic_group.get(g).map(|a| a.accuracy);
            let _ = write!(s, "  {:>col_w$}", pct(v));
        }
        s.push('\n');
    }
    s
}

pub const PREDICTION_HEADER: &str = "atom_id\tpredicted\tconfidence";

pub fn write_predictions<W: Write>(preds: &[Prediction], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{PREDICTION_HEADER}")?;
    for p in preds {
        writeln!(out, "{}\t{}\t{:.6}", p.query_atom_id, p.predicted, p.confidence)?;
    }
    out.flush()
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() || (i == 0 && line == PREDICTION_HEADER) {
            continue;
        }
        let bad = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad(format!("expected 3 columns, found {}", cols.len())));
        }
        if cols[0].is_empty() || cols[1].is_empty() {
            return Err(bad("empty atom id or prediction".into()));
        }
        let confidence: f64 = cols[2]
            .parse()
            .map_err(|_| bad(format!("confidence {:?} is not a number", cols[2])))?;
        if !seen.insert(cols[0].to_string()) {
            return Err(bad(format!("duplicate prediction for {:?}", cols[0])));
        }
        out.push(Prediction {
            query_atom_id: cols[0].to_string(),
            predicted: Label::parse(cols[1]),
            confidence,
            rank_trace: Vec::new(),
        });
    }
    Ok(out)
}
