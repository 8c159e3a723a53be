//! Accuracy, macro-F1, random-guess imputation, consistency metrics and
//! annotator aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probing::{Prediction, Provenance};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction ids do not match gold ids: {0}")]
    IdMismatch(String),
    #[error("label {label:?} for {id} is not one of the declared classes")]
    UnknownLabel { id: String, label: String },
    #[error("answer universe must have at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("image {image} has {count} annotators; at most 2 are supported")]
    TooManyAnnotators { image: String, count: usize },
    #[error("annotation file line {line}: {message}")]
    Annotation { line: usize, message: String },
}

/// Rows are gold classes, columns predicted classes. Cells hold fractional
/// mass so imputed guesses can be spread across a row. Mass with a gold
/// class but no prediction sits in `unassigned`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub cells: Vec<Vec<f64>>,
    pub unassigned: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn new(classes: &[String]) -> Self {
        let n = classes.len();
        ConfusionMatrix {
            classes: classes.to_vec(),
            cells: vec![vec![0.0; n]; n],
            unassigned: vec![0.0; n],
        }
    }

    pub fn add(&mut self, gold: usize, predicted: Option<usize>, mass: f64) {
        match predicted {
            Some(p) => self.cells[gold][p] += mass,
            None => self.unassigned[gold] += mass,
        }
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().flatten().sum::<f64>() + self.unassigned.iter().sum::<f64>()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0.0 {
            return 0.0;
        }
        (0..self.classes.len()).map(|i| self.cells[i][i]).sum::<f64>() / total
    }

    /// F1 per class; a class with `2tp + fp + fn = 0` scores 0.
    pub fn class_f1(&self) -> Vec<f64> {
        let n = self.classes.len();
        (0..n)
            .map(|c| {
                let tp = self.cells[c][c];
                let row: f64 = self.cells[c].iter().sum::<f64>() + self.unassigned[c];
                let col: f64 = (0..n).map(|g| self.cells[g][c]).sum();
                let denom = row + col; // 2tp + fp + fn
                if denom == 0.0 {
                    0.0
                } else {
                    2.0 * tp / denom
                }
            })
            .collect()
    }

    pub fn macro_f1(&self) -> f64 {
        let f1 = self.class_f1();
        if f1.is_empty() {
            0.0
        } else {
            f1.iter().sum::<f64>() / f1.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub n_recognized: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// F1 of the first declared class, emitted for two-class tasks.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub positive_f1: Option<f64>,
    pub recognized_ratio: f64,
    pub subset_accuracy: f64,
    pub subset_macro_f1: f64,
    /// Whether unrecognized instances received random-guess mass.
    pub imputed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ImputationMode {
    /// Each unrecognized instance adds `1/k` to every cell of its gold row.
    #[default]
    Expected,
    /// One seeded uniform guess per unrecognized instance.
    Sampled { seed: u64 },
}

struct Aligned {
    gold: usize,
    predicted: Option<usize>,
}

fn class_index(classes: &[String], id: &str, label: &str) -> Result<usize, MetricsError> {
    classes
        .iter()
        .position(|c| c == label)
        .ok_or_else(|| MetricsError::UnknownLabel {
            id: id.to_string(),
            label: label.to_string(),
        })
}

fn align(
    predictions: &[Prediction],
    golds: &BTreeMap<String, String>,
    classes: &[String],
) -> Result<Vec<Aligned>, MetricsError> {
    let pred_ids: BTreeSet<&str> = predictions.iter().map(|p| p.instance_id.as_str()).collect();
    if pred_ids.len() != predictions.len() {
        return Err(MetricsError::IdMismatch("duplicate prediction ids".into()));
    }
    if let Some(missing) = golds.keys().find(|k| !pred_ids.contains(k.as_str())) {
        return Err(MetricsError::IdMismatch(format!("no prediction for {missing}")));
    }
    predictions
        .iter()
        .map(|p| {
            let gold = golds
                .get(&p.instance_id)
                .ok_or_else(|| MetricsError::IdMismatch(format!("no gold for {}", p.instance_id)))?;
            let gold = class_index(classes, &p.instance_id, gold)?;
            let predicted = match (&p.label, p.recognized) {
                (Some(label), true) => Some(class_index(classes, &p.instance_id, label)?),
                _ => None,
            };
            Ok(Aligned { gold, predicted })
        })
        .collect()
}

fn report_from(full: &ConfusionMatrix, subset: &ConfusionMatrix, n: usize, n_rec: usize, imputed: bool) -> EvalReport {
    EvalReport {
        n,
        n_recognized: n_rec,
        accuracy: full.accuracy(),
        macro_f1: full.macro_f1(),
        positive_f1: (full.classes.len() == 2).then(|| full.class_f1()[0]),
        recognized_ratio: if n == 0 { 0.0 } else { n_rec as f64 / n as f64 },
        subset_accuracy: subset.accuracy(),
        subset_macro_f1: subset.macro_f1(),
        imputed,
    }
}

/// Accuracy and macro-F1 with unrecognized predictions counted as misses;
/// subset metrics use recognized predictions only.
pub fn score_predictions(
    predictions: &[Prediction],
    golds: &BTreeMap<String, String>,
    classes: &[String],
) -> Result<EvalReport, MetricsError> {
    let aligned = align(predictions, golds, classes)?;
    let mut full = ConfusionMatrix::new(classes);
    let mut subset = ConfusionMatrix::new(classes);
    for a in &aligned {
        full.add(a.gold, a.predicted, 1.0);
        if a.predicted.is_some() {
            subset.add(a.gold, a.predicted, 1.0);
        }
    }
    let n_rec = aligned.iter().filter(|a| a.predicted.is_some()).count();
    Ok(report_from(&full, &subset, aligned.len(), n_rec, false))
}

/// Full-dataset metrics with unrecognized instances given a random guess
/// over the `classes.len()` answers.
pub fn impute_unrecognized(
    predictions: &[Prediction],
    golds: &BTreeMap<String, String>,
    classes: &[String],
    mode: ImputationMode,
) -> Result<EvalReport, MetricsError> {
    let k = classes.len();
    if k < 2 {
        return Err(MetricsError::TooFewClasses(k));
    }
    let aligned = align(predictions, golds, classes)?;
    let mut full = ConfusionMatrix::new(classes);
    let mut subset = ConfusionMatrix::new(classes);
    let mut rng = match mode {
        ImputationMode::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        ImputationMode::Expected => None,
    };
    for a in &aligned {
        match a.predicted {
            Some(p) => {
                full.add(a.gold, Some(p), 1.0);
                subset.add(a.gold, Some(p), 1.0);
            }
            None => match rng.as_mut() {
                Some(rng) => full.add(a.gold, Some(rng.gen_range(0..k)), 1.0),
                None => {
                    for c in 0..k {
                        full.add(a.gold, Some(c), 1.0 / k as f64);
                    }
                }
            },
        }
    }
    let n_rec = aligned.iter().filter(|a| a.predicted.is_some()).count();
    Ok(report_from(&full, &subset, aligned.len(), n_rec, true))
}

/// `r * subset + (1 - r) / k`: the closed form of expected-value imputed
/// accuracy.
pub fn expected_imputed_accuracy(recognized_ratio: f64, subset_accuracy: f64, k: usize) -> f64 {
    recognized_ratio * subset_accuracy + (1.0 - recognized_ratio) / k as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Greater,
    Smaller,
}

impl Comparison {
    pub fn opposite(self) -> Self {
        match self {
            Comparison::Greater => Comparison::Smaller,
            Comparison::Smaller => Comparison::Greater,
        }
    }
}

/// Predictions keyed by ordered object pair. `None` marks an instance the
/// model produced no usable answer for.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPredictions {
    pub table: BTreeMap<(String, String), Option<Comparison>>,
}

impl PairPredictions {
    pub fn insert(&mut self, a: &str, b: &str, pred: Option<Comparison>) {
        self.table.insert((a.to_string(), b.to_string()), pred);
    }

    pub fn get(&self, a: &str, b: &str) -> Option<Comparison> {
        self.table
            .get(&(a.to_string(), b.to_string()))
            .copied()
            .flatten()
    }

    pub fn objects(&self) -> BTreeSet<String> {
        self.table
            .keys()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect()
    }

    /// Recognized predictions grouped by first object.
    fn adjacency(&self) -> BTreeMap<&str, BTreeMap<&str, Comparison>> {
        let mut adj: BTreeMap<&str, BTreeMap<&str, Comparison>> = BTreeMap::new();
        for ((a, b), p) in &self.table {
            if let Some(p) = p {
                adj.entry(a.as_str()).or_default().insert(b.as_str(), *p);
            }
        }
        adj
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCount {
    pub consistent: usize,
    pub evaluated: usize,
    pub fraction: f64,
}

impl ConsistencyCount {
    fn new(consistent: usize, evaluated: usize) -> Self {
        ConsistencyCount {
            consistent,
            evaluated,
            fraction: if evaluated == 0 {
                0.0
            } else {
                consistent as f64 / evaluated as f64
            },
        }
    }
}

/// Share of unordered pairs `{A, B}` with both orders recognized whose
/// predictions are opposite.
pub fn symmetry_consistency(preds: &PairPredictions) -> ConsistencyCount {
    let mut consistent = 0;
    let mut evaluated = 0;
    for ((a, b), p) in &preds.table {
        if a >= b {
            continue; // visit each unordered pair once, from its smaller name
        }
        if let (Some(fwd), Some(rev)) = (p, preds.get(b, a)) {
            evaluated += 1;
            if *fwd == rev.opposite() {
                consistent += 1;
            }
        }
    }
    ConsistencyCount::new(consistent, evaluated)
}

/// Ordered triples `(A, B, C)` of distinct objects with
/// `pred(A,B) = pred(B,C) = r` and a recognized `pred(A,C)`; consistent when
/// `pred(A,C) = r`.
pub fn transitivity_consistency(preds: &PairPredictions) -> ConsistencyCount {
    let adj = preds.adjacency();
    let mut consistent = 0;
    let mut evaluated = 0;
    for (a, from_a) in &adj {
        for (b, r) in from_a {
            if a == b {
                continue;
            }
            let Some(from_b) = adj.get(b) else { continue };
            for (c, r2) in from_b {
                if c == a || c == b || r2 != r {
                    continue;
                }
                if let Some(ac) = from_a.get(c) {
                    evaluated += 1;
                    if ac == r {
                        consistent += 1;
                    }
                }
            }
        }
    }
    ConsistencyCount::new(consistent, evaluated)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub symmetry_pct: f64,
    pub transitivity_pct: f64,
    pub pairs_evaluated: usize,
    pub triples_evaluated: usize,
    pub pairs_consistent: usize,
    pub triples_consistent: usize,
    /// Ordered pairs whose reverse order is absent or unrecognized.
    pub pairs_missing_reverse: usize,
}

pub fn consistency_report(preds: &PairPredictions) -> ConsistencyReport {
    let sym = symmetry_consistency(preds);
    let trans = transitivity_consistency(preds);
    let missing = preds
        .table
        .iter()
        .filter(|((a, b), p)| p.is_some() && preds.get(b, a).is_none())
        .count();
    ConsistencyReport {
        symmetry_pct: sym.fraction,
        transitivity_pct: trans.fraction,
        pairs_evaluated: sym.evaluated,
        triples_evaluated: trans.evaluated,
        pairs_consistent: sym.consistent,
        triples_consistent: trans.consistent,
        pairs_missing_reverse: missing,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRatio {
    pub object: String,
    /// Share of comparable `a` with `pred(c, a) = greater`.
    pub forward_ratio: f64,
    /// Share of comparable `a` with `pred(a, c) = greater`.
    pub reverse_ratio: f64,
    pub comparable: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectRatioTable {
    pub rows: Vec<ObjectRatio>,
    pub skipped: Vec<String>,
}

/// Per-object greater-than ratios in both prompt directions. The comparable
/// set of `c` holds the objects `a` with both `pred(c, a)` and `pred(a, c)`
/// recognized. Rows follow the order of `objects`.
pub fn per_object_ratios(preds: &PairPredictions, objects: &[String]) -> ObjectRatioTable {
    let mut table = ObjectRatioTable::default();
    for c in objects {
        let mut fwd = 0usize;
        let mut rev = 0usize;
        let mut comparable = 0usize;
        for a in objects {
            if a == c {
                continue;
            }
            if let (Some(ca), Some(ac)) = (preds.get(c, a), preds.get(a, c)) {
                comparable += 1;
                fwd += (ca == Comparison::Greater) as usize;
                rev += (ac == Comparison::Greater) as usize;
            }
        }
        if comparable == 0 {
            table.skipped.push(c.clone());
            continue;
        }
        table.rows.push(ObjectRatio {
            object: c.clone(),
            forward_ratio: fwd as f64 / comparable as f64,
            reverse_ratio: rev as f64 / comparable as f64,
            comparable,
        });
    }
    table
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRow {
    pub image_id: String,
    pub annotator: String,
    /// `null` when the annotator could not recognize the objects.
    pub label: Option<String>,
}

/// `(image_id, annotator) -> label`, `None` meaning unrecognized.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HumanAnnotationSet {
    pub judgments: BTreeMap<(String, String), Option<String>>,
}

impl HumanAnnotationSet {
    pub fn from_rows(rows: impl IntoIterator<Item = AnnotationRow>) -> Result<Self, MetricsError> {
        let mut set = HumanAnnotationSet::default();
        for r in rows {
            set.judgments.insert((r.image_id, r.annotator), r.label);
        }
        for (image, count) in set.per_image_counts() {
            if count > 2 {
                return Err(MetricsError::TooManyAnnotators { image, count });
            }
        }
        Ok(set)
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, MetricsError> {
        let rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<AnnotationRow>(l).map_err(|e| MetricsError::Annotation {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_rows(rows)
    }

    pub fn annotators(&self) -> BTreeSet<String> {
        self.judgments.keys().map(|(_, a)| a.clone()).collect()
    }

    pub fn images(&self) -> BTreeSet<String> {
        self.judgments.keys().map(|(i, _)| i.clone()).collect()
    }

    fn per_image_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for (image, _) in self.judgments.keys() {
            *counts.entry(image.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn for_image(&self, image: &str) -> Vec<(&str, Option<&str>)> {
        self.judgments
            .iter()
            .filter(|((i, _), _)| i == image)
            .map(|((_, a), l)| (a.as_str(), l.as_deref()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalReport {
    pub per_annotator: BTreeMap<String, EvalReport>,
    /// Field-wise arithmetic mean of the per-annotator reports.
    pub mean: EvalReport,
    /// Share of doubly-annotated images given identical labels.
    pub agreement: Option<f64>,
    pub doubly_annotated: usize,
}

fn mean_report(reports: &[&EvalReport]) -> EvalReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    let positive = if reports.iter().all(|r| r.positive_f1.is_some()) {
        Some(reports.iter().map(|r| r.positive_f1.unwrap_or(0.0)).sum::<f64>() / n)
    } else {
        None
    };
    EvalReport {
        n: reports.first().map_or(0, |r| r.n),
        n_recognized: (reports.iter().map(|r| r.n_recognized).sum::<usize>() as f64 / n).round() as usize,
        accuracy: avg(|r| r.accuracy),
        macro_f1: avg(|r| r.macro_f1),
        positive_f1: positive,
        recognized_ratio: avg(|r| r.recognized_ratio),
        subset_accuracy: avg(|r| r.subset_accuracy),
        subset_macro_f1: avg(|r| r.subset_macro_f1),
        imputed: reports.iter().any(|r| r.imputed),
    }
}

/// Scores each annotator against the golds (images they did not recognize
/// or did not see are unrecognized and imputed), then averages.
pub fn aggregate_human_eval(
    annotations: &HumanAnnotationSet,
    golds: &BTreeMap<String, String>,
    classes: &[String],
    mode: ImputationMode,
) -> Result<HumanEvalReport, MetricsError> {
    for ((image, _), label) in &annotations.judgments {
        if let Some(l) = label {
            class_index(classes, image, l)?;
        }
    }
    let mut per_annotator = BTreeMap::new();
    for annotator in annotations.annotators() {
        let predictions: Vec<Prediction> = golds
            .keys()
            .map(|image| {
                let label = annotations
                    .judgments
                    .get(&(image.clone(), annotator.clone()))
                    .cloned()
                    .flatten();
                Prediction {
                    instance_id: image.clone(),
                    recognized: label.is_some(),
                    label,
                    provenance: Provenance::Human,
                    tie: false,
                    answer_index: None,
                }
            })
            .collect();
        per_annotator.insert(annotator, impute_unrecognized(&predictions, golds, classes, mode)?);
    }
    let reports: Vec<&EvalReport> = per_annotator.values().collect();
    let mean = if reports.is_empty() {
        let none: Vec<Prediction> = golds
            .keys()
            .map(|id| Prediction::unrecognized(id, Provenance::Human))
            .collect();
        impute_unrecognized(&none, golds, classes, mode)?
    } else {
        mean_report(&reports)
    };

    let mut doubly = 0usize;
    let mut agreed = 0usize;
    for image in annotations.images() {
        let labels = annotations.for_image(&image);
        if labels.len() == 2 {
            doubly += 1;
            agreed += (labels[0].1 == labels[1].1) as usize;
        }
    }
    Ok(HumanEvalReport {
        per_annotator,
        mean,
        agreement: (doubly > 0).then(|| agreed as f64 / doubly as f64),
        doubly_annotated: doubly,
    })
}

/// `"54.8 (81.6)"`: full value with the recognized-subset value in
/// parentheses, both in percent.
pub fn pct_pair(full: f64, subset: f64) -> String {
    format!("{:.1} ({:.1})", full * 100.0, subset * 100.0)
}

fn render_rows(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{:<w$}", c, w = widths[i])
                } else {
                    format!("{:>w$}", c, w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let rule: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
    let _ = writeln!(out, "{}", "-".repeat(rule));
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// Model x {Acc, F1} with subset values in parentheses.
pub fn render_eval_table(rows: &[(String, EvalReport)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            vec![
                name.clone(),
                pct_pair(r.accuracy, r.subset_accuracy),
                pct_pair(r.macro_f1, r.subset_macro_f1),
                format!("{:.1}", r.recognized_ratio * 100.0),
            ]
        })
        .collect();
    render_rows(&["Model", "Acc", "F1", "Recog."], &body)
}

/// Model x {Sym., Trans.} in percent.
pub fn render_consistency_table(rows: &[(String, ConsistencyReport)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            vec![
                name.clone(),
                format!("{:.1}", r.symmetry_pct * 100.0),
                format!("{:.1}", r.transitivity_pct * 100.0),
                r.pairs_evaluated.to_string(),
                r.triples_evaluated.to_string(),
            ]
        })
        .collect();
    render_rows(&["Model", "Sym.", "Trans.", "Pairs", "Triples"], &body)
}

pub fn render_ratio_table(table: &ObjectRatioTable) -> String {
    let body: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.object.clone(),
                format!("{:.3}", r.forward_ratio),
                format!("{:.3}", r.reverse_ratio),
                format!("{:.3}", r.forward_ratio + r.reverse_ratio),
                r.comparable.to_string(),
            ]
        })
        .collect();
    render_rows(&["Object", "#(c>a)/|A|", "#(a>c)/|A|", "Sum", "|A|"], &body)
}
