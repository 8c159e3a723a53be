//! Prompt templates, candidate pools, object-disjoint folds and
//! cross-validated candidate selection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::{Dimension, GeneralizedScenario, ObjectEntity, PositionScenario, ScaleInstance};
use crate::geometry::SpatialRelation;
use crate::metrics::ConfusionMatrix;
use crate::text;

pub const MASK: &str = "[MASK]";

/// Generated candidates kept per pool, not counting the original.
pub const MAX_GENERATED_CANDIDATES: usize = 10;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {pattern:?}: {message}")]
    InvalidTemplate { pattern: String, message: String },
    #[error("slot {{{0}}} cannot be resolved for this instance")]
    UnresolvedSlot(String),
    #[error("template kind {kind:?} does not apply to a {family} instance")]
    KindMismatch { kind: TemplateKind, family: &'static str },
    #[error("answer set needs at least 2 distinct answers: {0:?}")]
    InvalidAnswerSet(Vec<String>),
    #[error("fold count must be at least 2, got {0}")]
    FoldCount(usize),
    #[error("{0}")]
    Io(String),
    #[error("evaluation callback failed: {0}")]
    Eval(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    MaskedScale,
    MaskedPosition,
    IsmScale,
    IsmScenario,
    Qa,
}

impl TemplateKind {
    pub fn is_masked(self) -> bool {
        matches!(self, TemplateKind::MaskedScale | TemplateKind::MaskedPosition)
    }

    fn required_slots(self) -> &'static [&'static str] {
        match self {
            TemplateKind::MaskedScale | TemplateKind::IsmScale => &["A", "B"],
            TemplateKind::MaskedPosition => &["ACTION", "OBJECT"],
            TemplateKind::IsmScenario => &["ACTION"],
            TemplateKind::Qa => &[],
        }
    }

    fn family(self) -> Option<Family> {
        match self {
            TemplateKind::MaskedScale | TemplateKind::IsmScale => Some(Family::Scale),
            TemplateKind::MaskedPosition | TemplateKind::IsmScenario => Some(Family::Position),
            TemplateKind::Qa => None,
        }
    }

    /// The manually designed template for this kind.
    pub fn default_pattern(self) -> &'static str {
        match self {
            TemplateKind::MaskedScale => "{A} is [MASK] than {B}",
            TemplateKind::MaskedPosition => "{A_PERSON} {ACTION}. {PRONOUN} is [MASK] the {OBJECT}.",
            TemplateKind::IsmScale => "{A} and {B}",
            TemplateKind::IsmScenario => "{A_PERSON} {ACTION}.",
            TemplateKind::Qa => "{CONTEXT} {QUESTION}",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Scale,
    Position,
}

impl Family {
    fn name(self) -> &'static str {
        match self {
            Family::Scale => "scale",
            Family::Position => "position",
        }
    }
}

pub const KNOWN_SLOTS: [&str; 9] = [
    "A", "B", "PERSON", "A_PERSON", "OBJECT", "ACTION", "PRONOUN", "CONTEXT", "QUESTION",
];

/// Anything a template can be rendered against.
pub trait SlotSource {
    fn family(&self) -> Family;
    fn slot(&self, name: &str) -> Option<String>;
}

impl SlotSource for ScaleInstance {
    fn family(&self) -> Family {
        Family::Scale
    }

    fn slot(&self, name: &str) -> Option<String> {
        match name {
            "A" => Some(self.obj_a.clone()),
            "B" => Some(self.obj_b.clone()),
            _ => None,
        }
    }
}

fn position_slot(person: &str, pronoun_of: &str, object: &str, action: &str, name: &str) -> Option<String> {
    match name {
        "PERSON" => Some(person.to_string()),
        "A_PERSON" => Some(text::with_article(person)),
        "OBJECT" => Some(object.to_string()),
        "ACTION" => Some(action.to_string()),
        "PRONOUN" => Some(match text::person_gender(pronoun_of) {
            Some(_) => text::subject_pronoun(pronoun_of),
            None => format!("The {person}"),
        }),
        _ => None,
    }
}

impl SlotSource for PositionScenario {
    fn family(&self) -> Family {
        Family::Position
    }

    fn slot(&self, name: &str) -> Option<String> {
        position_slot(&self.person, &self.person, &self.object, &self.action, name)
    }
}

impl SlotSource for GeneralizedScenario {
    fn family(&self) -> Family {
        Family::Position
    }

    /// The pronoun follows the base person (`enchantress` -> `woman` -> `She`).
    fn slot(&self, name: &str) -> Option<String> {
        position_slot(&self.person, &self.base_person, &self.object, &self.action, name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub pattern: String,
    pub kind: TemplateKind,
}

/// Slot names in order of appearance, or the offending text when braces are
/// unbalanced.
fn parse_slots(pattern: &str) -> Result<Vec<(usize, usize, String)>, String> {
    let mut out = Vec::new();
    let mut rest = pattern;
    let mut offset = 0;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            return Err("unclosed '{'".into());
        };
        let name = &rest[open + 1..open + close];
        if name.contains('{') {
            return Err("nested '{'".into());
        }
        out.push((offset + open, offset + open + close + 1, name.to_string()));
        offset += open + close + 1;
        rest = &rest[open + close + 1..];
    }
    if rest.contains('}') {
        return Err("unmatched '}'".into());
    }
    Ok(out)
}

impl PromptTemplate {
    pub fn new(pattern: &str, kind: TemplateKind) -> Result<Self, PromptError> {
        let invalid = |message: String| PromptError::InvalidTemplate {
            pattern: pattern.to_string(),
            message,
        };
        let masks = pattern.matches(MASK).count();
        if kind.is_masked() && masks != 1 {
            return Err(invalid(format!("masked template needs exactly one {MASK}, found {masks}")));
        }
        if !kind.is_masked() && masks != 0 {
            return Err(invalid(format!("{kind:?} template must not contain {MASK}")));
        }
        let slots = parse_slots(pattern).map_err(invalid)?;
        if let Some((_, _, unknown)) = slots.iter().find(|(_, _, n)| !KNOWN_SLOTS.contains(&n.as_str())) {
            return Err(invalid(format!("unknown slot {{{unknown}}}")));
        }
        for req in kind.required_slots() {
            if !slots.iter().any(|(_, _, n)| n == req) {
                return Err(invalid(format!("missing slot {{{req}}}")));
            }
        }
        Ok(PromptTemplate {
            pattern: pattern.to_string(),
            kind,
        })
    }

    pub fn default_for(kind: TemplateKind) -> Self {
        Self::new(kind.default_pattern(), kind).expect("default templates are valid")
    }

    /// Substitutes slots. Article and pronoun slots are capitalized when they
    /// open a sentence; everything else, including `[MASK]`, is copied as is.
    pub fn render(&self, instance: &dyn SlotSource) -> Result<String, PromptError> {
        if let Some(family) = self.kind.family() {
            if family != instance.family() {
                return Err(PromptError::KindMismatch {
                    kind: self.kind,
                    family: instance.family().name(),
                });
            }
        }
        let slots = parse_slots(&self.pattern).map_err(|message| PromptError::InvalidTemplate {
            pattern: self.pattern.clone(),
            message,
        })?;
        let mut out = String::with_capacity(self.pattern.len() + 32);
        let mut last = 0;
        for (start, end, name) in slots {
            out.push_str(&self.pattern[last..start]);
            let value = instance
                .slot(&name)
                .ok_or_else(|| PromptError::UnresolvedSlot(name.clone()))?;
            let sentence_start = {
                let t = out.trim_end();
                t.is_empty() || t.ends_with(['.', '?', '!'])
            };
            if sentence_start && matches!(name.as_str(), "A_PERSON" | "PRONOUN") {
                out.push_str(&text::capitalize_first(&value));
            } else {
                out.push_str(&value);
            }
            last = end;
        }
        out.push_str(&self.pattern[last..]);
        Ok(out)
    }
}

pub fn render_masked_prompt(template: &PromptTemplate, instance: &dyn SlotSource) -> Result<String, PromptError> {
    if !template.kind.is_masked() {
        return Err(PromptError::InvalidTemplate {
            pattern: template.pattern.clone(),
            message: "not a masked template".into(),
        });
    }
    template.render(instance)
}

/// `"{A} and {B}"` for scale pairs, the declarative scenario sentence for
/// positional (and generalized) scenarios.
pub fn render_ism_prompt(instance: &dyn SlotSource) -> Result<String, PromptError> {
    let kind = match instance.family() {
        Family::Scale => TemplateKind::IsmScale,
        Family::Position => TemplateKind::IsmScenario,
    };
    PromptTemplate::default_for(kind).render(instance)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub answers: Vec<String>,
}

impl AnswerSet {
    pub fn new<S: AsRef<str>>(answers: &[S]) -> Result<Self, PromptError> {
        let answers: Vec<String> = answers.iter().map(|a| a.as_ref().trim().to_string()).collect();
        let distinct: BTreeSet<&String> = answers.iter().collect();
        if answers.len() < 2 || distinct.len() != answers.len() || answers.iter().any(String::is_empty) {
            return Err(PromptError::InvalidAnswerSet(answers));
        }
        Ok(AnswerSet { answers })
    }

    pub fn for_dimension(d: Dimension) -> Self {
        Self::new(&d.comparatives()).expect("static answers")
    }

    pub fn relations() -> Self {
        Self::new(&SpatialRelation::ALL.map(SpatialRelation::as_str)).expect("static answers")
    }

    pub fn yes_no() -> Self {
        Self::new(&["yes", "no"]).expect("static answers")
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.answers.iter().position(|a| a == answer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedCandidate {
    pub candidate: String,
    pub reason: String,
}

/// Index 0 of each list is the manually designed original.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub prompts: Vec<PromptTemplate>,
    pub answer_sets: Vec<AnswerSet>,
    #[serde(default)]
    pub rejected: Vec<RejectedCandidate>,
}

impl CandidatePool {
    pub fn singleton(template: PromptTemplate, answers: AnswerSet) -> Self {
        CandidatePool {
            prompts: vec![template],
            answer_sets: vec![answers],
            rejected: Vec::new(),
        }
    }

    /// Adds answer-set candidates: arity must match the original, duplicates
    /// of earlier sets are dropped, at most ten are kept.
    pub fn ingest_answer_sets(&mut self, raw: &[Vec<String>]) {
        let arity = self.answer_sets[0].len();
        let mut added = 0;
        for cand in raw {
            let shown = format!("{cand:?}");
            if added == MAX_GENERATED_CANDIDATES {
                log::info!("answer candidate {shown} over the cap of {MAX_GENERATED_CANDIDATES}");
                break;
            }
            let set = match AnswerSet::new(cand) {
                Ok(s) if s.len() == arity => s,
                Ok(s) => {
                    self.reject(shown, format!("arity {} differs from original {arity}", s.len()));
                    continue;
                }
                Err(e) => {
                    self.reject(shown, e.to_string());
                    continue;
                }
            };
            if self.answer_sets.contains(&set) {
                continue;
            }
            self.answer_sets.push(set);
            added += 1;
        }
    }

    fn reject(&mut self, candidate: String, reason: String) {
        log::warn!("rejected candidate {candidate}: {reason}");
        self.rejected.push(RejectedCandidate { candidate, reason });
    }

    pub fn size(&self) -> (usize, usize) {
        (self.prompts.len(), self.answer_sets.len())
    }
}

/// Builds a pool from raw prompt candidates for `kind`: the default
/// template sits at index 0, exact duplicates keep their first occurrence,
/// candidates violating the template rules are logged and dropped, and at
/// most ten generated candidates survive.
pub fn ingest_candidates(raw: &[String], kind: TemplateKind, answers: AnswerSet) -> CandidatePool {
    let mut pool = CandidatePool::singleton(PromptTemplate::default_for(kind), answers);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    seen.insert(kind.default_pattern().to_string());
    for cand in raw {
        if pool.prompts.len() - 1 == MAX_GENERATED_CANDIDATES {
            break;
        }
        let cand = cand.trim();
        if !seen.insert(cand.to_string()) {
            continue;
        }
        match PromptTemplate::new(cand, kind) {
            Ok(t) => pool.prompts.push(t),
            Err(e) => pool.reject(cand.to_string(), e.to_string()),
        }
    }
    pool
}

/// Candidate file layout. `answers` lists whole answer sets;
/// `answer_alternatives` lists, per original answer, alternative words that
/// are zipped position-wise into sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateFile {
    #[serde(default)]
    pub prompts: Vec<String>,
    #[serde(default)]
    pub answers: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub answer_alternatives: Vec<Vec<String>>,
}

impl CandidateFile {
    fn zipped_alternatives(&self) -> Vec<Vec<String>> {
        let n = self.answer_alternatives.iter().map(Vec::len).min().unwrap_or(0);
        (0..n)
            .map(|j| self.answer_alternatives.iter().map(|alts| alts[j].clone()).collect())
            .collect()
    }

    pub fn into_pool(self, kind: TemplateKind, original_answers: AnswerSet) -> CandidatePool {
        let mut pool = ingest_candidates(&self.prompts, kind, original_answers);
        let mut sets = self.answers.clone();
        sets.extend(self.zipped_alternatives());
        pool.ingest_answer_sets(&sets);
        pool
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold(&self, object: &str) -> Option<usize> {
        self.fold_of.get(object).copied()
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.fold_of
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(o, _)| o.as_str())
            .collect()
    }
}

/// Leveled objects: the i-th listed object of every group goes to fold
/// `i mod k`.
pub fn split_object_folds(objects: &[ObjectEntity], k: usize) -> Result<FoldAssignment, PromptError> {
    if k < 2 {
        return Err(PromptError::FoldCount(k));
    }
    let mut position_in_group: BTreeMap<u8, usize> = BTreeMap::new();
    let mut fold_of = BTreeMap::new();
    for o in objects {
        let i = position_in_group.entry(o.group_level).or_insert(0);
        fold_of.insert(o.name.clone(), *i % k);
        *i += 1;
    }
    Ok(FoldAssignment { k, fold_of })
}

/// Unleveled objects: round-robin over the sorted distinct names.
pub fn split_named_folds<S: AsRef<str>>(names: &[S], k: usize) -> Result<FoldAssignment, PromptError> {
    if k < 2 {
        return Err(PromptError::FoldCount(k));
    }
    let sorted: BTreeSet<&str> = names.iter().map(AsRef::as_ref).collect();
    let fold_of = sorted
        .into_iter()
        .enumerate()
        .map(|(i, n)| (n.to_string(), i % k))
        .collect();
    Ok(FoldAssignment { k, fold_of })
}

/// Objects whose fold membership decides an instance's split.
pub trait FoldKeyed {
    fn fold_objects(&self) -> Vec<&str>;
}

impl FoldKeyed for ScaleInstance {
    fn fold_objects(&self) -> Vec<&str> {
        vec![&self.obj_a, &self.obj_b]
    }
}

impl FoldKeyed for PositionScenario {
    fn fold_objects(&self) -> Vec<&str> {
        vec![&self.object]
    }
}

impl FoldKeyed for GeneralizedScenario {
    fn fold_objects(&self) -> Vec<&str> {
        vec![&self.base_object]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Dev,
    Test,
    /// Some but not all objects in the held-out fold; excluded from the run.
    Straddling,
}

pub fn split_of<T: FoldKeyed + ?Sized>(instance: &T, folds: &FoldAssignment, run: usize) -> Split {
    let objs = instance.fold_objects();
    let inside = objs.iter().filter(|o| folds.fold(o) == Some(run)).count();
    if inside == objs.len() {
        Split::Dev
    } else if inside == 0 {
        Split::Test
    } else {
        Split::Straddling
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRun {
    pub run: usize,
    pub prompt_index: usize,
    pub answer_index: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    pub test_macro_f1: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRunResult {
    pub k: usize,
    pub per_run: Vec<CvRun>,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

impl CvRunResult {
    /// The (prompt, answer-set) pair chosen in most non-skipped runs, ties
    /// to the lowest indices.
    pub fn modal_choice(&self) -> (usize, usize) {
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for r in self.per_run.iter().filter(|r| !r.skipped) {
            *counts.entry((r.prompt_index, r.answer_index)).or_insert(0) += 1;
        }
        let best = counts.values().copied().max().unwrap_or(0);
        counts
            .into_iter()
            .find(|(_, c)| *c == best)
            .map(|(k, _)| k)
            .unwrap_or((0, 0))
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Accuracy and macro-F1 of predicted answer indices; `None` counts as a
/// miss.
pub fn index_metrics(preds: &[Option<usize>], golds: &[usize], n_classes: usize) -> (f64, f64) {
    let classes: Vec<String> = (0..n_classes).map(|i| i.to_string()).collect();
    let mut m = ConfusionMatrix::new(&classes);
    for (p, g) in preds.iter().zip(golds) {
        m.add(*g, *p, 1.0);
    }
    (m.accuracy(), m.macro_f1())
}

/// Runs the k-fold protocol.
///
/// For run `r`, the dev set holds instances whose objects all lie in fold
/// `r` and the test set holds instances with no object in fold `r`. Every
/// (prompt, answer-set) pair in the pool is scored on dev; the best dev
/// accuracy wins with ties to the lowest `(prompt, answer)` index, and the
/// winner is scored on test. `eval_fn(prompt, answers, instance_indices)`
/// returns one predicted answer index per instance.
pub fn run_cross_validated_selection<T, F>(
    instances: &[T],
    golds: &[usize],
    pool_size: (usize, usize),
    n_classes: usize,
    folds: &FoldAssignment,
    mut eval_fn: F,
) -> Result<CvRunResult, PromptError>
where
    T: FoldKeyed,
    F: FnMut(usize, usize, &[usize]) -> Result<Vec<Option<usize>>, String>,
{
    assert_eq!(instances.len(), golds.len(), "one gold per instance");
    let (n_prompts, n_answers) = pool_size;
    let mut per_run = Vec::with_capacity(folds.k);
    for run in 0..folds.k {
        let mut dev = Vec::new();
        let mut test = Vec::new();
        for (i, inst) in instances.iter().enumerate() {
            match split_of(inst, folds, run) {
                Split::Dev => dev.push(i),
                Split::Test => test.push(i),
                Split::Straddling => {}
            }
        }
        if dev.is_empty() || test.is_empty() || n_prompts == 0 || n_answers == 0 {
            log::warn!("run {run}: dev={} test={}; skipped", dev.len(), test.len());
            per_run.push(CvRun {
                run,
                prompt_index: 0,
                answer_index: 0,
                dev_size: dev.len(),
                test_size: test.len(),
                dev_accuracy: 0.0,
                test_accuracy: 0.0,
                test_macro_f1: 0.0,
                skipped: true,
            });
            continue;
        }
        let dev_golds: Vec<usize> = dev.iter().map(|&i| golds[i]).collect();
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for p in 0..n_prompts {
            for a in 0..n_answers {
                let preds = eval_fn(p, a, &dev).map_err(PromptError::Eval)?;
                let (acc, _) = index_metrics(&preds, &dev_golds, n_classes);
                if acc > best.0 {
                    best = (acc, p, a);
                }
            }
        }
        let (dev_accuracy, p, a) = best;
        let test_golds: Vec<usize> = test.iter().map(|&i| golds[i]).collect();
        let preds = eval_fn(p, a, &test).map_err(PromptError::Eval)?;
        let (test_accuracy, test_macro_f1) = index_metrics(&preds, &test_golds, n_classes);
        per_run.push(CvRun {
            run,
            prompt_index: p,
            answer_index: a,
            dev_size: dev.len(),
            test_size: test.len(),
            dev_accuracy,
            test_accuracy,
            test_macro_f1,
            skipped: false,
        });
    }
    let done: Vec<&CvRun> = per_run.iter().filter(|r| !r.skipped).collect();
    let (mean_acc, std_acc) = mean_std(&done.iter().map(|r| r.test_accuracy).collect::<Vec<_>>());
    let (mean_f1, std_f1) = mean_std(&done.iter().map(|r| r.test_macro_f1).collect::<Vec<_>>());
    Ok(CvRunResult {
        k: folds.k,
        per_run,
        mean_acc,
        std_acc,
        mean_f1,
        std_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{build_scale_dataset, parse_objects, ScaleGold};
    use crate::data;

    fn scale(a: &str, b: &str) -> ScaleInstance {
        ScaleInstance {
            id: format!("size:{a}|{b}"),
            obj_a: a.into(),
            obj_b: b.into(),
            level_a: 1,
            level_b: 2,
            dimension: Dimension::Size,
            gold: ScaleGold::BGreater,
        }
    }

    fn scenario(person: &str, object: &str, action: &str) -> PositionScenario {
        PositionScenario {
            id: format!("position:{object}:beside"),
            person: person.into(),
            object: object.into(),
            action: action.into(),
            relation: SpatialRelation::Beside,
        }
    }

    #[test]
    fn masked_renderings() {
        let t = PromptTemplate::default_for(TemplateKind::MaskedScale);
        assert_eq!(
            render_masked_prompt(&t, &scale("sofa", "mountain")).unwrap(),
            "sofa is [MASK] than mountain"
        );
        let t = PromptTemplate::default_for(TemplateKind::MaskedPosition);
        assert_eq!(
            render_masked_prompt(&t, &scenario("woman", "car", "washes the car")).unwrap(),
            "A woman washes the car. She is [MASK] the car."
        );
    }

    #[test]
    fn template_slot_mismatch_errors() {
        let t = PromptTemplate::default_for(TemplateKind::MaskedScale);
        assert!(matches!(
            t.render(&scenario("woman", "car", "washes the car")),
            Err(PromptError::KindMismatch { .. })
        ));
        let qa = PromptTemplate::new("{A} vs {PERSON}?", TemplateKind::Qa).unwrap();
        assert!(matches!(
            qa.render(&scale("ant", "bird")),
            Err(PromptError::UnresolvedSlot(s)) if s == "PERSON"
        ));
        assert!(PromptTemplate::new("{A} is [MASK] [MASK] {B}", TemplateKind::MaskedScale).is_err());
        assert!(PromptTemplate::new("{A} and {B} [MASK]", TemplateKind::IsmScale).is_err());
        assert!(PromptTemplate::new("{A} is [MASK] than {C}", TemplateKind::MaskedScale).is_err());
    }

    #[test]
    fn ism_renderings() {
        assert_eq!(render_ism_prompt(&scale("ant", "bird")).unwrap(), "ant and bird");
        assert_eq!(
            render_ism_prompt(&scenario("woman", "car", "washes the car")).unwrap(),
            "A woman washes the car."
        );
        let g = GeneralizedScenario {
            id: "g".into(),
            base_id: "b".into(),
            base_person: "woman".into(),
            base_object: "sparkler".into(),
            person: "enchantress".into(),
            object: "sparkler".into(),
            action: "lights the sparkler".into(),
            relation: SpatialRelation::Beside,
        };
        assert_eq!(render_ism_prompt(&g).unwrap(), "An enchantress lights the sparkler.");
        let t = PromptTemplate::default_for(TemplateKind::MaskedPosition);
        assert_eq!(
            t.render(&g).unwrap(),
            "An enchantress lights the sparkler. She is [MASK] the sparkler."
        );
    }

    fn raw(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ingest_dedup_cap_and_arity() {
        let kind = TemplateKind::MaskedScale;
        let ans = AnswerSet::for_dimension(Dimension::Size);
        let r = raw(&[
            "{A} is [MASK] compared to {B}",
            "{A} is [MASK] compared to {B}",
            "the {A} is [MASK] than the {B}",
            "{A} is [MASK] compared to {B}",
            "{A} seems [MASK] than {B}",
            "{A} seems [MASK] than {B}",
            "{A} looks [MASK] than {B}",
            "{A} was [MASK] than {B}",
            "{A} appears [MASK] than {B}",
            "{A} is much [MASK] than {B}",
        ]);
        let pool = ingest_candidates(&r, kind, ans.clone());
        assert_eq!(pool.prompts.len(), 1 + 7);
        assert_eq!(pool.prompts[0].pattern, "{A} is [MASK] than {B}");

        let twelve: Vec<String> = (0..12).map(|i| format!("{{A}} is [MASK] v{i} {{B}}")).collect();
        let pool = ingest_candidates(&twelve, kind, ans.clone());
        assert_eq!(pool.prompts.len(), 11);
        assert_eq!(pool.prompts[10].pattern, "{A} is [MASK] v9 {B}");

        let pool = ingest_candidates(&raw(&["{A} [MASK] [MASK] {B}"]), kind, ans);
        assert_eq!(pool.prompts.len(), 1);
        assert_eq!(pool.rejected.len(), 1);
    }

    #[test]
    fn candidate_file_answers() {
        let file = CandidateFile {
            prompts: vec![],
            answers: vec![raw(&["bigger", "smaller"]), raw(&["larger", "smaller"]), raw(&["big"])],
            answer_alternatives: vec![raw(&["huger", "greater"]), raw(&["tinier", "lesser"])],
        };
        let pool = file.into_pool(TemplateKind::MaskedScale, AnswerSet::for_dimension(Dimension::Size));
        let sets: Vec<_> = pool.answer_sets.iter().map(|s| s.answers.join("/")).collect();
        assert_eq!(sets, ["larger/smaller", "bigger/smaller", "huger/tinier", "greater/lesser"]);
        assert_eq!(pool.rejected.len(), 1);
    }

    fn size_objects() -> Vec<ObjectEntity> {
        parse_objects(&data::load(None, data::OBJECTS_SIZE_FILE).unwrap()).unwrap()
    }

    #[test]
    fn leveled_fold_zero() {
        let f = split_object_folds(&size_objects(), 5).unwrap();
        let mut zero = f.members(0);
        zero.sort();
        assert_eq!(zero, ["ant", "bird", "house", "human", "tyre"]);
        assert!(split_object_folds(&size_objects(), 1).is_err());
    }

    #[test]
    fn named_folds_round_robin() {
        let f = split_named_folds(&["car", "bicycle", "horse", "tree"], 2).unwrap();
        assert_eq!(f.members(0), ["bicycle", "horse"]);
        assert_eq!(f.members(1), ["car", "tree"]);
    }

    #[test]
    fn cv_singleton_and_dominance() {
        let objs = size_objects();
        let ds = build_scale_dataset(&objs, Dimension::Size).unwrap();
        let golds: Vec<usize> = ds.iter().map(|i| i.gold.answer_index()).collect();
        let folds = split_object_folds(&objs, 5).unwrap();

        // singleton pool, always "larger": every test set is closed under
        // reversal, so accuracy 0.5 in every run
        let r = run_cross_validated_selection(&ds, &golds, (1, 1), 2, &folds, |_, _, idx| {
            Ok(vec![Some(0); idx.len()])
        })
        .unwrap();
        assert_eq!(r.per_run.len(), 5);
        assert_eq!(r.mean_acc, 0.5);
        assert_eq!(r.std_acc, 0.0);

        // candidate 1 is the oracle; it must win every run
        let g = golds.clone();
        let r = run_cross_validated_selection(&ds, &golds, (2, 1), 2, &folds, |p, _, idx| {
            Ok(idx.iter().map(|&i| Some(if p == 1 { g[i] } else { 0 })).collect())
        })
        .unwrap();
        assert!(r.per_run.iter().all(|run| run.prompt_index == 1));
        assert_eq!((r.mean_acc, r.std_acc), (1.0, 0.0));
    }

    #[test]
    fn dev_and_test_share_no_objects() {
        let objs = size_objects();
        let ds = build_scale_dataset(&objs, Dimension::Size).unwrap();
        let folds = split_object_folds(&objs, 5).unwrap();
        for run in 0..5 {
            let mut dev_objs = BTreeSet::new();
            let mut test_objs = BTreeSet::new();
            for inst in &ds {
                match split_of(inst, &folds, run) {
                    Split::Dev => dev_objs.extend(inst.fold_objects()),
                    Split::Test => test_objs.extend(inst.fold_objects()),
                    Split::Straddling => {}
                }
            }
            assert!(dev_objs.is_disjoint(&test_objs));
            assert_eq!(dev_objs.len(), 5);
        }
    }

    #[test]
    fn empty_dev_is_skipped() {
        let ds = vec![scale("a", "b")];
        let folds = split_named_folds(&["a", "b"], 2).unwrap();
        let r = run_cross_validated_selection(&ds, &[1], (1, 1), 2, &folds, |_, _, idx| {
            Ok(vec![Some(1); idx.len()])
        })
        .unwrap();
        assert!(r.per_run.iter().all(|run| run.skipped));
    }
}
