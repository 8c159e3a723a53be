//! Dataset builders.
//!
//! Every builder validates human-authored rows and expands them
//! deterministically; none of them invents content. Output instances
//! serialize to JSON Lines with stable field names.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{tsv_rows, Source};
use crate::geometry::SpatialRelation;
use crate::text::{self, tokenize};

/// Prepositions an action phrase must not contain.
pub const PREPOSITION_STOP_LIST: [&str; 8] =
    ["on", "in", "under", "above", "below", "beside", "inside", "over"];

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("duplicate object name {0:?}")]
    DuplicateObject(String),
    #[error("object {name:?} has group level {level}, expected 1..=5")]
    GroupLevel { name: String, level: i64 },
    #[error("object {name:?} has dimension {found}, dataset dimension is {expected}")]
    DimensionMismatch {
        name: String,
        found: Dimension,
        expected: Dimension,
    },
    #[error("scale dataset needs at least 2 groups, found {0}")]
    TooFewGroups(usize),
    #[error("line {line}: action {action:?} contains preposition {token:?}")]
    PrepositionInAction {
        line: usize,
        action: String,
        token: String,
    },
    #[error("line {line}: empty field {field}")]
    EmptyField { line: usize, field: &'static str },
    #[error("object {object:?} has {count} actions, expected exactly 2")]
    ActionCount { object: String, count: usize },
    #[error("object {object:?} has two actions with the same relation {relation}")]
    DuplicateRelation {
        object: String,
        relation: SpatialRelation,
    },
    #[error("occurrence oracle failed on scenario {scenario_id}: {message}")]
    OracleFailure { scenario_id: String, message: String },
    #[error("{subtask} has {count} instances; an odd count cannot be balanced into yes/no")]
    OddInstanceCount { subtask: QaSubtask, count: usize },
    #[error("scenario {0} has no sibling scenario for its object")]
    MissingSibling(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Size,
    Height,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Size => "size",
            Dimension::Height => "height",
        }
    }

    /// Comparative words, greater first.
    pub fn comparatives(self) -> [&'static str; 2] {
        match self {
            Dimension::Size => ["larger", "smaller"],
            Dimension::Height => ["taller", "shorter"],
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "size" => Ok(Dimension::Size),
            "height" => Ok(Dimension::Height),
            other => Err(format!("unknown dimension {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectEntity {
    pub name: String,
    pub group_level: u8,
    pub dimension: Dimension,
}

impl ObjectEntity {
    pub fn new(name: &str, group_level: i64, dimension: Dimension) -> Result<Self, BenchmarkError> {
        let name = name.trim().to_lowercase();
        if name.is_empty() {
            return Err(BenchmarkError::EmptyField {
                line: 0,
                field: "name",
            });
        }
        if !(1..=5).contains(&group_level) {
            return Err(BenchmarkError::GroupLevel {
                name,
                level: group_level,
            });
        }
        Ok(ObjectEntity {
            name,
            group_level: group_level as u8,
            dimension,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleGold {
    AGreater,
    BGreater,
}

impl ScaleGold {
    pub fn as_str(self) -> &'static str {
        match self {
            ScaleGold::AGreater => "a_greater",
            ScaleGold::BGreater => "b_greater",
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            ScaleGold::AGreater => ScaleGold::BGreater,
            ScaleGold::BGreater => ScaleGold::AGreater,
        }
    }

    /// Index into a `[greater, smaller]` answer set.
    pub fn answer_index(self) -> usize {
        match self {
            ScaleGold::AGreater => 0,
            ScaleGold::BGreater => 1,
        }
    }
}

/// Ordered comparison between two objects from different groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleInstance {
    pub id: String,
    pub obj_a: String,
    pub obj_b: String,
    pub level_a: u8,
    pub level_b: u8,
    pub dimension: Dimension,
    pub gold: ScaleGold,
}

impl ScaleInstance {
    pub fn new(a: &ObjectEntity, b: &ObjectEntity, dimension: Dimension) -> Self {
        let gold = if a.group_level < b.group_level {
            ScaleGold::BGreater
        } else {
            ScaleGold::AGreater
        };
        ScaleInstance {
            id: format!("{}:{}|{}", dimension, a.name, b.name),
            obj_a: a.name.clone(),
            obj_b: b.name.clone(),
            level_a: a.group_level,
            level_b: b.group_level,
            dimension,
            gold,
        }
    }
}

/// Parses an objects file (`name<TAB>group<TAB>dimension`).
pub fn parse_objects(source: &Source) -> Result<Vec<ObjectEntity>, BenchmarkError> {
    let parse_err = |line, message: String| BenchmarkError::Parse {
        source_name: source.name.clone(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (line, cols) in tsv_rows(&source.text) {
        if cols.len() != 3 {
            return Err(parse_err(line, format!("expected 3 columns, found {}", cols.len())));
        }
        let level: i64 = cols[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad group level {:?}", cols[1])))?;
        let dimension: Dimension = cols[2].parse().map_err(|e| parse_err(line, e))?;
        let entity = ObjectEntity::new(cols[0], level, dimension).map_err(|e| match e {
            BenchmarkError::EmptyField { field, .. } => BenchmarkError::EmptyField { line, field },
            other => parse_err(line, other.to_string()),
        })?;
        out.push(entity);
    }
    Ok(out)
}

/// Every ordered cross-group pair, both orders.
///
/// Objects are visited by group level, keeping the listed order inside a
/// group; for each first object the second object runs over the same
/// sequence.
pub fn build_scale_dataset(
    objects: &[ObjectEntity],
    dimension: Dimension,
) -> Result<Vec<ScaleInstance>, BenchmarkError> {
    let mut seen = HashSet::new();
    for o in objects {
        if o.dimension != dimension {
            return Err(BenchmarkError::DimensionMismatch {
                name: o.name.clone(),
                found: o.dimension,
                expected: dimension,
            });
        }
        if !(1..=5).contains(&o.group_level) {
            return Err(BenchmarkError::GroupLevel {
                name: o.name.clone(),
                level: o.group_level as i64,
            });
        }
        if !seen.insert(o.name.as_str()) {
            return Err(BenchmarkError::DuplicateObject(o.name.clone()));
        }
    }
    let groups: HashSet<u8> = objects.iter().map(|o| o.group_level).collect();
    if groups.len() < 2 {
        return Err(BenchmarkError::TooFewGroups(groups.len()));
    }

    let mut ordered: Vec<&ObjectEntity> = objects.iter().collect();
    ordered.sort_by_key(|o| o.group_level); // stable: listed order within a group

    let mut out = Vec::new();
    for a in &ordered {
        for b in &ordered {
            if a.group_level != b.group_level {
                out.push(ScaleInstance::new(a, b, dimension));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioRow {
    pub line: usize,
    pub person: String,
    pub object: String,
    pub action: String,
    pub relation: String,
}

pub fn parse_scenario_rows(source: &Source) -> Result<Vec<ScenarioRow>, BenchmarkError> {
    let mut out = Vec::new();
    for (line, cols) in tsv_rows(&source.text) {
        if cols.len() != 4 {
            return Err(BenchmarkError::Parse {
                source_name: source.name.clone(),
                line,
                message: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        out.push(ScenarioRow {
            line,
            person: cols[0].to_string(),
            object: cols[1].to_string(),
            action: cols[2].to_string(),
            relation: cols[3].to_string(),
        });
    }
    Ok(out)
}

/// A person performing an action on an object, with the most likely
/// relation of the person to the object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionScenario {
    pub id: String,
    pub person: String,
    pub object: String,
    pub action: String,
    pub relation: SpatialRelation,
}

impl PositionScenario {
    pub fn gold(&self) -> SpatialRelation {
        self.relation
    }
}

/// Returns the first stop-listed preposition among the action's tokens.
pub fn find_preposition(action: &str) -> Option<String> {
    tokenize(action)
        .into_iter()
        .find(|t| PREPOSITION_STOP_LIST.contains(&t.as_str()))
}

pub fn build_position_dataset(rows: &[ScenarioRow]) -> Result<Vec<PositionScenario>, BenchmarkError> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        for (field, value) in [
            ("person", &row.person),
            ("object", &row.object),
            ("action", &row.action),
        ] {
            if value.trim().is_empty() {
                return Err(BenchmarkError::EmptyField {
                    line: row.line,
                    field,
                });
            }
        }
        if let Some(token) = find_preposition(&row.action) {
            return Err(BenchmarkError::PrepositionInAction {
                line: row.line,
                action: row.action.clone(),
                token,
            });
        }
        let relation: SpatialRelation = row.relation.parse().map_err(|e: String| BenchmarkError::Parse {
            source_name: "scenarios".into(),
            line: row.line,
            message: e,
        })?;
        let object = row.object.trim().to_lowercase();
        out.push(PositionScenario {
            id: format!("position:{}:{}", object, relation),
            person: row.person.trim().to_lowercase(),
            object,
            action: row.action.trim().to_string(),
            relation,
        });
    }

    let mut by_object: BTreeMap<&str, Vec<SpatialRelation>> = BTreeMap::new();
    for s in &out {
        by_object.entry(s.object.as_str()).or_default().push(s.relation);
    }
    for (object, relations) in &by_object {
        if relations.len() != 2 {
            return Err(BenchmarkError::ActionCount {
                object: object.to_string(),
                count: relations.len(),
            });
        }
        if relations[0] == relations[1] {
            return Err(BenchmarkError::DuplicateRelation {
                object: object.to_string(),
                relation: relations[0],
            });
        }
    }
    Ok(out)
}

/// Base noun -> subterms, each list in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtermLexicon {
    pub entries: BTreeMap<String, Vec<String>>,
}

impl SubtermLexicon {
    /// Adds a subterm. Identity substitutions and repeats are ignored.
    pub fn insert(&mut self, base: &str, subterm: &str) -> bool {
        let base = base.trim().to_lowercase();
        let subterm = subterm.trim().to_lowercase();
        if base.is_empty() || subterm.is_empty() || base == subterm {
            return false;
        }
        let list = self.entries.entry(base).or_default();
        if list.contains(&subterm) {
            return false;
        }
        list.push(subterm);
        true
    }

    pub fn subterms(&self, base: &str) -> Option<&[String]> {
        self.entries
            .get(&base.trim().to_lowercase())
            .map(Vec::as_slice)
            .filter(|l| !l.is_empty())
    }

    pub fn parse(source: &Source) -> Result<Self, BenchmarkError> {
        let mut lex = SubtermLexicon::default();
        for (line, cols) in tsv_rows(&source.text) {
            if cols.len() != 2 {
                return Err(BenchmarkError::Parse {
                    source_name: source.name.clone(),
                    line,
                    message: format!("expected 2 columns, found {}", cols.len()),
                });
            }
            if !lex.insert(cols[0], cols[1]) && cols[0].eq_ignore_ascii_case(cols[1]) {
                log::warn!("{}:{line}: identity subterm {:?} ignored", source.name, cols[1]);
            }
        }
        Ok(lex)
    }
}

/// Answers whether a phrase occurs in a reference corpus.
pub trait OccurrenceOracle {
    fn occurs(&self, phrase: &str) -> Result<bool, String>;
}

/// Case-insensitive contiguous-token containment over a line-segmented
/// corpus. Matches never cross a line boundary.
#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    tokens: Vec<String>,
    starts: HashMap<String, Vec<usize>>,
}

impl CorpusIndex {
    pub fn from_text(text: &str) -> Self {
        let mut tokens = Vec::new();
        for line in text.lines() {
            let toks = tokenize(line);
            if toks.is_empty() {
                continue;
            }
            tokens.extend(toks);
            tokens.push(String::new()); // segment boundary; never equals a token
        }
        let mut starts: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if !t.is_empty() {
                starts.entry(t.clone()).or_default().push(i);
            }
        }
        CorpusIndex { tokens, starts }
    }

    pub fn from_file(path: &std::path::Path) -> std::io::Result<Self> {
        Ok(Self::from_text(&std::fs::read_to_string(path)?))
    }

    pub fn contains_tokens(&self, phrase: &[String]) -> bool {
        let Some(first) = phrase.first() else {
            return false;
        };
        let Some(positions) = self.starts.get(first) else {
            return false;
        };
        positions.iter().any(|&p| {
            self.tokens
                .get(p..p + phrase.len())
                .is_some_and(|w| w == phrase)
        })
    }
}

impl OccurrenceOracle for CorpusIndex {
    fn occurs(&self, phrase: &str) -> Result<bool, String> {
        Ok(self.contains_tokens(&tokenize(phrase)))
    }
}

/// A positional scenario with the person and/or object replaced by a
/// subterm. The relation is inherited from the base scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralizedScenario {
    pub id: String,
    pub base_id: String,
    pub base_person: String,
    pub base_object: String,
    pub person: String,
    pub object: String,
    pub action: String,
    pub relation: SpatialRelation,
}

impl GeneralizedScenario {
    /// The phrase checked against the reference corpus, e.g.
    /// `"enchantress lights the sparkler"`.
    pub fn phrase(&self) -> String {
        format!("{} {}", self.person, self.action)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub scenarios_in: usize,
    pub variants_considered: usize,
    pub variants_emitted: usize,
    pub filtered_by_corpus: usize,
    pub skipped: Vec<SkippedScenario>,
    /// Emitted variant count per base scenario id.
    pub per_scenario: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedScenario {
    pub scenario_id: String,
    pub reason: String,
}

/// Replaces the token run `from` with `to` inside `action`.
fn substitute_object(action: &str, from: &str, to: &str) -> Option<String> {
    let words: Vec<&str> = action.split_whitespace().collect();
    let lowered: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
    let needle: Vec<String> = from.split_whitespace().map(str::to_lowercase).collect();
    let pos = text::contains_token_run(&lowered, &needle)?;
    let mut out: Vec<&str> = words[..pos].to_vec();
    out.push(to);
    out.extend_from_slice(&words[pos + needle.len()..]);
    Some(out.join(" "))
}

pub fn build_generalized_dataset(
    scenarios: &[PositionScenario],
    lexicon: &SubtermLexicon,
    oracle: &dyn OccurrenceOracle,
) -> Result<(Vec<GeneralizedScenario>, GeneralizationReport), BenchmarkError> {
    let mut report = GeneralizationReport {
        scenarios_in: scenarios.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for s in scenarios {
        let skip = |reason: String| SkippedScenario {
            scenario_id: s.id.clone(),
            reason,
        };
        let Some(person_subs) = lexicon.subterms(&s.person) else {
            report.skipped.push(skip(format!("no lexicon entry for person {:?}", s.person)));
            continue;
        };
        let Some(object_subs) = lexicon.subterms(&s.object) else {
            report.skipped.push(skip(format!("no lexicon entry for object {:?}", s.object)));
            continue;
        };
        if substitute_object(&s.action, &s.object, &s.object).is_none() {
            report.skipped.push(skip(format!(
                "action {:?} does not mention object {:?}",
                s.action, s.object
            )));
            continue;
        }

        let persons = std::iter::once(&s.person).chain(person_subs.iter());
        let mut emitted = 0;
        for person in persons {
            let objects = std::iter::once(&s.object).chain(object_subs.iter());
            for object in objects {
                if person == &s.person && object == &s.object {
                    continue;
                }
                report.variants_considered += 1;
                let action = substitute_object(&s.action, &s.object, object)
                    .expect("object mention checked above");
                let variant = GeneralizedScenario {
                    id: format!("{}~{}~{}", s.id, person, object),
                    base_id: s.id.clone(),
                    base_person: s.person.clone(),
                    base_object: s.object.clone(),
                    person: person.clone(),
                    object: object.clone(),
                    action,
                    relation: s.relation,
                };
                let present = oracle
                    .occurs(&variant.phrase())
                    .map_err(|message| BenchmarkError::OracleFailure {
                        scenario_id: s.id.clone(),
                        message,
                    })?;
                if present {
                    report.filtered_by_corpus += 1;
                } else {
                    emitted += 1;
                    out.push(variant);
                }
            }
        }
        report.variants_emitted += emitted;
        report.per_scenario.insert(s.id.clone(), emitted);
    }
    Ok((out, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaSubtask {
    Size,
    Height,
    Position,
}

impl fmt::Display for QaSubtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QaSubtask::Size => "size",
            QaSubtask::Height => "height",
            QaSubtask::Position => "position",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub fn as_str(self) -> &'static str {
        match self {
            YesNo::Yes => "yes",
            YesNo::No => "no",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaInstance {
    pub id: String,
    pub subtask: QaSubtask,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub context: Option<String>,
    pub question: String,
    pub gold: YesNo,
    /// Id of the scale instance or positional scenario the question came from.
    pub source: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QaDataset {
    pub size: Vec<QaInstance>,
    pub height: Vec<QaInstance>,
    pub position: Vec<QaInstance>,
}

impl QaDataset {
    pub fn subtask(&self, t: QaSubtask) -> &[QaInstance] {
        match t {
            QaSubtask::Size => &self.size,
            QaSubtask::Height => &self.height,
            QaSubtask::Position => &self.position,
        }
    }
}

fn scale_questions(
    instances: &[&ScaleInstance],
    subtask: QaSubtask,
) -> Result<Vec<QaInstance>, BenchmarkError> {
    if !instances.len().is_multiple_of(2) {
        return Err(BenchmarkError::OddInstanceCount {
            subtask,
            count: instances.len(),
        });
    }
    Ok(instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            // even index -> yes, odd -> no; the comparative follows from that
            let target = if i % 2 == 0 { YesNo::Yes } else { YesNo::No };
            let [greater, smaller] = inst.dimension.comparatives();
            let truthful = match inst.gold {
                ScaleGold::AGreater => greater,
                ScaleGold::BGreater => smaller,
            };
            let word = match (target, truthful == greater) {
                (YesNo::Yes, _) => truthful,
                (YesNo::No, true) => smaller,
                (YesNo::No, false) => greater,
            };
            QaInstance {
                id: format!("qa:{}:{word}", inst.id),
                subtask,
                context: None,
                question: format!("Is {} {} than {}?", inst.obj_a, word, inst.obj_b),
                gold: target,
                source: inst.id.clone(),
            }
        })
        .collect())
}

fn position_question(s: &PositionScenario, relation: SpatialRelation, gold: YesNo) -> QaInstance {
    QaInstance {
        id: format!("qa:{}:{}", s.id, relation),
        subtask: QaSubtask::Position,
        context: Some(format!(
            "{} {}.",
            text::capitalize_first(&text::with_article(&s.person)),
            s.action
        )),
        question: format!("Is the {} {} the {}?", s.person, relation, s.object),
        gold,
        source: s.id.clone(),
    }
}

/// Yes/no questions for the three subtasks.
///
/// Scale instances are split by dimension; the i-th instance of a subtask
/// targets `yes` for even i and `no` for odd i, choosing the comparative
/// that produces that answer. Each scenario yields a `yes` question about
/// its own relation and a `no` question about its sibling's relation.
pub fn build_qa_dataset(
    scale_instances: &[ScaleInstance],
    position_scenarios: &[PositionScenario],
) -> Result<QaDataset, BenchmarkError> {
    let size: Vec<&ScaleInstance> = scale_instances
        .iter()
        .filter(|s| s.dimension == Dimension::Size)
        .collect();
    let height: Vec<&ScaleInstance> = scale_instances
        .iter()
        .filter(|s| s.dimension == Dimension::Height)
        .collect();

    let mut position = Vec::with_capacity(position_scenarios.len() * 2);
    for s in position_scenarios {
        let sibling = position_scenarios
            .iter()
            .find(|o| o.object == s.object && o.id != s.id && o.relation != s.relation)
            .ok_or_else(|| BenchmarkError::MissingSibling(s.id.clone()))?;
        position.push(position_question(s, s.relation, YesNo::Yes));
        position.push(position_question(s, sibling.relation, YesNo::No));
    }

    Ok(QaDataset {
        size: scale_questions(&size, QaSubtask::Size)?,
        height: scale_questions(&height, QaSubtask::Height)?,
        position,
    })
}

/// One JSON object per line, `\n`-terminated.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("dataset types serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;

    fn objs(groups: &[&[&str]], dim: Dimension) -> Vec<ObjectEntity> {
        groups
            .iter()
            .enumerate()
            .flat_map(|(g, names)| {
                names
                    .iter()
                    .map(move |n| ObjectEntity::new(n, g as i64 + 1, dim).unwrap())
            })
            .collect()
    }

    fn bundled_objects(file: &str) -> Vec<ObjectEntity> {
        parse_objects(&data::load(None, file).unwrap()).unwrap()
    }

    #[test]
    fn full_size_table_gives_500_balanced() {
        let ds = build_scale_dataset(&bundled_objects(data::OBJECTS_SIZE_FILE), Dimension::Size).unwrap();
        assert_eq!(ds.len(), 500);
        let a = ds.iter().filter(|i| i.gold == ScaleGold::AGreater).count();
        assert_eq!(a, 250);
        assert_eq!(ds[0].obj_a, "ant");
        assert_eq!(ds[0].obj_b, "bird");
        assert_eq!(ds[0].gold, ScaleGold::BGreater);
    }

    #[test]
    fn minimal_two_groups() {
        let ds = build_scale_dataset(&objs(&[&["ant"], &["bird"]], Dimension::Size), Dimension::Size).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!((ds[0].obj_a.as_str(), ds[0].gold), ("ant", ScaleGold::BGreater));
        assert_eq!((ds[1].obj_a.as_str(), ds[1].gold), ("bird", ScaleGold::AGreater));
    }

    #[test]
    fn three_groups_of_two_is_24() {
        let o = objs(&[&["a1", "a2"], &["b1", "b2"], &["c1", "c2"]], Dimension::Height);
        let ds = build_scale_dataset(&o, Dimension::Height).unwrap();
        // brute force: ordered pairs of distinct objects from different groups
        let mut expected = Vec::new();
        for x in &o {
            for y in &o {
                if x.group_level != y.group_level {
                    expected.push((x.name.clone(), y.name.clone()));
                }
            }
        }
        assert_eq!(expected.len(), 24);
        let got: Vec<_> = ds.iter().map(|i| (i.obj_a.clone(), i.obj_b.clone())).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn scale_errors() {
        let dup = objs(&[&["ant"], &["ant"]], Dimension::Size);
        assert!(matches!(
            build_scale_dataset(&dup, Dimension::Size),
            Err(BenchmarkError::DuplicateObject(n)) if n == "ant"
        ));
        let one = objs(&[&["ant", "coin"]], Dimension::Size);
        assert!(matches!(
            build_scale_dataset(&one, Dimension::Size),
            Err(BenchmarkError::TooFewGroups(1))
        ));
        let o = objs(&[&["ant"], &["bird"]], Dimension::Size);
        assert!(matches!(
            build_scale_dataset(&o, Dimension::Height),
            Err(BenchmarkError::DimensionMismatch { .. })
        ));
        assert!(ObjectEntity::new("x", 6, Dimension::Size).is_err());
        assert!(ObjectEntity::new(" ", 1, Dimension::Size).is_err());
    }

    fn row(person: &str, object: &str, action: &str, relation: &str) -> ScenarioRow {
        ScenarioRow {
            line: 1,
            person: person.into(),
            object: object.into(),
            action: action.into(),
            relation: relation.into(),
        }
    }

    #[test]
    fn bundled_scenarios_224() {
        let rows = parse_scenario_rows(&data::load(None, data::SCENARIOS_FILE).unwrap()).unwrap();
        let ds = build_position_dataset(&rows).unwrap();
        assert_eq!(ds.len(), 224);
        let labels: HashSet<_> = ds.iter().map(|s| s.relation).collect();
        assert_eq!(labels.len(), 4);
    }

    #[test]
    fn car_pair_is_valid() {
        let ds = build_position_dataset(&[
            row("man", "car", "washes the car", "beside"),
            row("man", "car", "drives the car", "inside"),
        ])
        .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[1].relation, SpatialRelation::Inside);
    }

    #[test]
    fn preposition_rejected() {
        let err = build_position_dataset(&[
            row("man", "chair", "sit on the chair", "above"),
            row("man", "chair", "moves the chair", "beside"),
        ])
        .unwrap_err();
        assert!(matches!(err, BenchmarkError::PrepositionInAction { ref token, .. } if token == "on"));
    }

    #[test]
    fn action_count_and_duplicate_relation() {
        let err = build_position_dataset(&[row("man", "car", "washes the car", "beside")]).unwrap_err();
        assert!(matches!(err, BenchmarkError::ActionCount { count: 1, .. }));
        let err = build_position_dataset(&[
            row("man", "car", "washes the car", "beside"),
            row("man", "car", "polishes the car", "beside"),
        ])
        .unwrap_err();
        assert!(matches!(err, BenchmarkError::DuplicateRelation { .. }));
    }

    struct Never;
    impl OccurrenceOracle for Never {
        fn occurs(&self, _: &str) -> Result<bool, String> {
            Ok(false)
        }
    }

    struct Broken;
    impl OccurrenceOracle for Broken {
        fn occurs(&self, _: &str) -> Result<bool, String> {
            Err("corpus unavailable".into())
        }
    }

    fn sparkler() -> Vec<PositionScenario> {
        build_position_dataset(&[
            row("woman", "sparkler", "lights the sparkler", "beside"),
            row("woman", "sparkler", "raises the sparkler", "below"),
        ])
        .unwrap()
    }

    #[test]
    fn enchantress_variant() {
        let mut lex = SubtermLexicon::default();
        lex.insert("woman", "enchantress");
        lex.insert("sparkler", "roman candle");
        let (out, report) = build_generalized_dataset(&sparkler()[..1], &lex, &Never).unwrap();
        assert_eq!(out[0].phrase(), "woman lights the roman candle");
        assert_eq!(out[1].phrase(), "enchantress lights the sparkler");
        assert_eq!(out[2].phrase(), "enchantress lights the roman candle");
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|g| g.relation == SpatialRelation::Beside));
        assert_eq!(report.variants_emitted, 3);
    }

    #[test]
    fn identity_subterm_excluded() {
        let mut lex = SubtermLexicon::default();
        assert!(!lex.insert("woman", "woman"));
        assert!(lex.subterms("woman").is_none());
    }

    #[test]
    fn missing_entry_skips_and_oracle_failure_aborts() {
        let mut lex = SubtermLexicon::default();
        lex.insert("woman", "enchantress");
        let (out, report) = build_generalized_dataset(&sparkler(), &lex, &Never).unwrap();
        assert!(out.is_empty());
        assert_eq!(report.skipped.len(), 2);
        lex.insert("sparkler", "roman candle");
        let err = build_generalized_dataset(&sparkler(), &lex, &Broken).unwrap_err();
        assert!(matches!(err, BenchmarkError::OracleFailure { ref scenario_id, .. } if scenario_id == "position:sparkler:beside"));
    }

    #[test]
    fn corpus_index_matches_within_lines_only() {
        let idx = CorpusIndex::from_text("The Wizard rides the horse.\nhorse races today\n");
        assert!(idx.occurs("wizard rides the horse").unwrap());
        assert!(idx.occurs("WIZARD RIDES").unwrap());
        assert!(!idx.occurs("the horse horse races").unwrap());
        assert!(!idx.occurs("").unwrap());
    }

    #[test]
    fn qa_counts_and_balance() {
        let size = build_scale_dataset(&bundled_objects(data::OBJECTS_SIZE_FILE), Dimension::Size).unwrap();
        let height =
            build_scale_dataset(&bundled_objects(data::OBJECTS_HEIGHT_FILE), Dimension::Height).unwrap();
        let rows = parse_scenario_rows(&data::load(None, data::SCENARIOS_FILE).unwrap()).unwrap();
        let pos = build_position_dataset(&rows).unwrap();
        let all: Vec<_> = size.into_iter().chain(height).collect();
        let qa = build_qa_dataset(&all, &pos).unwrap();
        assert_eq!((qa.size.len(), qa.height.len(), qa.position.len()), (500, 500, 448));
        for t in [QaSubtask::Size, QaSubtask::Height, QaSubtask::Position] {
            let yes = qa.subtask(t).iter().filter(|q| q.gold == YesNo::Yes).count();
            assert_eq!(yes * 2, qa.subtask(t).len(), "{t}");
        }
    }

    #[test]
    fn qa_position_wording() {
        let pos = build_position_dataset(&[
            row("man", "car", "washes the car", "beside"),
            row("man", "car", "drives the car", "inside"),
        ])
        .unwrap();
        let qa = build_qa_dataset(&[], &pos).unwrap();
        let q = &qa.position[0];
        assert_eq!(q.context.as_deref(), Some("A man washes the car."));
        assert_eq!(q.question, "Is the man beside the car?");
        assert_eq!(q.gold, YesNo::Yes);
        assert_eq!(qa.position[1].question, "Is the man inside the car?");
        assert_eq!(qa.position[1].gold, YesNo::No);
    }

    #[test]
    fn qa_scale_wording_matches_gold() {
        let o = objs(&[&["ant"], &["bird"]], Dimension::Size);
        let ds = build_scale_dataset(&o, Dimension::Size).unwrap();
        let qa = build_qa_dataset(&ds, &[]).unwrap();
        assert_eq!(qa.size[0].question, "Is ant smaller than bird?");
        assert_eq!(qa.size[0].gold, YesNo::Yes);
        assert_eq!(qa.size[1].question, "Is bird smaller than ant?");
        assert_eq!(qa.size[1].gold, YesNo::No);
    }

    #[test]
    fn qa_odd_count_rejected() {
        let o = objs(&[&["ant"], &["bird"]], Dimension::Size);
        let ds = build_scale_dataset(&o, Dimension::Size).unwrap();
        let err = build_qa_dataset(&ds[..1], &[]).unwrap_err();
        assert!(matches!(err, BenchmarkError::OddInstanceCount { count: 1, .. }));
    }

    #[test]
    fn jsonl_field_names() {
        let o = objs(&[&["ant"], &["bird"]], Dimension::Size);
        let ds = build_scale_dataset(&o, Dimension::Size).unwrap();
        let line = to_jsonl(&ds[..1]);
        for key in ["\"obj_a\"", "\"obj_b\"", "\"dimension\"", "\"gold\""] {
            assert!(line.contains(key), "{line}");
        }
        let back: Vec<ScaleInstance> = from_jsonl(&line).unwrap();
        assert_eq!(back, ds[..1]);
    }
}
