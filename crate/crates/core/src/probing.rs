//! Adapter file-exchange contract and the probe runners built on it.
//!
//! An adapter is a child process invoked as
//! `<cmd> --requests <path> --responses <path>`. Requests and responses are
//! JSONL; a response file may open with a header object (no `id`) that
//! declares the adapter's scoring mode.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::benchmark::{QaInstance, YesNo};
use crate::geometry::{DepthMap, DepthSidecar, DetectionRecord, GeometryError};
use crate::metrics::HumanAnnotationSet;
use crate::prompts::{render_ism_prompt, AnswerSet, CandidatePool, SlotSource};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("adapter protocol violation for {id}: {message}")]
    Protocol { id: String, message: String },
    #[error("response {id} has no score for answer {answer:?}")]
    MissingScore { id: String, answer: String },
    #[error("response {0} is not ok")]
    NotOk(String),
    #[error("answer {answer:?} for {id} is outside the allowed answers")]
    UnexpectedAnswer { id: String, answer: String },
    #[error("duplicate request id {id} (instance {instance})")]
    DuplicateId { id: String, instance: String },
    #[error("no adapter command configured and no cached responses at {0}")]
    NoAdapter(PathBuf),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("{0}")]
    Io(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ProbeError {
    ProbeError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterMode {
    MaskedScore,
    Synthesize,
    Vqa,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub id: String,
    pub mode: AdapterMode,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl AdapterRequest {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| {
            Err(ProbeError::Protocol {
                id: self.id.clone(),
                message: m.to_string(),
            })
        };
        match (self.mode, &self.answers) {
            (AdapterMode::Synthesize, Some(_)) => bad("synthesize request carries answers"),
            (AdapterMode::MaskedScore | AdapterMode::Vqa, None) => bad("request lacks answers"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    pub status: ResponseStatus,
}

impl AdapterResponse {
    pub fn failed(id: &str) -> Self {
        AdapterResponse {
            id: id.to_string(),
            scores: None,
            image_path: None,
            status: ResponseStatus::Failed,
        }
    }
}

/// How an adapter turns a multi-token answer into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    SingleToken,
    MeanLogprob,
    SumLogprob,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResponseHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring_mode: Option<ScoringMode>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Model,
    Human,
    Imputed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub label: Option<String>,
    pub provenance: Provenance,
    pub recognized: bool,
    /// The top score was shared and the lowest answer index won.
    #[serde(default)]
    pub tie: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_index: Option<usize>,
}

impl Prediction {
    pub fn model(instance_id: &str, label: &str) -> Self {
        Prediction {
            instance_id: instance_id.to_string(),
            label: Some(label.to_string()),
            provenance: Provenance::Model,
            recognized: true,
            tie: false,
            answer_index: None,
        }
    }

    pub fn unrecognized(instance_id: &str, provenance: Provenance) -> Self {
        Prediction {
            instance_id: instance_id.to_string(),
            label: None,
            provenance,
            recognized: false,
            tie: false,
            answer_index: None,
        }
    }
}

/// Index of the top-scoring answer and whether it was tied.
pub fn argmax_answer(scores: &BTreeMap<String, f64>, answers: &AnswerSet, id: &str) -> Result<(usize, bool), ProbeError> {
    let mut best: Option<(usize, f64)> = None;
    let mut tie = false;
    for (i, a) in answers.answers.iter().enumerate() {
        let s = *scores.get(a).ok_or_else(|| ProbeError::MissingScore {
            id: id.to_string(),
            answer: a.clone(),
        })?;
        if !s.is_finite() {
            return Err(ProbeError::Protocol {
                id: id.to_string(),
                message: format!("non-finite score for {a:?}"),
            });
        }
        match best {
            None => best = Some((i, s)),
            Some((_, b)) if s > b => {
                best = Some((i, s));
                tie = false;
            }
            Some((_, b)) if s == b => tie = true,
            _ => {}
        }
    }
    let (i, _) = best.ok_or_else(|| ProbeError::Protocol {
        id: id.to_string(),
        message: "empty answer set".into(),
    })?;
    Ok((i, tie))
}

/// Argmax over the scored answers; exact ties go to the lowest answer index
/// and are flagged. The prediction carries `instance_id = response.id`.
pub fn decide_answer(response: &AdapterResponse, answers: &AnswerSet) -> Result<Prediction, ProbeError> {
    if response.status != ResponseStatus::Ok {
        return Err(ProbeError::NotOk(response.id.clone()));
    }
    let scores = response.scores.as_ref().ok_or_else(|| ProbeError::Protocol {
        id: response.id.clone(),
        message: "ok response without scores".into(),
    })?;
    let (i, tie) = argmax_answer(scores, answers, &response.id)?;
    let mut p = Prediction::model(&response.id, &answers.answers[i]);
    p.tie = tie;
    p.answer_index = Some(i);
    Ok(p)
}

/// First 16 hex digits of `sha256(dataset_ref NUL instance_key)`.
pub fn derive_request_id(dataset_ref: &str, instance_key: &str) -> String {
    let mut h = Sha256::new();
    h.update(dataset_ref.as_bytes());
    h.update([0u8]);
    h.update(instance_key.as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub instance_id: String,
    #[serde(flatten)]
    pub request: AdapterRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeManifest {
    pub dataset_ref: String,
    pub template_ref: String,
    pub requests: Vec<ManifestEntry>,
}

impl ProbeManifest {
    pub fn new(dataset_ref: &str, template_ref: &str) -> Self {
        ProbeManifest {
            dataset_ref: dataset_ref.to_string(),
            template_ref: template_ref.to_string(),
            requests: Vec::new(),
        }
    }

    pub fn push(&mut self, instance_id: &str, request: AdapterRequest) -> Result<(), ProbeError> {
        request.validate()?;
        if self.requests.iter().any(|e| e.request.id == request.id) {
            return Err(ProbeError::DuplicateId {
                id: request.id,
                instance: instance_id.to_string(),
            });
        }
        self.requests.push(ManifestEntry {
            instance_id: instance_id.to_string(),
            request,
        });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn requests_jsonl(&self) -> String {
        let reqs: Vec<&AdapterRequest> = self.requests.iter().map(|e| &e.request).collect();
        crate::benchmark::to_jsonl(&reqs)
    }

    pub fn load(path: &Path) -> Result<Self, ProbeError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }
}

/// Anything with a stable id that can be probed.
pub trait Identified {
    fn instance_id(&self) -> &str;
}

impl Identified for crate::benchmark::ScaleInstance {
    fn instance_id(&self) -> &str {
        &self.id
    }
}

impl Identified for crate::benchmark::PositionScenario {
    fn instance_id(&self) -> &str {
        &self.id
    }
}

impl Identified for crate::benchmark::GeneralizedScenario {
    fn instance_id(&self) -> &str {
        &self.id
    }
}

impl Identified for QaInstance {
    fn instance_id(&self) -> &str {
        &self.id
    }
}

/// Parses a response file. Returns the header (if any) and the responses in
/// file order.
pub fn parse_responses(text: &str, origin: &Path) -> Result<(Option<ResponseHeader>, Vec<AdapterResponse>), ProbeError> {
    let mut header = None;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| ProbeError::Artifact {
            path: origin.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        if value.get("id").is_none() {
            if header.is_some() || !out.is_empty() {
                return Err(ProbeError::Artifact {
                    path: origin.to_path_buf(),
                    message: format!("line {}: header must be the first line", i + 1),
                });
            }
            header = Some(serde_json::from_value(value).map_err(|e| ProbeError::Artifact {
                path: origin.to_path_buf(),
                message: format!("header: {e}"),
            })?);
            continue;
        }
        let id = value["id"].as_str().unwrap_or("?").to_string();
        let r: AdapterResponse = serde_json::from_value(value).map_err(|e| ProbeError::Protocol {
            id,
            message: e.to_string(),
        })?;
        out.push(r);
    }
    Ok((header, out))
}

/// Checks responses against their requests: every id known and unique, ok
/// masked/vqa responses score every requested answer with finite values,
/// ok synthesize responses name an image.
pub fn validate_responses(
    requests: &BTreeMap<&str, &AdapterRequest>,
    responses: &[AdapterResponse],
) -> Result<(), ProbeError> {
    let mut seen = BTreeSet::new();
    for r in responses {
        let violation = |m: String| ProbeError::Protocol {
            id: r.id.clone(),
            message: m,
        };
        let req = requests
            .get(r.id.as_str())
            .ok_or_else(|| violation("unknown request id".into()))?;
        if !seen.insert(r.id.as_str()) {
            return Err(violation("duplicate response".into()));
        }
        if r.status != ResponseStatus::Ok {
            continue;
        }
        match req.mode {
            AdapterMode::Synthesize => {
                if r.image_path.is_none() {
                    return Err(violation("ok synthesize response without image_path".into()));
                }
            }
            AdapterMode::MaskedScore | AdapterMode::Vqa => {
                let scores = r.scores.as_ref().ok_or_else(|| violation("ok response without scores".into()))?;
                for a in req.answers.iter().flatten() {
                    match scores.get(a) {
                        None => {
                            return Err(ProbeError::MissingScore {
                                id: r.id.clone(),
                                answer: a.clone(),
                            })
                        }
                        Some(s) if !s.is_finite() => return Err(violation(format!("non-finite score for {a:?}"))),
                        _ => {}
                    }
                }
            }
        }
    }
    Ok(())
}

/// Result of one adapter exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterRun {
    pub header: Option<ResponseHeader>,
    /// One response per manifest request; missing ones are `failed`.
    pub responses: BTreeMap<String, AdapterResponse>,
    pub from_cache: bool,
    pub invocations: usize,
    pub manifest_hash: String,
}

impl AdapterRun {
    pub fn scoring_mode(&self) -> Option<ScoringMode> {
        self.header.as_ref().and_then(|h| h.scoring_mode)
    }
}

/// Runs adapter processes over manifests, with a response cache keyed by
/// manifest hash.
#[derive(Debug, Clone, Default)]
pub struct AdapterClient {
    pub command: Vec<String>,
    pub cache_root: Option<PathBuf>,
    pub shards: usize,
}

impl AdapterClient {
    pub fn new(command: Vec<String>, cache_root: Option<PathBuf>) -> Self {
        AdapterClient {
            command,
            cache_root,
            shards: 1,
        }
    }

    /// Splits a shell-style command line.
    pub fn parse_command(line: &str) -> Option<Vec<String>> {
        shlex::split(line).filter(|v| !v.is_empty())
    }

    pub fn with_shards(mut self, shards: usize) -> Self {
        self.shards = shards.max(1);
        self
    }

    fn cache_dir(&self, hash: &str) -> Option<PathBuf> {
        self.cache_root.as_ref().map(|r| r.join(hash))
    }

    /// Responses for every request of `manifest`, replayed from the cache
    /// when present.
    pub fn run(&self, manifest: &ProbeManifest) -> Result<AdapterRun, ProbeError> {
        let hash = manifest.hash();
        let requests: BTreeMap<&str, &AdapterRequest> = manifest
            .requests
            .iter()
            .map(|e| (e.request.id.as_str(), &e.request))
            .collect();
        let cache_dir = self.cache_dir(&hash);

        if let Some(dir) = &cache_dir {
            let cached = dir.join("responses.jsonl");
            if cached.is_file() {
                let text = fs::read_to_string(&cached).map_err(|e| io_err(&cached, e))?;
                let (header, responses) = parse_responses(&text, &cached)?;
                validate_responses(&requests, &responses)?;
                log::info!("replaying {} responses from {}", responses.len(), cached.display());
                return Ok(complete(manifest, header, responses, true, 0, hash));
            }
        }
        if manifest.requests.is_empty() {
            return Ok(complete(manifest, None, Vec::new(), false, 0, hash));
        }
        if self.command.is_empty() {
            return Err(ProbeError::NoAdapter(cache_dir.unwrap_or_default()));
        }

        let scratch;
        let work_dir = match &cache_dir {
            Some(d) => d.clone(),
            None => {
                scratch = tempfile::tempdir().map_err(|e| ProbeError::Io(e.to_string()))?;
                scratch.path().to_path_buf()
            }
        };
        fs::create_dir_all(&work_dir).map_err(|e| io_err(&work_dir, e))?;
        let manifest_path = work_dir.join("manifest.json");
        fs::write(&manifest_path, manifest.to_json()).map_err(|e| io_err(&manifest_path, e))?;

        let entries: Vec<&AdapterRequest> = manifest.requests.iter().map(|e| &e.request).collect();
        let n_shards = self.shards.min(entries.len()).max(1);
        let chunk = entries.len().div_ceil(n_shards);
        let shards: Vec<&[&AdapterRequest]> = entries.chunks(chunk).collect();

        let outcomes: Vec<ShardOutcome> = std::thread::scope(|scope| {
            let handles: Vec<_> = shards
                .iter()
                .enumerate()
                .map(|(i, reqs)| {
                    let work_dir = &work_dir;
                    scope.spawn(move || self.run_shard(work_dir, i, reqs))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| ShardOutcome::Failed("shard thread panicked".into())))
                .collect()
        });

        let mut header: Option<ResponseHeader> = None;
        let mut merged = Vec::new();
        let mut invocations = 0;
        let mut all_ok = true;
        for (i, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                ShardOutcome::Done {
                    header: h,
                    responses,
                    attempts,
                } => {
                    invocations += attempts;
                    if let Some(h) = h {
                        if let Some(prev) = &header {
                            if prev.scoring_mode != h.scoring_mode {
                                return Err(ProbeError::Protocol {
                                    id: format!("shard {i}"),
                                    message: "scoring mode differs between shards".into(),
                                });
                            }
                        } else {
                            header = Some(h);
                        }
                    }
                    merged.extend(responses);
                }
                ShardOutcome::Failed(msg) => {
                    invocations += 2;
                    all_ok = false;
                    log::warn!("shard {i} failed twice ({msg}); its requests are marked failed");
                }
                ShardOutcome::Violation(e) => return Err(e),
            }
        }
        validate_responses(&requests, &merged)?;
        let run = complete(manifest, header, merged, false, invocations, hash);

        if let (Some(dir), true) = (&cache_dir, all_ok) {
            let mut text = String::new();
            if let Some(h) = &run.header {
                text.push_str(&serde_json::to_string(h).expect("header serializes"));
                text.push('\n');
            }
            let ordered: Vec<&AdapterResponse> = run.responses.values().collect();
            text.push_str(&crate::benchmark::to_jsonl(&ordered));
            let tmp = dir.join("responses.jsonl.tmp");
            let dst = dir.join("responses.jsonl");
            fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
            fs::rename(&tmp, &dst).map_err(|e| io_err(&dst, e))?;
        }
        Ok(run)
    }

    fn run_shard(&self, dir: &Path, index: usize, reqs: &[&AdapterRequest]) -> ShardOutcome {
        let req_path = dir.join(format!("shard-{index}.requests.jsonl"));
        let resp_path = dir.join(format!("shard-{index}.responses.jsonl"));
        if let Err(e) = fs::write(&req_path, crate::benchmark::to_jsonl(reqs)) {
            return ShardOutcome::Failed(format!("{}: {e}", req_path.display()));
        }
        let mut last = String::new();
        for attempt in 1..=2 {
            let _ = fs::remove_file(&resp_path);
            log::debug!("shard {index} attempt {attempt}: {} requests", reqs.len());
            let status = Command::new(&self.command[0])
                .args(&self.command[1..])
                .arg("--requests")
                .arg(&req_path)
                .arg("--responses")
                .arg(&resp_path)
                .status();
            match status {
                Ok(s) if s.success() => match fs::read_to_string(&resp_path) {
                    Ok(text) => {
                        return match parse_responses(&text, &resp_path) {
                            Ok((header, responses)) => {
                                for r in &responses {
                                    log::debug!("response {} status {:?}", r.id, r.status);
                                }
                                ShardOutcome::Done {
                                    header,
                                    responses,
                                    attempts: attempt,
                                }
                            }
                            Err(e) => ShardOutcome::Violation(e),
                        }
                    }
                    Err(e) => last = format!("{}: {e}", resp_path.display()),
                },
                Ok(s) => last = format!("adapter exited with {s}"),
                Err(e) => last = format!("cannot start {:?}: {e}", self.command[0]),
            }
            log::warn!("shard {index} attempt {attempt} failed: {last}");
        }
        ShardOutcome::Failed(last)
    }
}

enum ShardOutcome {
    Done {
        header: Option<ResponseHeader>,
        responses: Vec<AdapterResponse>,
        attempts: usize,
    },
    Failed(String),
    Violation(ProbeError),
}

fn complete(
    manifest: &ProbeManifest,
    header: Option<ResponseHeader>,
    responses: Vec<AdapterResponse>,
    from_cache: bool,
    invocations: usize,
    manifest_hash: String,
) -> AdapterRun {
    let mut by_id: BTreeMap<String, AdapterResponse> = responses.into_iter().map(|r| (r.id.clone(), r)).collect();
    for e in &manifest.requests {
        by_id
            .entry(e.request.id.clone())
            .or_insert_with(|| AdapterResponse::failed(&e.request.id));
    }
    AdapterRun {
        header,
        responses: by_id,
        from_cache,
        invocations,
        manifest_hash,
    }
}

/// Answer words of all sets in the pool, in first-seen order.
pub fn pool_answer_union(pool: &CandidatePool) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for set in &pool.answer_sets {
        for a in &set.answers {
            if !out.contains(a) {
                out.push(a.clone());
            }
        }
    }
    out
}

/// Adapter scores of every instance under every prompt of a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolScores {
    /// `scores[p][i]`: scores for instance `i` under prompt `p`, `None` when
    /// the adapter failed.
    pub scores: Vec<Vec<Option<BTreeMap<String, f64>>>>,
    pub run: AdapterRun,
}

impl PoolScores {
    /// Answer index under answer set `a`; `None` when unscored.
    pub fn decide(&self, pool: &CandidatePool, p: usize, a: usize, i: usize) -> Result<Option<(usize, bool)>, ProbeError> {
        match &self.scores[p][i] {
            None => Ok(None),
            Some(s) => argmax_answer(s, &pool.answer_sets[a], "").map(Some),
        }
    }
}

fn masked_manifest<T: SlotSource + Identified>(
    instances: &[T],
    pool: &CandidatePool,
    dataset_ref: &str,
) -> Result<ProbeManifest, ProbeError> {
    let answers = pool_answer_union(pool);
    let template_ref = pool
        .prompts
        .iter()
        .map(|t| t.pattern.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let mut m = ProbeManifest::new(dataset_ref, &sha256_hex(template_ref.as_bytes()));
    for t in &pool.prompts {
        for inst in instances {
            let prompt = t.render(inst).map_err(|e| ProbeError::Protocol {
                id: inst.instance_id().to_string(),
                message: e.to_string(),
            })?;
            let key = format!("{}\u{1f}{}", inst.instance_id(), t.pattern);
            m.push(
                inst.instance_id(),
                AdapterRequest {
                    id: derive_request_id(dataset_ref, &key),
                    mode: AdapterMode::MaskedScore,
                    prompt,
                    answers: Some(answers.clone()),
                    image_ref: None,
                },
            )?;
        }
    }
    Ok(m)
}

/// Scores every (prompt, instance) of the pool in one adapter exchange.
/// Each request carries the union of all candidate answer words, so any
/// answer set can be decided from the same scores.
pub fn score_pool<T: SlotSource + Identified>(
    instances: &[T],
    pool: &CandidatePool,
    client: &AdapterClient,
    dataset_ref: &str,
) -> Result<PoolScores, ProbeError> {
    let manifest = masked_manifest(instances, pool, dataset_ref)?;
    let run = client.run(&manifest)?;
    let n = instances.len();
    let mut scores = vec![vec![None; n]; pool.prompts.len()];
    for (k, e) in manifest.requests.iter().enumerate() {
        let r = &run.responses[&e.request.id];
        if r.status == ResponseStatus::Ok {
            scores[k / n][k % n] = r.scores.clone();
        }
    }
    Ok(PoolScores { scores, run })
}

/// Masked probe with one template and answer set. Labels are reported in
/// terms of `canonical` (same arity as `answers`, matched by position).
pub fn predictions_from_pool(
    ids: &[&str],
    scores: &PoolScores,
    pool: &CandidatePool,
    p: usize,
    a: usize,
) -> Result<Vec<Prediction>, ProbeError> {
    let canonical = &pool.answer_sets[0];
    ids.iter()
        .enumerate()
        .map(|(i, id)| {
            Ok(match scores.decide(pool, p, a, i)? {
                None => Prediction::unrecognized(id, Provenance::Model),
                Some((k, tie)) => {
                    let mut pred = Prediction::model(id, &canonical.answers[k]);
                    pred.tie = tie;
                    pred.answer_index = Some(k);
                    pred
                }
            })
        })
        .collect()
}

/// One prediction per instance; failed responses give unrecognized
/// predictions.
pub fn run_masked_probe<T: SlotSource + Identified>(
    instances: &[T],
    template: &crate::prompts::PromptTemplate,
    answers: &AnswerSet,
    client: &AdapterClient,
    dataset_ref: &str,
) -> Result<Vec<Prediction>, ProbeError> {
    let pool = CandidatePool::singleton(template.clone(), answers.clone());
    let scores = score_pool(instances, &pool, client, dataset_ref)?;
    let ids: Vec<&str> = instances.iter().map(Identified::instance_id).collect();
    predictions_from_pool(&ids, &scores, &pool, 0, 0)
}

/// Synthesize requests for the image-synthesis probe. The image reference is
/// `<request id>.ppm`.
pub fn emit_ism_manifest<T: SlotSource + Identified>(instances: &[T], dataset_ref: &str) -> Result<ProbeManifest, ProbeError> {
    let mut m = ProbeManifest::new(dataset_ref, "ism");
    for inst in instances {
        let prompt = render_ism_prompt(inst).map_err(|e| ProbeError::Protocol {
            id: inst.instance_id().to_string(),
            message: e.to_string(),
        })?;
        let id = derive_request_id(dataset_ref, inst.instance_id());
        let image_ref = Some(format!("{id}.ppm"));
        m.push(
            inst.instance_id(),
            AdapterRequest {
                id,
                mode: AdapterMode::Synthesize,
                prompt,
                answers: None,
                image_ref,
            },
        )?;
    }
    Ok(m)
}

/// Everything known about one generated image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceBundle {
    pub instance_id: String,
    pub request_id: String,
    pub detection: Option<DetectionRecord>,
    pub depth: Option<DepthMap>,
    /// `(annotator, label)`; `None` labels mean the annotator could not
    /// recognize the objects.
    pub human: Vec<(String, Option<String>)>,
}

impl EvidenceBundle {
    pub fn recognized(&self) -> bool {
        self.detection.is_some() && self.depth.is_some()
    }
}

pub fn detection_path(dir: &Path, request_id: &str) -> PathBuf {
    dir.join(format!("{request_id}.json"))
}

pub fn depth_paths(dir: &Path, request_id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{request_id}.f32")), dir.join(format!("{request_id}.f32.json")))
}

fn geometry_artifact(path: &Path, e: GeometryError) -> ProbeError {
    ProbeError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Joins detection files `<det>/<id>.json`, depth maps `<depth>/<id>.f32`
/// with sidecar `<depth>/<id>.f32.json`, and human judgments keyed by request
/// id. Missing files leave the bundle unrecognized; malformed ones abort.
pub fn ingest_image_artifacts(
    manifest: &ProbeManifest,
    detection_dir: Option<&Path>,
    depth_dir: Option<&Path>,
    annotations: Option<&HumanAnnotationSet>,
) -> Result<Vec<EvidenceBundle>, ProbeError> {
    let mut out = Vec::with_capacity(manifest.requests.len());
    for e in &manifest.requests {
        let rid = &e.request.id;
        let detection = match detection_dir.map(|d| detection_path(d, rid)) {
            Some(p) if p.is_file() => Some(DetectionRecord::load(&p).map_err(|err| geometry_artifact(&p, err))?),
            _ => None,
        };
        let depth = match depth_dir.map(|d| depth_paths(d, rid)) {
            Some((raw, side)) if raw.is_file() && side.is_file() => {
                Some(DepthMap::load(&raw, &side).map_err(|err| geometry_artifact(&raw, err))?)
            }
            _ => None,
        };
        if let (Some(det), Some(map)) = (&detection, &depth) {
            let expected = DepthSidecar {
                width: det.image_width as usize,
                height: det.image_height as usize,
            };
            if map.sidecar() != expected {
                let (raw, _) = depth_paths(depth_dir.expect("depth present"), rid);
                return Err(ProbeError::Artifact {
                    path: raw,
                    message: format!(
                        "depth map is {}x{} but detections are for a {}x{} image",
                        map.width(),
                        map.height(),
                        det.image_width,
                        det.image_height
                    ),
                });
            }
        }
        let human = annotations
            .map(|a| {
                a.for_image(rid)
                    .into_iter()
                    .map(|(who, label)| (who.to_string(), label.map(str::to_string)))
                    .collect()
            })
            .unwrap_or_default();
        out.push(EvidenceBundle {
            instance_id: e.instance_id.clone(),
            request_id: rid.clone(),
            detection,
            depth,
            human,
        });
    }
    Ok(out)
}

/// Yes/no probe. `image_refs` maps question ids to images from an earlier
/// synthesis pass; text-only adapters get no image reference.
pub fn run_qa_probe(
    questions: &[QaInstance],
    client: &AdapterClient,
    image_refs: Option<&BTreeMap<String, String>>,
    dataset_ref: &str,
) -> Result<Vec<Prediction>, ProbeError> {
    let answers = AnswerSet::yes_no();
    let allowed = [YesNo::Yes.as_str(), YesNo::No.as_str()];
    let mut m = ProbeManifest::new(dataset_ref, "qa");
    for q in questions {
        let prompt = match &q.context {
            Some(c) => format!("{c} {}", q.question),
            None => q.question.clone(),
        };
        m.push(
            &q.id,
            AdapterRequest {
                id: derive_request_id(dataset_ref, &q.id),
                mode: AdapterMode::Vqa,
                prompt,
                answers: Some(answers.answers.clone()),
                image_ref: image_refs.and_then(|r| r.get(&q.id).cloned()),
            },
        )?;
    }
    let run = client.run(&m)?;
    m.requests
        .iter()
        .map(|e| {
            let r = &run.responses[&e.request.id];
            if r.status != ResponseStatus::Ok {
                return Ok(Prediction::unrecognized(&e.instance_id, Provenance::Model));
            }
            if let Some(extra) = r.scores.iter().flatten().map(|(k, _)| k).find(|k| !allowed.contains(&k.as_str())) {
                return Err(ProbeError::UnexpectedAnswer {
                    id: r.id.clone(),
                    answer: extra.clone(),
                });
            }
            let mut p = decide_answer(r, &answers)?;
            p.instance_id = e.instance_id.clone();
            Ok(p)
        })
        .collect()
}

pub fn predictions_to_jsonl(preds: &[Prediction]) -> String {
    crate::benchmark::to_jsonl(preds)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, ProbeError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    crate::benchmark::from_jsonl(&text).map_err(|(line, e)| ProbeError::Artifact {
        path: path.to_path_buf(),
        message: format!("line {line}: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::Dimension;

    fn resp(pairs: &[(&str, f64)]) -> AdapterResponse {
        AdapterResponse {
            id: "r".into(),
            scores: Some(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()),
            image_path: None,
            status: ResponseStatus::Ok,
        }
    }

    #[test]
    fn argmax_and_ties() {
        let p = decide_answer(&resp(&[("larger", -1.2), ("smaller", -3.4)]), &AnswerSet::for_dimension(Dimension::Size)).unwrap();
        assert_eq!(p.label.as_deref(), Some("larger"));
        assert!(!p.tie);
        let p = decide_answer(
            &resp(&[("above", 0.25), ("below", 0.25), ("inside", 0.25), ("beside", 0.25)]),
            &AnswerSet::relations(),
        )
        .unwrap();
        assert_eq!(p.label.as_deref(), Some("above"));
        assert!(p.tie);
    }

    #[test]
    fn missing_score_names_answer() {
        let err = decide_answer(&resp(&[("larger", 0.0)]), &AnswerSet::for_dimension(Dimension::Size)).unwrap_err();
        assert!(matches!(err, ProbeError::MissingScore { answer, .. } if answer == "smaller"));
    }

    #[test]
    fn request_ids_are_stable() {
        let a = derive_request_id("size", "size:ant|bird");
        assert_eq!(a, derive_request_id("size", "size:ant|bird"));
        assert_ne!(a, derive_request_id("height", "size:ant|bird"));
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn header_and_validation() {
        let text = "{\"scoring_mode\":\"mean_logprob\"}\n{\"id\":\"a\",\"scores\":{\"yes\":1.0,\"no\":0.0},\"status\":\"ok\"}\n";
        let (h, r) = parse_responses(text, Path::new("x")).unwrap();
        assert_eq!(h.unwrap().scoring_mode, Some(ScoringMode::MeanLogprob));
        let req = AdapterRequest {
            id: "a".into(),
            mode: AdapterMode::Vqa,
            prompt: "q".into(),
            answers: Some(vec!["yes".into(), "no".into()]),
            image_ref: None,
        };
        let map: BTreeMap<&str, &AdapterRequest> = [("a", &req)].into_iter().collect();
        validate_responses(&map, &r).unwrap();
        let dup = [r[0].clone(), r[0].clone()];
        assert!(validate_responses(&map, &dup).is_err());
        let mut unknown = r[0].clone();
        unknown.id = "b".into();
        assert!(validate_responses(&map, &[unknown]).is_err());
    }

    #[test]
    fn synthesize_requests_carry_no_answers() {
        let r = AdapterRequest {
            id: "x".into(),
            mode: AdapterMode::Synthesize,
            prompt: "p".into(),
            answers: Some(vec![]),
            image_ref: None,
        };
        assert!(r.validate().is_err());
    }

    #[test]
    fn cached_run_needs_no_command() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = ProbeManifest::new("d", "t");
        m.push(
            "i",
            AdapterRequest {
                id: "r1".into(),
                mode: AdapterMode::Vqa,
                prompt: "q".into(),
                answers: Some(vec!["yes".into(), "no".into()]),
                image_ref: None,
            },
        )
        .unwrap();
        let client = AdapterClient::new(vec![], Some(dir.path().to_path_buf()));
        assert!(matches!(client.run(&m), Err(ProbeError::NoAdapter(_))));
        let cache = dir.path().join(m.hash());
        fs::create_dir_all(&cache).unwrap();
        fs::write(
            cache.join("responses.jsonl"),
            "{\"id\":\"r1\",\"scores\":{\"yes\":0.0,\"no\":1.0},\"status\":\"ok\"}\n",
        )
        .unwrap();
        let run = client.run(&m).unwrap();
        assert!(run.from_cache);
        assert_eq!(run.invocations, 0);
    }
}
