//! The `spatialprobe` command line: `build`, `probe`, `eval-images`,
//! `analyze` and `report`.
//!
//! Every command takes an output directory, refuses to run while another
//! command holds its lock file, and finishes by writing
//! `run_manifest.<command>.json` listing config and dataset hashes and the
//! sha256 of every file it produced.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::benchmark::{
    self, build_generalized_dataset, build_position_dataset, build_qa_dataset, build_scale_dataset, parse_objects,
    parse_scenario_rows, CorpusIndex, Dimension, GeneralizedScenario, ObjectEntity, PositionScenario, QaInstance,
    QaSubtask, ScaleGold, ScaleInstance, SubtermLexicon,
};
use crate::data;
use crate::geometry::{self, classify_relation, compare_scale, normalize_label, select_box, ScaleResult};
use crate::metrics::{
    self, aggregate_human_eval, consistency_report, impute_unrecognized, per_object_ratios, score_predictions, Comparison,
    ConsistencyReport, EvalReport, HumanAnnotationSet, HumanEvalReport, ImputationMode, ObjectRatioTable, PairPredictions,
};
use crate::probing::{
    self, emit_ism_manifest, ingest_image_artifacts, predictions_from_pool, run_qa_probe, score_pool, sha256_hex,
    AdapterClient, Identified, Prediction, ProbeError, ProbeManifest, Provenance, ResponseStatus,
};
use crate::prompts::{
    self, split_named_folds, split_object_folds, AnswerSet, CandidateFile, CandidatePool, CvRunResult, FoldAssignment,
    FoldKeyed, PromptTemplate, SlotSource, TemplateKind,
};

pub const CACHE_ENV: &str = "SPATIALPROBE_CACHE";
pub const LOCK_FILE: &str = ".spatialprobe.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Task {
    Size,
    Height,
    Position,
    PositionGeneralized,
    Qa,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Size => "size",
            Task::Height => "height",
            Task::Position => "position",
            Task::PositionGeneralized => "position_generalized",
            Task::Qa => "qa",
        }
    }

    fn dimension(self) -> Option<Dimension> {
        match self {
            Task::Size => Some(Dimension::Size),
            Task::Height => Some(Dimension::Height),
            _ => None,
        }
    }

    fn dataset_file(self) -> String {
        format!("{}.jsonl", self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ProbeKind {
    Masked,
    IsmBox,
    IsmHuman,
    Qa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Imputation {
    Expected,
    Sampled,
}

/// Resolved run configuration. The TOML config file uses the same keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_kind: Option<ProbeKind>,
    /// Adapter command line; `--requests`/`--responses` are appended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imputation: Option<Imputation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shards: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_refs: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<PathBuf>,
    /// Not part of the config hash: the cache location does not change
    /// results.
    #[serde(default, skip_serializing)]
    pub cache_dir: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),*) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid config file")
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(&mut self, other: &RunConfig) {
        overlay!(
            self, other, task, probe_kind, adapter, data_dir, corpus, dataset_dir, out_dir, k, tau, seed, imputation,
            shards, candidates, manifest, detections, depth, annotations, image_refs, cache_dir
        );
        if !other.predictions.is_empty() {
            self.predictions = other.predictions.clone();
        }
        if !other.runs.is_empty() {
            self.runs = other.runs.clone();
        }
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(5)
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(1.0)
    }

    pub fn imputation_mode(&self) -> ImputationMode {
        match self.imputation.unwrap_or(Imputation::Expected) {
            Imputation::Expected => ImputationMode::Expected,
            Imputation::Sampled => ImputationMode::Sampled {
                seed: self.seed.unwrap_or(0),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k() < 2 {
            bail!("k must be at least 2, got {}", self.k());
        }
        let tau = self.tau();
        if !(tau > 0.0 && tau <= 1.0) {
            bail!("tau must lie in (0, 1], got {tau}");
        }
        let dirs = [&self.data_dir, &self.dataset_dir, &self.detections, &self.depth];
        for p in dirs.into_iter().flatten() {
            if !p.is_dir() {
                bail!("{} is not a directory", p.display());
            }
        }
        let files = [&self.corpus, &self.candidates, &self.manifest, &self.annotations, &self.image_refs];
        for p in files.into_iter().flatten().chain(&self.predictions) {
            if !p.is_file() {
                bail!("{} does not exist", p.display());
            }
        }
        for p in &self.runs {
            if !p.is_dir() {
                bail!("{} is not a directory", p.display());
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out_dir.as_deref().ok_or_else(|| anyhow!("--out is required"))
    }

    fn dataset_dir(&self) -> Result<&Path> {
        self.dataset_dir
            .as_deref()
            .ok_or_else(|| anyhow!("--dataset-dir is required"))
    }

    fn task(&self) -> Result<Task> {
        self.task.ok_or_else(|| anyhow!("--task is required"))
    }

    fn cache_root(&self, out: &Path) -> PathBuf {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| out.join("cache"))
    }

    fn client(&self, out: &Path) -> Result<AdapterClient> {
        let command = match &self.adapter {
            Some(line) => AdapterClient::parse_command(line).ok_or_else(|| anyhow!("cannot parse adapter command {line:?}"))?,
            None => Vec::new(),
        };
        Ok(AdapterClient::new(command, Some(self.cache_root(out))).with_shards(self.shards.unwrap_or(1)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifestRecord {
    pub command: String,
    pub tool_version: String,
    pub data_version: String,
    pub label_table_version: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter_manifest_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring_mode: Option<probing::ScoringMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub started_at: u64,
    pub finished_at: u64,
}

/// Seconds since the epoch, pinned by `SOURCE_DATE_EPOCH` when set.
fn timestamp() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return v;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Exclusive hold on an output directory for the life of a command.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => {
                    anyhow!("{} is locked by another run (remove {} if stale)", dir.display(), path.display())
                }
                _ => anyhow!("{}: {e}", path.display()),
            })?;
        Ok(OutputLock { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Output sink that records what a command wrote.
struct Run {
    dir: PathBuf,
    record: RunManifestRecord,
    _lock: OutputLock,
}

impl Run {
    fn start(command: &str, cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.out_dir()?.to_path_buf();
        let lock = OutputLock::acquire(&dir)?;
        Ok(Run {
            dir,
            record: RunManifestRecord {
                command: command.to_string(),
                tool_version: crate::TOOL_VERSION.to_string(),
                data_version: data::DATA_VERSION.to_string(),
                label_table_version: geometry::LABEL_TABLE_VERSION.to_string(),
                config_hash: cfg.hash(),
                dataset_hash: String::new(),
                config: cfg.clone(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                adapter_manifest_hash: None,
                scoring_mode: None,
                seed: cfg.seed,
                started_at: timestamp(),
                finished_at: 0,
            },
            _lock: lock,
        })
    }

    fn input(&mut self, name: &str, bytes: &[u8]) {
        self.record.inputs.insert(name.to_string(), sha256_hex(bytes));
    }

    fn input_file(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.input(&path.display().to_string(), &bytes);
        Ok(bytes)
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let bytes = bytes.as_ref();
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.record.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }

    fn finish(mut self) -> Result<RunManifestRecord> {
        if self.record.dataset_hash.is_empty() {
            let joined: String = self.record.inputs.values().cloned().collect::<Vec<_>>().join("\n");
            self.record.dataset_hash = sha256_hex(joined.as_bytes());
        }
        self.record.finished_at = timestamp();
        let name = format!("run_manifest.{}.json", self.record.command);
        let mut s = serde_json::to_string_pretty(&self.record)?;
        s.push('\n');
        let path = self.dir.join(&name);
        fs::write(&path, s).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(self.record)
    }
}

#[derive(Debug, Parser)]
#[command(name = "spatialprobe", version, about = "Spatial-commonsense probing harness")]
pub struct Cli {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build benchmark datasets from the data files.
    Build(BuildArgs),
    /// Probe a model through its adapter.
    Probe(ProbeArgs),
    /// Judge generated images from detections and depth, or from human
    /// annotations.
    EvalImages(EvalImagesArgs),
    /// Symmetry, transitivity and per-object ratios of scale predictions.
    Analyze(AnalyzeArgs),
    /// Collect reports from run directories into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
pub struct BuildArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Build one dataset only.
    #[arg(long)]
    pub task: Option<Task>,
    /// Directory holding the data files; bundled copies otherwise.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Corpus used to filter generalized scenarios.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ProbeArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub kind: Option<ProbeKind>,
    /// Directory written by `build`.
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Adapter command line.
    #[arg(long)]
    pub adapter: Option<String>,
    /// JSON file of prompt and answer candidates.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Number of folds.
    #[arg(long)]
    pub k: Option<usize>,
    /// Parallel adapter processes.
    #[arg(long)]
    pub shards: Option<usize>,
    /// Response cache root (default: $SPATIALPROBE_CACHE, then <out>/cache).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// JSON object mapping question ids to image paths.
    #[arg(long)]
    pub image_refs: Option<PathBuf>,
    /// Detection directory to join against the image manifest.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct EvalImagesArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    /// `ism_box` (default) or `ism_human`.
    #[arg(long)]
    pub kind: Option<ProbeKind>,
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    /// Image manifest written by `probe --kind ism_box`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Coverage threshold for `inside`.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub imputation: Option<Imputation>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `size` or `height`.
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    /// Prediction files; each becomes one row.
    #[arg(long = "predictions", num_args = 1..)]
    pub predictions: Vec<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ReportArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run directories to collect.
    #[arg(long = "runs", num_args = 1..)]
    pub runs: Vec<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Build(_) => "build",
            Command::Probe(_) => "probe",
            Command::EvalImages(_) => "eval-images",
            Command::Analyze(_) => "analyze",
            Command::Report(_) => "report",
        }
    }

    fn flags(&self) -> RunConfig {
        match self {
            Command::Build(a) => RunConfig {
                out_dir: a.out.clone(),
                task: a.task,
                data_dir: a.data_dir.clone(),
                corpus: a.corpus.clone(),
                ..Default::default()
            },
            Command::Probe(a) => RunConfig {
                out_dir: a.out.clone(),
                task: a.task,
                probe_kind: a.kind,
                dataset_dir: a.dataset_dir.clone(),
                data_dir: a.data_dir.clone(),
                adapter: a.adapter.clone(),
                candidates: a.candidates.clone(),
                k: a.k,
                shards: a.shards,
                cache_dir: a.cache_dir.clone(),
                image_refs: a.image_refs.clone(),
                detections: a.detections.clone(),
                depth: a.depth.clone(),
                annotations: a.annotations.clone(),
                ..Default::default()
            },
            Command::EvalImages(a) => RunConfig {
                out_dir: a.out.clone(),
                task: a.task,
                probe_kind: a.kind,
                dataset_dir: a.dataset_dir.clone(),
                manifest: a.manifest.clone(),
                detections: a.detections.clone(),
                depth: a.depth.clone(),
                annotations: a.annotations.clone(),
                tau: a.tau,
                imputation: a.imputation,
                seed: a.seed,
                ..Default::default()
            },
            Command::Analyze(a) => RunConfig {
                out_dir: a.out.clone(),
                task: a.task,
                dataset_dir: a.dataset_dir.clone(),
                predictions: a.predictions.clone(),
                ..Default::default()
            },
            Command::Report(a) => RunConfig {
                out_dir: a.out.clone(),
                runs: a.runs.clone(),
                ..Default::default()
            },
        }
    }
}

/// Parses arguments, merges the config file and runs the command.
pub fn run(cli: Cli) -> Result<RunManifestRecord> {
    let mut cfg = match &cli.config {
        Some(p) => {
            RunConfig::from_toml(&fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?)?
        }
        None => RunConfig::default(),
    };
    cfg.overlay(&cli.command.flags());
    cfg.validate()?;
    log::info!("{} with config {}", cli.command.name(), &cfg.hash()[..12]);
    match cli.command {
        Command::Build(_) => cmd_build(&cfg),
        Command::Probe(_) => cmd_probe(&cfg),
        Command::EvalImages(_) => cmd_eval_images(&cfg),
        Command::Analyze(_) => cmd_analyze(&cfg),
        Command::Report(_) => cmd_report(&cfg),
    }
}

fn load_source(run: &mut Run, dir: Option<&Path>, file: &str) -> Result<data::Source> {
    let src = data::load(dir, file).with_context(|| format!("cannot read {file}"))?;
    run.input(&src.name, src.text.as_bytes());
    Ok(src)
}

fn load_objects(dir: Option<&Path>, dimension: Dimension) -> Result<Vec<ObjectEntity>> {
    let file = match dimension {
        Dimension::Size => data::OBJECTS_SIZE_FILE,
        Dimension::Height => data::OBJECTS_HEIGHT_FILE,
    };
    let src = data::load(dir, file).with_context(|| format!("cannot read {file}"))?;
    Ok(parse_objects(&src)?)
}

pub fn cmd_build(cfg: &RunConfig) -> Result<RunManifestRecord> {
    let mut run = Run::start("build", cfg)?;
    let dir = cfg.data_dir.as_deref();
    let wanted = |t: Task| cfg.task.is_none() || cfg.task == Some(t);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();

    let need_scale = wanted(Task::Size) || wanted(Task::Height) || wanted(Task::Qa);
    let mut scale = Vec::new();
    if need_scale {
        for (task, file) in [(Task::Size, data::OBJECTS_SIZE_FILE), (Task::Height, data::OBJECTS_HEIGHT_FILE)] {
            let src = load_source(&mut run, dir, file)?;
            let objects = parse_objects(&src)?;
            let ds = build_scale_dataset(&objects, task.dimension().expect("scale task"))?;
            if wanted(task) {
                run.write(&task.dataset_file(), benchmark::to_jsonl(&ds))?;
                counts.insert(task.dataset_file(), ds.len());
            }
            scale.extend(ds);
        }
    }

    let need_position = wanted(Task::Position) || wanted(Task::PositionGeneralized) || wanted(Task::Qa);
    let mut position = Vec::new();
    if need_position {
        let src = load_source(&mut run, dir, data::SCENARIOS_FILE)?;
        position = build_position_dataset(&parse_scenario_rows(&src)?)?;
        if wanted(Task::Position) {
            run.write(&Task::Position.dataset_file(), benchmark::to_jsonl(&position))?;
            counts.insert(Task::Position.dataset_file(), position.len());
        }
    }

    if wanted(Task::PositionGeneralized) {
        let lex = SubtermLexicon::parse(&load_source(&mut run, dir, data::LEXICON_FILE)?)?;
        let corpus_text = match &cfg.corpus {
            Some(p) => String::from_utf8(run.input_file(p)?).context("corpus is not UTF-8")?,
            None => load_source(&mut run, dir, data::CORPUS_FILE)?.text,
        };
        let index = CorpusIndex::from_text(&corpus_text);
        let (gen, report) = build_generalized_dataset(&position, &lex, &index)?;
        run.write(&Task::PositionGeneralized.dataset_file(), benchmark::to_jsonl(&gen))?;
        run.write_json("generalization_report.json", &report)?;
        counts.insert(Task::PositionGeneralized.dataset_file(), gen.len());
    }

    if wanted(Task::Qa) {
        let qa = build_qa_dataset(&scale, &position)?;
        for (t, name) in [
            (QaSubtask::Size, "qa_size.jsonl"),
            (QaSubtask::Height, "qa_height.jsonl"),
            (QaSubtask::Position, "qa_position.jsonl"),
        ] {
            let items = qa.subtask(t);
            run.write(name, benchmark::to_jsonl(items))?;
            counts.insert(name.to_string(), items.len());
        }
    }

    for (file, n) in &counts {
        log::info!("{file}: {n}");
    }
    run.write_json("counts.json", &counts)?;
    run.finish()
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(run: &mut Run, path: &Path) -> Result<Vec<T>> {
    let bytes = run.input_file(path)?;
    let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    benchmark::from_jsonl(&text).map_err(|(line, e)| anyhow!("{}:{line}: {e}", path.display()))
}

fn dataset_ref(task_name: &str, bytes_hash: &str) -> String {
    format!("{task_name}:{}", &bytes_hash[..12])
}

/// A loaded probe dataset together with its canonical answers and folds.
enum Loaded {
    Scale(Vec<ScaleInstance>),
    Position(Vec<PositionScenario>),
    Generalized(Vec<GeneralizedScenario>),
}

fn load_task_dataset(run: &mut Run, cfg: &RunConfig, task: Task) -> Result<(Loaded, String)> {
    let path = cfg.dataset_dir()?.join(task.dataset_file());
    let loaded = match task {
        Task::Size | Task::Height => Loaded::Scale(read_jsonl(run, &path)?),
        Task::Position => Loaded::Position(read_jsonl(run, &path)?),
        Task::PositionGeneralized => Loaded::Generalized(read_jsonl(run, &path)?),
        Task::Qa => bail!("qa has three datasets; use --kind qa"),
    };
    let hash = run.record.inputs[&path.display().to_string()].clone();
    run.record.dataset_hash = hash.clone();
    Ok((loaded, dataset_ref(task.as_str(), &hash)))
}

fn scale_answers(task: Task) -> AnswerSet {
    AnswerSet::for_dimension(task.dimension().expect("scale task"))
}

pub fn cmd_probe(cfg: &RunConfig) -> Result<RunManifestRecord> {
    let mut run = Run::start("probe", cfg)?;
    let kind = cfg.probe_kind.unwrap_or(ProbeKind::Masked);
    match kind {
        ProbeKind::Qa => probe_qa(&mut run, cfg)?,
        ProbeKind::Masked => {
            let task = cfg.task()?;
            let (loaded, dref) = load_task_dataset(&mut run, cfg, task)?;
            match loaded {
                Loaded::Scale(ds) => {
                    let objects = load_objects(cfg.data_dir.as_deref(), task.dimension().expect("scale"))?;
                    let folds = split_object_folds(&objects, cfg.k())?;
                    let golds = ds.iter().map(|i| i.gold.answer_index()).collect();
                    probe_masked(&mut run, cfg, &ds, golds, scale_answers(task), TemplateKind::MaskedScale, &folds, &dref)?;
                }
                Loaded::Position(ds) => {
                    let names: Vec<&str> = ds.iter().map(|s| s.object.as_str()).collect();
                    let folds = split_named_folds(&names, cfg.k())?;
                    let golds = ds.iter().map(|s| s.relation.index()).collect();
                    probe_masked(&mut run, cfg, &ds, golds, AnswerSet::relations(), TemplateKind::MaskedPosition, &folds, &dref)?;
                }
                Loaded::Generalized(ds) => {
                    let names: Vec<&str> = ds.iter().map(|s| s.base_object.as_str()).collect();
                    let folds = split_named_folds(&names, cfg.k())?;
                    let golds = ds.iter().map(|s| s.relation.index()).collect();
                    probe_masked(&mut run, cfg, &ds, golds, AnswerSet::relations(), TemplateKind::MaskedPosition, &folds, &dref)?;
                }
            }
        }
        ProbeKind::IsmBox | ProbeKind::IsmHuman => {
            let task = cfg.task()?;
            let (loaded, dref) = load_task_dataset(&mut run, cfg, task)?;
            let manifest = match &loaded {
                Loaded::Scale(ds) => emit_ism_manifest(ds, &dref)?,
                Loaded::Position(ds) => emit_ism_manifest(ds, &dref)?,
                Loaded::Generalized(ds) => emit_ism_manifest(ds, &dref)?,
            };
            probe_ism(&mut run, cfg, &manifest)?;
        }
    }
    run.finish()
}

#[derive(Debug, Serialize)]
struct CvReportFile<'a> {
    task: &'a str,
    prompts: Vec<&'a str>,
    answer_sets: Vec<&'a [String]>,
    rejected: &'a [prompts::RejectedCandidate],
    chosen_prompt: usize,
    chosen_answers: usize,
    cv: &'a CvRunResult,
}

fn render_cv(task: &str, pool: &CandidatePool, cv: &CvRunResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{task}: {}-fold selection over {} prompts x {} answer sets", cv.k, pool.prompts.len(), pool.answer_sets.len());
    let _ = writeln!(out, "{:<4} {:>6} {:>6} {:>5} {:>5} {:>8} {:>8} {:>8}", "run", "prompt", "answer", "dev", "test", "dev_acc", "test_acc", "test_f1");
    for r in &cv.per_run {
        if r.skipped {
            let _ = writeln!(out, "{:<4} skipped (dev {}, test {})", r.run, r.dev_size, r.test_size);
            continue;
        }
        let _ = writeln!(
            out,
            "{:<4} {:>6} {:>6} {:>5} {:>5} {:>8.4} {:>8.4} {:>8.4}",
            r.run, r.prompt_index, r.answer_index, r.dev_size, r.test_size, r.dev_accuracy, r.test_accuracy, r.test_macro_f1
        );
    }
    let _ = writeln!(out, "accuracy {:.4} +/- {:.4}", cv.mean_acc, cv.std_acc);
    let _ = writeln!(out, "macro-F1 {:.4} +/- {:.4}", cv.mean_f1, cv.std_f1);
    out
}

#[allow(clippy::too_many_arguments)]
fn probe_masked<T>(
    run: &mut Run,
    cfg: &RunConfig,
    instances: &[T],
    golds: Vec<usize>,
    canonical: AnswerSet,
    kind: TemplateKind,
    folds: &FoldAssignment,
    dref: &str,
) -> Result<()>
where
    T: SlotSource + Identified + FoldKeyed,
{
    let pool = match &cfg.candidates {
        Some(p) => {
            run.input_file(p)?;
            CandidateFile::load(p)?.into_pool(kind, canonical.clone())
        }
        None => CandidatePool::singleton(PromptTemplate::default_for(kind), canonical.clone()),
    };
    let client = cfg.client(&run.dir)?;
    let scores = score_pool(instances, &pool, &client, dref)?;
    log::info!(
        "{} responses ({}; {} adapter invocations)",
        scores.run.responses.len(),
        if scores.run.from_cache { "cache" } else { "adapter" },
        scores.run.invocations
    );
    run.record.adapter_manifest_hash = Some(scores.run.manifest_hash.clone());
    run.record.scoring_mode = scores.run.scoring_mode();

    let n_classes = canonical.len();
    let cv = prompts::run_cross_validated_selection(instances, &golds, pool.size(), n_classes, folds, |p, a, idx| {
        idx.iter()
            .map(|&i| scores.decide(&pool, p, a, i).map(|o| o.map(|(k, _)| k)))
            .collect::<Result<Vec<_>, ProbeError>>()
            .map_err(|e| e.to_string())
    })?;
    let (p, a) = cv.modal_choice();
    let ids: Vec<&str> = instances.iter().map(Identified::instance_id).collect();
    let preds = predictions_from_pool(&ids, &scores, &pool, p, a)?;

    let classes = canonical.answers.clone();
    let gold_map: BTreeMap<String, String> = ids
        .iter()
        .zip(&golds)
        .map(|(id, g)| (id.to_string(), classes[*g].clone()))
        .collect();
    let report = score_predictions(&preds, &gold_map, &classes)?;
    let task = cfg.task()?.as_str();

    run.write("predictions.jsonl", probing::predictions_to_jsonl(&preds))?;
    run.write_json(
        "cv_report.json",
        &CvReportFile {
            task,
            prompts: pool.prompts.iter().map(|t| t.pattern.as_str()).collect(),
            answer_sets: pool.answer_sets.iter().map(|s| s.answers.as_slice()).collect(),
            rejected: &pool.rejected,
            chosen_prompt: p,
            chosen_answers: a,
            cv: &cv,
        },
    )?;
    run.write("cv_report.txt", render_cv(task, &pool, &cv))?;
    run.write_json("eval_report.json", &report)?;
    run.write("eval_report.txt", metrics::render_eval_table(&[(task.to_string(), report)]))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ImageRow<'a> {
    instance_id: &'a str,
    request_id: &'a str,
    status: ResponseStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_path: Option<&'a str>,
}

#[derive(Debug, Serialize)]
struct EvidenceRow<'a> {
    instance_id: &'a str,
    request_id: &'a str,
    recognized: bool,
    boxes: usize,
    annotators: usize,
}

fn probe_ism(run: &mut Run, cfg: &RunConfig, manifest: &ProbeManifest) -> Result<()> {
    run.write("ism_manifest.json", manifest.to_json())?;
    run.write("requests.jsonl", manifest.requests_jsonl())?;
    run.record.adapter_manifest_hash = Some(manifest.hash());
    let client = cfg.client(&run.dir)?;
    match client.run(manifest) {
        Ok(result) => {
            let rows: Vec<ImageRow> = manifest
                .requests
                .iter()
                .map(|e| {
                    let r = &result.responses[&e.request.id];
                    ImageRow {
                        instance_id: &e.instance_id,
                        request_id: &e.request.id,
                        status: r.status,
                        image_path: r.image_path.as_deref(),
                    }
                })
                .collect();
            run.write("images.jsonl", benchmark::to_jsonl(&rows))?;
        }
        Err(ProbeError::NoAdapter(_)) if cfg.adapter.is_none() => {
            log::info!("no adapter configured; wrote the manifest only");
        }
        Err(e) => return Err(e.into()),
    }
    if cfg.detections.is_some() || cfg.annotations.is_some() {
        let annotations = load_annotations(run, cfg)?;
        let bundles = ingest_image_artifacts(manifest, cfg.detections.as_deref(), cfg.depth.as_deref(), annotations.as_ref())?;
        let rows: Vec<EvidenceRow> = bundles
            .iter()
            .map(|b| EvidenceRow {
                instance_id: &b.instance_id,
                request_id: &b.request_id,
                recognized: b.recognized(),
                boxes: b.detection.as_ref().map_or(0, |d| d.boxes.len()),
                annotators: b.human.len(),
            })
            .collect();
        run.write("evidence.jsonl", benchmark::to_jsonl(&rows))?;
    }
    Ok(())
}

fn load_annotations(run: &mut Run, cfg: &RunConfig) -> Result<Option<HumanAnnotationSet>> {
    match &cfg.annotations {
        None => Ok(None),
        Some(p) => {
            let bytes = run.input_file(p)?;
            let text = String::from_utf8(bytes).context("annotation file is not UTF-8")?;
            Ok(Some(HumanAnnotationSet::parse_jsonl(&text)?))
        }
    }
}

const QA_FILES: [(QaSubtask, &str); 3] = [
    (QaSubtask::Size, "qa_size.jsonl"),
    (QaSubtask::Height, "qa_height.jsonl"),
    (QaSubtask::Position, "qa_position.jsonl"),
];

fn probe_qa(run: &mut Run, cfg: &RunConfig) -> Result<()> {
    let image_refs: Option<BTreeMap<String, String>> = match &cfg.image_refs {
        Some(p) => Some(serde_json::from_slice(&run.input_file(p)?).context("image refs must be a JSON object")?),
        None => None,
    };
    let client = cfg.client(&run.dir)?;
    let classes = AnswerSet::yes_no().answers;
    let mut all = Vec::new();
    let mut reports: BTreeMap<String, EvalReport> = BTreeMap::new();
    let mut hashes = Vec::new();
    for (subtask, file) in QA_FILES {
        let path = cfg.dataset_dir()?.join(file);
        let questions: Vec<QaInstance> = read_jsonl(run, &path)?;
        let hash = run.record.inputs[&path.display().to_string()].clone();
        let preds = run_qa_probe(&questions, &client, image_refs.as_ref(), &dataset_ref(&format!("qa_{subtask}"), &hash))?;
        let golds: BTreeMap<String, String> = questions.iter().map(|q| (q.id.clone(), q.gold.as_str().to_string())).collect();
        reports.insert(subtask.to_string(), score_predictions(&preds, &golds, &classes)?);
        hashes.push(hash);
        all.extend(preds);
    }
    run.record.dataset_hash = sha256_hex(hashes.join("\n").as_bytes());
    run.write("predictions.jsonl", probing::predictions_to_jsonl(&all))?;
    run.write_json("eval_report.json", &reports)?;
    let rows: Vec<(String, EvalReport)> = reports.into_iter().collect();
    run.write("eval_report.txt", metrics::render_eval_table(&rows))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Judgment<'a> {
    instance_id: &'a str,
    request_id: &'a str,
    recognized: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score_b: Option<f64>,
}

/// What eval-images needs per instance: the labels to look up and the gold.
struct ImageTarget {
    kind: TargetKind,
    gold: String,
}

enum TargetKind {
    Scale { a: String, b: String, dimension: Dimension },
    Position { person: String, object: String },
}

fn image_targets(loaded: &Loaded) -> (BTreeMap<String, ImageTarget>, Vec<String>) {
    let mut out = BTreeMap::new();
    let classes;
    match loaded {
        Loaded::Scale(ds) => {
            let dim = ds.first().map_or(Dimension::Size, |i| i.dimension);
            classes = AnswerSet::for_dimension(dim).answers;
            for i in ds {
                out.insert(
                    i.id.clone(),
                    ImageTarget {
                        kind: TargetKind::Scale {
                            a: i.obj_a.clone(),
                            b: i.obj_b.clone(),
                            dimension: i.dimension,
                        },
                        gold: classes[i.gold.answer_index()].clone(),
                    },
                );
            }
        }
        Loaded::Position(ds) => {
            classes = AnswerSet::relations().answers;
            for s in ds {
                out.insert(
                    s.id.clone(),
                    ImageTarget {
                        kind: TargetKind::Position {
                            person: s.person.clone(),
                            object: s.object.clone(),
                        },
                        gold: s.relation.to_string(),
                    },
                );
            }
        }
        Loaded::Generalized(ds) => {
            classes = AnswerSet::relations().answers;
            for s in ds {
                out.insert(
                    s.id.clone(),
                    ImageTarget {
                        kind: TargetKind::Position {
                            person: s.base_person.clone(),
                            object: s.object.clone(),
                        },
                        gold: s.relation.to_string(),
                    },
                );
            }
        }
    }
    (out, classes)
}

pub fn cmd_eval_images(cfg: &RunConfig) -> Result<RunManifestRecord> {
    let mut run = Run::start("eval-images", cfg)?;
    let task = cfg.task()?;
    let (loaded, _) = load_task_dataset(&mut run, cfg, task)?;
    let manifest_path = cfg.manifest.as_deref().ok_or_else(|| anyhow!("--manifest is required"))?;
    run.input_file(manifest_path)?;
    let manifest = ProbeManifest::load(manifest_path)?;
    let (targets, classes) = image_targets(&loaded);
    let mode = cfg.imputation_mode();

    match cfg.probe_kind.unwrap_or(ProbeKind::IsmBox) {
        ProbeKind::IsmHuman => {
            let annotations = load_annotations(&mut run, cfg)?.ok_or_else(|| anyhow!("--annotations is required in human mode"))?;
            let mut golds = BTreeMap::new();
            for e in &manifest.requests {
                let t = targets
                    .get(&e.instance_id)
                    .ok_or_else(|| anyhow!("manifest instance {} is not in the dataset", e.instance_id))?;
                golds.insert(e.request.id.clone(), t.gold.clone());
            }
            let report = aggregate_human_eval(&annotations, &golds, &classes, mode)?;
            run.write_json("human_eval_report.json", &report)?;
            run.write("human_eval_report.txt", render_human(&report))?;
        }
        ProbeKind::IsmBox => {
            let bundles = ingest_image_artifacts(&manifest, cfg.detections.as_deref(), cfg.depth.as_deref(), None)?;
            let mut preds = Vec::with_capacity(bundles.len());
            let mut rows = Vec::with_capacity(bundles.len());
            let mut golds = BTreeMap::new();
            for b in &bundles {
                let t = targets
                    .get(&b.instance_id)
                    .ok_or_else(|| anyhow!("manifest instance {} is not in the dataset", b.instance_id))?;
                golds.insert(b.instance_id.clone(), t.gold.clone());
                let (label, sa, sb) = judge(b, t, &classes, cfg.tau()).with_context(|| format!("judging {}", b.request_id))?;
                preds.push(match label {
                    Some(l) => Prediction::model(&b.instance_id, l),
                    None => Prediction::unrecognized(&b.instance_id, Provenance::Model),
                });
                rows.push(Judgment {
                    instance_id: &b.instance_id,
                    request_id: &b.request_id,
                    recognized: label.is_some(),
                    label,
                    score_a: sa,
                    score_b: sb,
                });
            }
            let report = impute_unrecognized(&preds, &golds, &classes, mode)?;
            run.write("judgments.jsonl", benchmark::to_jsonl(&rows))?;
            run.write("predictions.jsonl", probing::predictions_to_jsonl(&preds))?;
            run.write_json("eval_report.json", &report)?;
            run.write("eval_report.txt", metrics::render_eval_table(&[(task.as_str().to_string(), report)]))?;
        }
        other => bail!("eval-images needs kind ism_box or ism_human, got {other:?}"),
    }
    run.finish()
}

/// Label for one image (`None` when unrecognized) and the two scale scores.
fn judge<'c>(
    b: &probing::EvidenceBundle,
    t: &ImageTarget,
    classes: &'c [String],
    tau: f64,
) -> Result<(Option<&'c str>, Option<f64>, Option<f64>)> {
    let (Some(det), Some(depth)) = (&b.detection, &b.depth) else {
        return Ok((None, None, None));
    };
    match &t.kind {
        TargetKind::Scale { a, b: other, dimension } => {
            let j = compare_scale(det, depth, a, other, *dimension)?;
            let label = match j.result {
                ScaleResult::AGreater => Some(classes[ScaleGold::AGreater.answer_index()].as_str()),
                ScaleResult::BGreater => Some(classes[ScaleGold::BGreater.answer_index()].as_str()),
                ScaleResult::Indeterminate => None,
            };
            Ok((label, j.score_a, j.score_b))
        }
        TargetKind::Position { person, object } => {
            let (Some(p), Some(o)) = (select_box(det, &normalize_label(person)), select_box(det, object)) else {
                return Ok((None, None, None));
            };
            let rel = classify_relation(p, o, tau)?;
            let label = classes.iter().find(|c| c.as_str() == rel.as_str()).map(String::as_str);
            Ok((label, None, None))
        }
    }
}

fn render_human(r: &HumanEvalReport) -> String {
    let mut rows: Vec<(String, EvalReport)> = r.per_annotator.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    rows.push(("mean".into(), r.mean.clone()));
    let mut out = metrics::render_eval_table(&rows);
    match r.agreement {
        Some(a) => {
            let _ = writeln!(out, "agreement {:.1} over {} doubly annotated images", a * 100.0, r.doubly_annotated);
        }
        None => out.push_str("agreement n/a\n"),
    }
    out
}

fn row_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("predictions");
    if stem == "predictions" {
        path.parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
            .unwrap_or(stem)
            .to_string()
    } else {
        stem.to_string()
    }
}

/// Pair table from scale predictions; the first canonical answer means
/// "greater".
pub fn pair_predictions(instances: &[ScaleInstance], preds: &[Prediction]) -> Result<PairPredictions> {
    let by_id: BTreeMap<&str, &ScaleInstance> = instances.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut table = PairPredictions::default();
    for p in preds {
        let inst = by_id
            .get(p.instance_id.as_str())
            .ok_or_else(|| anyhow!("prediction {} is not in the dataset", p.instance_id))?;
        let [greater, smaller] = inst.dimension.comparatives();
        let cmp = match (&p.label, p.recognized) {
            (Some(l), true) if l == greater => Some(Comparison::Greater),
            (Some(l), true) if l == smaller => Some(Comparison::Smaller),
            (Some(l), true) => bail!("{}: label {l:?} is not {greater}/{smaller}", p.instance_id),
            _ => None,
        };
        table.insert(&inst.obj_a, &inst.obj_b, cmp);
    }
    Ok(table)
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<RunManifestRecord> {
    let mut run = Run::start("analyze", cfg)?;
    let task = cfg.task()?;
    if task.dimension().is_none() {
        bail!("analyze works on size or height predictions");
    }
    if cfg.predictions.is_empty() {
        bail!("--predictions is required");
    }
    let (loaded, _) = load_task_dataset(&mut run, cfg, task)?;
    let Loaded::Scale(ds) = loaded else { unreachable!("scale task") };
    let mut objects: Vec<String> = Vec::new();
    for i in &ds {
        for o in [&i.obj_a, &i.obj_b] {
            if !objects.contains(o) {
                objects.push(o.clone());
            }
        }
    }
    let mut consistency: BTreeMap<String, ConsistencyReport> = BTreeMap::new();
    let mut ratios: BTreeMap<String, ObjectRatioTable> = BTreeMap::new();
    for path in &cfg.predictions {
        run.input_file(path)?;
        let preds = probing::load_predictions(path)?;
        let table = pair_predictions(&ds, &preds)?;
        let report = consistency_report(&table);
        if report.pairs_missing_reverse > 0 {
            log::warn!(
                "{}: {} ordered pairs lack a usable reverse; symmetry denominator reduced",
                path.display(),
                report.pairs_missing_reverse
            );
        }
        let name = row_name(path);
        consistency.insert(name.clone(), report);
        ratios.insert(name, per_object_ratios(&table, &objects));
    }
    run.write_json("consistency_report.json", &consistency)?;
    let rows: Vec<(String, ConsistencyReport)> = consistency.into_iter().collect();
    run.write("consistency_report.txt", metrics::render_consistency_table(&rows))?;
    run.write_json("object_ratios.json", &ratios)?;
    let mut text = String::new();
    for (name, table) in &ratios {
        let _ = writeln!(text, "{name}");
        text.push_str(&metrics::render_ratio_table(table));
        if !table.skipped.is_empty() {
            let _ = writeln!(text, "no comparable pairs: {}", table.skipped.join(", "));
        }
        text.push('\n');
    }
    run.write("object_ratios.txt", text)?;
    run.finish()
}

#[derive(Debug, Default, Serialize)]
struct Summary {
    eval: BTreeMap<String, EvalReport>,
    cv: BTreeMap<String, (f64, f64, f64, f64)>,
    consistency: BTreeMap<String, ConsistencyReport>,
    human: BTreeMap<String, HumanEvalReport>,
}

pub fn cmd_report(cfg: &RunConfig) -> Result<RunManifestRecord> {
    let mut run = Run::start("report", cfg)?;
    if cfg.runs.is_empty() {
        bail!("--runs is required");
    }
    let mut s = Summary::default();
    for dir in &cfg.runs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("run").to_string();
        let eval = dir.join("eval_report.json");
        if eval.is_file() {
            let bytes = run.input_file(&eval)?;
            if let Ok(r) = serde_json::from_slice::<EvalReport>(&bytes) {
                s.eval.insert(name.clone(), r);
            } else {
                let map: BTreeMap<String, EvalReport> =
                    serde_json::from_slice(&bytes).with_context(|| format!("cannot parse {}", eval.display()))?;
                for (sub, r) in map {
                    s.eval.insert(format!("{name}/{sub}"), r);
                }
            }
        }
        let cv = dir.join("cv_report.json");
        if cv.is_file() {
            let v: serde_json::Value = serde_json::from_slice(&run.input_file(&cv)?)?;
            let r: CvRunResult = serde_json::from_value(v["cv"].clone()).with_context(|| format!("cannot parse {}", cv.display()))?;
            s.cv.insert(name.clone(), (r.mean_acc, r.std_acc, r.mean_f1, r.std_f1));
        }
        let cons = dir.join("consistency_report.json");
        if cons.is_file() {
            let map: BTreeMap<String, ConsistencyReport> = serde_json::from_slice(&run.input_file(&cons)?)?;
            for (m, r) in map {
                s.consistency.insert(format!("{name}/{m}"), r);
            }
        }
        let human = dir.join("human_eval_report.json");
        if human.is_file() {
            s.human.insert(name.clone(), serde_json::from_slice(&run.input_file(&human)?)?);
        }
    }
    let mut text = String::new();
    if !s.eval.is_empty() {
        let rows: Vec<(String, EvalReport)> = s.eval.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        text.push_str(&metrics::render_eval_table(&rows));
        text.push('\n');
    }
    if !s.cv.is_empty() {
        let _ = writeln!(text, "{:<24} {:>16} {:>16}", "Cross-validated", "Acc", "F1");
        for (k, (ma, sa, mf, sf)) in &s.cv {
            let _ = writeln!(text, "{:<24} {:>16} {:>16}", k, format!("{:.1} +/- {:.1}", ma * 100.0, sa * 100.0), format!("{:.1} +/- {:.1}", mf * 100.0, sf * 100.0));
        }
        text.push('\n');
    }
    if !s.consistency.is_empty() {
        let rows: Vec<(String, ConsistencyReport)> = s.consistency.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        text.push_str(&metrics::render_consistency_table(&rows));
        text.push('\n');
    }
    for (k, h) in &s.human {
        let _ = writeln!(text, "{k} (human)");
        text.push_str(&render_human(h));
        text.push('\n');
    }
    run.write_json("report.json", &s)?;
    run.write("report.txt", text)?;
    run.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_and_flags_merge() {
        let mut cfg = RunConfig::from_toml("task = \"height\"\nk = 3\ntau = 0.8\n").unwrap();
        cfg.overlay(&RunConfig {
            k: Some(4),
            ..Default::default()
        });
        assert_eq!(cfg.task, Some(Task::Height));
        assert_eq!(cfg.k(), 4);
        assert_eq!(cfg.tau(), 0.8);
        assert!(RunConfig::from_toml("colour = 1").is_err());
    }

    #[test]
    fn config_validation() {
        let bad_k = RunConfig {
            k: Some(1),
            ..Default::default()
        };
        assert!(bad_k.validate().is_err());
        let bad_tau = RunConfig {
            tau: Some(0.0),
            ..Default::default()
        };
        assert!(bad_tau.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn config_hash_ignores_cache_location() {
        let a = RunConfig {
            task: Some(Task::Size),
            ..Default::default()
        };
        let mut b = a.clone();
        b.cache_dir = Some("/elsewhere".into());
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let first = OutputLock::acquire(dir.path()).unwrap();
        assert!(OutputLock::acquire(dir.path()).is_err());
        drop(first);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }
}
