//! Fixture-driven adapter for tests and dry runs.
//!
//! Handles every request mode without model weights. `--behavior oracle`
//! scores the fixture answer for a prompt highest; `--behavior constant`
//! gives every answer the same score. Synthesize requests get a small PPM
//! and, with `--scenes`, detector and depth files of a synthetic scene that
//! realizes the fixture answer.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use spatialprobe::benchmark::{self, Dimension};
use spatialprobe::geometry::{ScaleResult, SpatialRelation};
use spatialprobe::probing::{
    sha256_hex, AdapterMode, AdapterRequest, AdapterResponse, ResponseHeader, ResponseStatus, ScoringMode,
};
use spatialprobe::synthetic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Behavior {
    Oracle,
    Constant,
}

#[derive(Debug, Parser)]
#[command(name = "spatialprobe-stub", about = "Fixture-driven stub adapter")]
struct Args {
    #[arg(long)]
    requests: PathBuf,
    #[arg(long)]
    responses: PathBuf,
    #[arg(long, value_enum, default_value = "constant")]
    behavior: Behavior,
    /// JSONL of `{"prompt", "answer", "labels"?}`.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Requests whose prompt contains this text fail.
    #[arg(long)]
    fail_prompt_contains: Vec<String>,
    /// Exit with status 3 unless this marker file exists; create it first.
    #[arg(long)]
    fail_first_run: Option<PathBuf>,
    /// Always exit with this status without writing responses.
    #[arg(long)]
    exit_code: Option<u8>,
    /// Directory for synthesized images (default: next to the responses).
    #[arg(long)]
    image_dir: Option<PathBuf>,
    /// Write `detections/` and `depth/` for synthesized scenes here.
    #[arg(long)]
    scenes: Option<PathBuf>,
    /// Append a response for an id that was never requested.
    #[arg(long)]
    inject_unknown: bool,
}

#[derive(Debug, Clone, Deserialize)]
struct FixtureRow {
    prompt: String,
    answer: String,
    #[serde(default)]
    labels: Vec<String>,
}

fn load_fixture(path: Option<&Path>) -> Result<HashMap<String, FixtureRow>> {
    let Some(path) = path else {
        return Ok(HashMap::new());
    };
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let rows: Vec<FixtureRow> =
        benchmark::from_jsonl(&text).map_err(|(line, e)| anyhow!("{}:{line}: {e}", path.display()))?;
    Ok(rows.into_iter().map(|r| (r.prompt.clone(), r)).collect())
}

fn seed_for(id: &str) -> u64 {
    u64::from_str_radix(&sha256_hex(id.as_bytes())[..16], 16).expect("hex digits")
}

fn score(req: &AdapterRequest, args: &Args, fixture: &HashMap<String, FixtureRow>) -> AdapterResponse {
    let answers = req.answers.clone().unwrap_or_default();
    let scores = match args.behavior {
        Behavior::Constant => answers.iter().map(|a| (a.clone(), 0.0)).collect(),
        Behavior::Oracle => match fixture.get(&req.prompt) {
            Some(row) if answers.contains(&row.answer) => answers
                .iter()
                .map(|a| (a.clone(), if *a == row.answer { 0.0 } else { -5.0 }))
                .collect(),
            _ => return AdapterResponse::failed(&req.id),
        },
    };
    AdapterResponse {
        id: req.id.clone(),
        scores: Some(scores),
        image_path: None,
        status: ResponseStatus::Ok,
    }
}

fn scale_truth(answer: &str) -> Option<(Dimension, ScaleResult)> {
    for d in [Dimension::Size, Dimension::Height] {
        let [greater, smaller] = d.comparatives();
        if answer == greater {
            return Some((d, ScaleResult::AGreater));
        }
        if answer == smaller {
            return Some((d, ScaleResult::BGreater));
        }
    }
    None
}

fn synthesize(req: &AdapterRequest, args: &Args, fixture: &HashMap<String, FixtureRow>, image_dir: &Path) -> Result<AdapterResponse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(&req.id));
    let mut boxes = Vec::new();
    let mut side = 64;
    if let (Some(scenes), Some(row)) = (&args.scenes, fixture.get(&req.prompt)) {
        if row.labels.len() != 2 {
            return Ok(AdapterResponse::failed(&req.id));
        }
        let (record, depth) = if let Some((dim, truth)) = scale_truth(&row.answer) {
            let s = synthetic::scale_scene(&mut rng, &row.labels[0], &row.labels[1], dim, Some(truth));
            (s.record, s.depth)
        } else {
            let rel: SpatialRelation = row.answer.parse().map_err(|e: String| anyhow!(e))?;
            let s = synthetic::position_scene(&mut rng, &row.labels[0], &row.labels[1], rel);
            (s.record, s.depth)
        };
        synthetic::write_artifacts(&scenes.join("detections"), &scenes.join("depth"), &req.id, &record, &depth)?;
        side = record.image_width as usize;
        boxes = record.boxes;
    }
    let name = req.image_ref.clone().unwrap_or_else(|| format!("{}.ppm", req.id));
    let path = image_dir.join(name);
    fs::write(&path, synthetic::render_ppm(side, side, &boxes))?;
    Ok(AdapterResponse {
        id: req.id.clone(),
        scores: None,
        image_path: Some(path.display().to_string()),
        status: ResponseStatus::Ok,
    })
}

fn run(args: &Args) -> Result<ExitCode> {
    if let Some(code) = args.exit_code {
        return Ok(ExitCode::from(code));
    }
    if let Some(marker) = &args.fail_first_run {
        if !marker.exists() {
            fs::write(marker, b"")?;
            return Ok(ExitCode::from(3));
        }
    }
    let fixture = load_fixture(args.fixture.as_deref())?;
    let text = fs::read_to_string(&args.requests).with_context(|| format!("cannot read {}", args.requests.display()))?;
    let requests: Vec<AdapterRequest> =
        benchmark::from_jsonl(&text).map_err(|(line, e)| anyhow!("{}:{line}: {e}", args.requests.display()))?;
    let image_dir = args.image_dir.clone().unwrap_or_else(|| {
        args.responses
            .parent()
            .map(|p| p.join("images"))
            .unwrap_or_else(|| PathBuf::from("images"))
    });

    let mut responses = Vec::with_capacity(requests.len());
    for req in &requests {
        if args.fail_prompt_contains.iter().any(|s| req.prompt.contains(s)) {
            responses.push(AdapterResponse::failed(&req.id));
            continue;
        }
        responses.push(match req.mode {
            AdapterMode::MaskedScore | AdapterMode::Vqa => score(req, args, &fixture),
            AdapterMode::Synthesize => {
                fs::create_dir_all(&image_dir)?;
                synthesize(req, args, &fixture, &image_dir)?
            }
        });
    }
    if args.inject_unknown {
        responses.push(AdapterResponse::failed("not-a-request"));
    }
    let header = ResponseHeader {
        scoring_mode: Some(ScoringMode::SingleToken),
        ..Default::default()
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    out.push_str(&benchmark::to_jsonl(&responses));
    fs::write(&args.responses, out).with_context(|| format!("cannot write {}", args.responses.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("spatialprobe-stub: {e:#}");
            ExitCode::from(1)
        }
    }
}
