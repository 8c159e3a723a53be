#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spatialprobe::benchmark::{from_jsonl, PositionScenario, ScaleInstance};
use spatialprobe::prompts::{render_ism_prompt, AnswerSet, PromptTemplate, TemplateKind};

pub const EPOCH: &str = "1700000000";

pub fn cli() -> &'static str {
    env!("CARGO_BIN_EXE_spatialprobe")
}

pub fn stub() -> &'static str {
    env!("CARGO_BIN_EXE_spatialprobe-stub")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(cli())
        .args(args)
        .env("SOURCE_DATE_EPOCH", EPOCH)
        .env_remove("SPATIALPROBE_CACHE")
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn spatialprobe")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "spatialprobe {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

pub fn build(out: &Path) {
    run_ok(&["build", "--out", p(out)]);
}

pub fn read_jsonl<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Vec<T> {
    from_jsonl(&fs::read_to_string(path).expect("read jsonl")).expect("parse jsonl")
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).expect("read json")).expect("parse json")
}

fn write_rows(path: &Path, rows: &[serde_json::Value]) {
    let mut text = String::new();
    for r in rows {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    fs::write(path, text).expect("write fixture");
}

/// Oracle fixture for the default masked template on a scale dataset.
pub fn masked_scale_fixture(dataset: &Path, out: &Path) {
    let ds: Vec<ScaleInstance> = read_jsonl(dataset);
    let t = PromptTemplate::default_for(TemplateKind::MaskedScale);
    let rows: Vec<_> = ds
        .iter()
        .map(|i| {
            let answers = AnswerSet::for_dimension(i.dimension);
            serde_json::json!({
                "prompt": t.render(i).unwrap(),
                "answer": answers.answers[i.gold.answer_index()],
            })
        })
        .collect();
    write_rows(out, &rows);
}

/// Oracle fixture for image synthesis on a scale dataset: the scene
/// realizes the gold ordering.
pub fn ism_scale_fixture(dataset: &Path, out: &Path) {
    let ds: Vec<ScaleInstance> = read_jsonl(dataset);
    let rows: Vec<_> = ds
        .iter()
        .map(|i| {
            let answers = AnswerSet::for_dimension(i.dimension);
            serde_json::json!({
                "prompt": render_ism_prompt(i).unwrap(),
                "answer": answers.answers[i.gold.answer_index()],
                "labels": [i.obj_a, i.obj_b],
            })
        })
        .collect();
    write_rows(out, &rows);
}

pub fn ism_position_fixture(dataset: &Path, out: &Path) {
    let ds: Vec<PositionScenario> = read_jsonl(dataset);
    let rows: Vec<_> = ds
        .iter()
        .map(|s| {
            serde_json::json!({
                "prompt": render_ism_prompt(s).unwrap(),
                "answer": s.relation.as_str(),
                "labels": [s.person, s.object],
            })
        })
        .collect();
    write_rows(out, &rows);
}

pub fn oracle_adapter(fixture: &Path) -> String {
    format!("{} --behavior oracle --fixture {}", stub(), p(fixture))
}

pub fn constant_adapter() -> String {
    format!("{} --behavior constant", stub())
}

/// Regular files directly under `dir`, by name.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).expect("read dir") {
        let e = e.expect("dir entry");
        if e.file_type().expect("file type").is_file() {
            out.insert(
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).expect("read output"),
            );
        }
    }
    out
}

pub fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Oracle fixture for the yes/no questions of all three subtasks.
pub fn qa_fixture(dataset_dir: &Path, out: &Path) {
    let mut rows = Vec::new();
    for file in ["qa_size.jsonl", "qa_height.jsonl", "qa_position.jsonl"] {
        let qs: Vec<spatialprobe::QaInstance> = read_jsonl(&dataset_dir.join(file));
        for q in qs {
            let prompt = match &q.context {
                Some(c) => format!("{c} {}", q.question),
                None => q.question.clone(),
            };
            rows.push(serde_json::json!({"prompt": prompt, "answer": q.gold.as_str()}));
        }
    }
    write_rows(out, &rows);
}
