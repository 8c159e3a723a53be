mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use spatialprobe::benchmark::ScaleInstance;
use spatialprobe::cli::LOCK_FILE;
use spatialprobe::probing::{Prediction, ProbeManifest};
use spatialprobe::prompts::{PromptTemplate, TemplateKind};

use common::*;

fn masked_probe(out: &Path, ds: &Path, task: &str, adapter: &str, extra: &[&str]) -> std::process::Output {
    let mut args = vec!["probe", "--out", p(out), "--task", task, "--dataset-dir", p(ds), "--adapter", adapter];
    args.extend_from_slice(extra);
    run(&args)
}

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn build_is_idempotent() {
    let dir = tmp();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    build(&a);
    build(&b);
    let first = snapshot(&a);
    let mut other = snapshot(&b);
    // the run manifest records the output path
    let mut same_dir = first.clone();
    same_dir.remove("run_manifest.build.json");
    other.remove("run_manifest.build.json");
    assert_eq!(same_dir, other);
    build(&a);
    assert_eq!(first, snapshot(&a));
    assert!(!a.join(LOCK_FILE).exists());
}

#[test]
fn oracle_masked_probe_on_height() {
    let dir = tmp();
    let ds = dir.path().join("ds");
    build(&ds);
    let fixture = dir.path().join("f.jsonl");
    masked_scale_fixture(&ds.join("height.jsonl"), &fixture);
    let out = dir.path().join("out");
    let o = masked_probe(&out, &ds, "height", &oracle_adapter(&fixture), &["--shards", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval = read_json(&out.join("eval_report.json"));
    assert_eq!(eval["accuracy"], 1.0);
    let manifest = read_json(&out.join("run_manifest.probe.json"));
    assert_eq!(manifest["scoring_mode"], "single_token");
    assert_eq!(manifest["started_at"].as_u64(), Some(EPOCH.parse().unwrap()));
}

#[test]
fn failed_response_becomes_unrecognized() {
    let dir = tmp();
    let ds = dir.path().join("ds");
    build(&ds);
    let fixture = dir.path().join("f.jsonl");
    masked_scale_fixture(&ds.join("size.jsonl"), &fixture);
    let rows: Vec<ScaleInstance> = read_jsonl(&ds.join("size.jsonl"));
    let victim = PromptTemplate::default_for(TemplateKind::MaskedScale).render(&rows[0]).unwrap();
    let adapter = format!("{} --fail-prompt-contains '{}'", oracle_adapter(&fixture), victim);
    let out = dir.path().join("out");
    let o = masked_probe(&out, &ds, "size", &adapter, &[]);
    assert!(o.status.success(), "{}", stderr(&o));

    let preds: Vec<Prediction> = read_jsonl(&out.join("predictions.jsonl"));
    assert_eq!(preds.len(), 500);
    let missing: Vec<_> = preds.iter().filter(|p| p.label.is_none()).collect();
    assert_eq!(missing.len(), 1);
    assert_eq!(missing[0].instance_id, rows[0].id);
    let eval = read_json(&out.join("eval_report.json"));
    assert_eq!(eval["accuracy"], 499.0 / 500.0);
    assert_eq!(eval["subset_accuracy"], 1.0);
}

#[test]
fn crashed_adapter_is_retried_once() {
    let dir = tmp();
    let ds = dir.path().join("ds");
    build(&ds);
    let fixture = dir.path().join("f.jsonl");
    masked_scale_fixture(&ds.join("size.jsonl"), &fixture);
    let marker = dir.path().join("marker");
    let adapter = format!("{} --fail-first-run {}", oracle_adapter(&fixture), p(&marker));
    let out = dir.path().join("out");
    let o = masked_probe(&out, &ds, "size", &adapter, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(marker.exists());
    assert_eq!(read_json(&out.join("eval_report.json"))["accuracy"], 1.0);
}

#[test]
fn persistent_adapter_failure_is_not_cached() {
    let dir = tmp();
    let ds = dir.path().join("ds");
    build(&ds);
    let out = dir.path().join("out");
    let adapter = format!("{} --exit-code 7", stub());
    let o = masked_probe(&out, &ds, "size", &adapter, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval = read_json(&out.join("eval_report.json"));
    assert_eq!(eval["n_recognized"], 0);
    let cached = fs::read_dir(out.join("cache"))
        .map(|d| d.flatten().any(|e| e.path().join("responses.jsonl").exists()))
        .unwrap_or(false);
    assert!(!cached);
}

#[test]
fn unknown_response_id_aborts() {
    let dir = tmp();
    let ds = dir.path().join("ds");
    build(&ds);
    let adapter = format!("{} --inject-unknown", constant_adapter());
    let o = masked_probe(&dir.path().join("out"), &ds, "size", &adapter, &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown request id"), "{}", stderr(&o));
}

#[test]
fn cache_replays_without_adapter() {
    let dir = tmp();
    let ds = dir.path().join("ds");
    build(&ds);
    let fixture = dir.path().join("f.jsonl");
    masked_scale_fixture(&ds.join("size.jsonl"), &fixture);
    let cache = dir.path().join("cache");
    let first = dir.path().join("first");
    let o = masked_probe(&first, &ds, "size", &oracle_adapter(&fixture), &["--cache-dir", p(&cache)]);
    assert!(o.status.success(), "{}", stderr(&o));

    // an adapter that would fail proves the second run never calls it
    let second = dir.path().join("second");
    let broken = format!("{} --exit-code 9", stub());
    let o = masked_probe(&second, &ds, "size", &broken, &["--cache-dir", p(&cache)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(first.join("predictions.jsonl")).unwrap(),
        fs::read(second.join("predictions.jsonl")).unwrap()
    );

    let third = dir.path().join("third");
    run_ok(&[
        "probe", "--out", p(&third), "--task", "size", "--dataset-dir", p(&ds), "--cache-dir", p(&cache),
    ]);
    assert_eq!(
        fs::read(first.join("predictions.jsonl")).unwrap(),
        fs::read(third.join("predictions.jsonl")).unwrap()
    );
}

#[test]
fn missing_adapter_and_cache_is_an_error() {
    let dir = tmp();
    let ds = dir.path().join("ds");
    build(&ds);
    let o = run(&["probe", "--out", p(&dir.path().join("out")), "--task", "size", "--dataset-dir", p(&ds)]);
    assert!(!o.status.success());
}

fn ism_scale_run(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let ds = root.join("ds");
    build(&ds);
    let fixture = root.join("ism.jsonl");
    ism_scale_fixture(&ds.join("size.jsonl"), &fixture);
    let scenes = root.join("scenes");
    let adapter = format!("{} --scenes {}", oracle_adapter(&fixture), p(&scenes));
    let probe = root.join("ism");
    run_ok(&[
        "probe", "--out", p(&probe), "--task", "size", "--kind", "ism_box", "--dataset-dir", p(&ds), "--adapter",
        &adapter, "--shards", "2",
    ]);
    (ds, scenes)
}

#[test]
fn image_pipeline_recovers_scene_truth() {
    let dir = tmp();
    let root = dir.path();
    let (ds, scenes) = ism_scale_run(root);
    let images: Vec<serde_json::Value> = read_jsonl(&root.join("ism/images.jsonl"));
    assert_eq!(images.len(), 500);

    let out = root.join("eval");
    run_ok(&[
        "eval-images", "--out", p(&out), "--task", "size", "--dataset-dir", p(&ds), "--manifest",
        p(&root.join("ism/ism_manifest.json")), "--detections", p(&scenes.join("detections")), "--depth",
        p(&scenes.join("depth")),
    ]);
    let eval = read_json(&out.join("eval_report.json"));
    assert_eq!(eval["recognized_ratio"], 1.0);
    assert_eq!(eval["subset_accuracy"], 1.0);
    assert_eq!(eval["accuracy"], 1.0);
    let judgments: Vec<serde_json::Value> = read_jsonl(&out.join("judgments.jsonl"));
    assert!(judgments.iter().all(|j| j["score_a"].is_number() && j["score_b"].is_number()));
}

#[test]
fn empty_detections_impute_chance() {
    let dir = tmp();
    let root = dir.path();
    let ds = root.join("ds");
    build(&ds);
    let probe = root.join("ism");
    // no adapter: the manifest is still emitted
    run_ok(&["probe", "--out", p(&probe), "--task", "position", "--kind", "ism_box", "--dataset-dir", p(&ds)]);
    let empty = root.join("empty");
    fs::create_dir_all(&empty).unwrap();
    let out = root.join("eval");
    run_ok(&[
        "eval-images", "--out", p(&out), "--task", "position", "--dataset-dir", p(&ds), "--manifest",
        p(&probe.join("ism_manifest.json")), "--detections", p(&empty), "--depth", p(&empty),
    ]);
    let eval = read_json(&out.join("eval_report.json"));
    assert_eq!(eval["recognized_ratio"], 0.0);
    assert!((eval["accuracy"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert_eq!(eval["imputed"], true);

    // seeded sampling is reproducible
    let (s1, s2) = (root.join("s1"), root.join("s2"));
    for o in [&s1, &s2] {
        run_ok(&[
            "eval-images", "--out", p(o), "--task", "position", "--dataset-dir", p(&ds), "--manifest",
            p(&probe.join("ism_manifest.json")), "--detections", p(&empty), "--depth", p(&empty), "--imputation",
            "sampled", "--seed", "11",
        ]);
    }
    assert_eq!(
        fs::read(s1.join("eval_report.json")).unwrap(),
        fs::read(s2.join("eval_report.json")).unwrap()
    );
}

#[test]
fn human_annotations_are_aggregated() {
    let dir = tmp();
    let root = dir.path();
    let ds = root.join("ds");
    build(&ds);
    let probe = root.join("ism");
    run_ok(&["probe", "--out", p(&probe), "--task", "position", "--kind", "ism_box", "--dataset-dir", p(&ds)]);
    let manifest = ProbeManifest::load(&probe.join("ism_manifest.json")).unwrap();
    let golds: BTreeMap<String, String> = read_jsonl::<spatialprobe::PositionScenario>(&ds.join("position.jsonl"))
        .into_iter()
        .map(|s| (s.id.clone(), s.relation.to_string()))
        .collect();

    let mut lines = String::new();
    for (i, e) in manifest.requests.iter().enumerate() {
        let gold = &golds[&e.instance_id];
        lines.push_str(&serde_json::json!({"image_id": e.request.id, "annotator": "a1", "label": gold}).to_string());
        lines.push('\n');
        if i % 2 == 0 {
            lines.push_str(&serde_json::json!({"image_id": e.request.id, "annotator": "a2", "label": null}).to_string());
            lines.push('\n');
        }
    }
    let ann = root.join("ann.jsonl");
    fs::write(&ann, lines).unwrap();
    let out = root.join("human");
    run_ok(&[
        "eval-images", "--out", p(&out), "--task", "position", "--kind", "ism_human", "--dataset-dir", p(&ds),
        "--manifest", p(&probe.join("ism_manifest.json")), "--annotations", p(&ann),
    ]);
    let rep = read_json(&out.join("human_eval_report.json"));
    assert_eq!(rep["per_annotator"]["a1"]["accuracy"], 1.0);
    // a2 recognized nothing: every image gets chance mass over four relations
    assert!((rep["per_annotator"]["a2"]["accuracy"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert!((rep["mean"]["accuracy"].as_f64().unwrap() - 0.625).abs() < 1e-12);
    assert_eq!(rep["doubly_annotated"], 112);
}

#[test]
fn analyze_and_report() {
    let dir = tmp();
    let root = dir.path();
    let ds = root.join("ds");
    build(&ds);
    let fixture = root.join("f.jsonl");
    masked_scale_fixture(&ds.join("size.jsonl"), &fixture);
    let oracle = root.join("oracle");
    assert!(masked_probe(&oracle, &ds, "size", &oracle_adapter(&fixture), &[]).status.success());
    let constant = root.join("constant");
    assert!(masked_probe(&constant, &ds, "size", &constant_adapter(), &[]).status.success());

    let analysis = root.join("analysis");
    run_ok(&[
        "analyze", "--out", p(&analysis), "--task", "size", "--dataset-dir", p(&ds), "--predictions",
        p(&oracle.join("predictions.jsonl")), p(&constant.join("predictions.jsonl")),
    ]);
    let rep = read_json(&analysis.join("consistency_report.json"));
    let row = |name: &str| {
        rep.as_array()
            .and_then(|rows| rows.iter().find(|r| r[0] == name).map(|r| r[1].clone()))
            .or_else(|| rep.get(name).cloned())
            .unwrap_or_else(|| panic!("no row {name} in {rep}"))
    };
    // oracle predictions follow a total order
    assert_eq!(row("oracle")["symmetry_pct"], 1.0);
    assert_eq!(row("oracle")["transitivity_pct"], 1.0);
    // always "larger": every reversed pair disagrees, every chain agrees
    assert_eq!(row("constant")["symmetry_pct"], 0.0);
    assert_eq!(row("constant")["transitivity_pct"], 1.0);
    let text = fs::read_to_string(analysis.join("consistency_report.txt")).unwrap();
    assert!(text.contains("oracle") && text.contains("constant"));

    let report = root.join("report");
    run_ok(&["report", "--out", p(&report), "--runs", p(&oracle), p(&constant)]);
    let txt = fs::read_to_string(report.join("report.txt")).unwrap();
    assert!(txt.contains("oracle") && txt.contains("constant"), "{txt}");
}

#[test]
fn qa_probe_scores_yes_no() {
    let dir = tmp();
    let root = dir.path();
    let ds = root.join("ds");
    build(&ds);
    let fixture = root.join("qa.jsonl");
    qa_fixture(&ds, &fixture);
    let oracle = root.join("oracle");
    run_ok(&[
        "probe", "--out", p(&oracle), "--task", "qa", "--kind", "qa", "--dataset-dir", p(&ds), "--adapter",
        &oracle_adapter(&fixture),
    ]);
    let eval = read_json(&oracle.join("eval_report.json"));
    for sub in ["size", "height", "position"] {
        assert_eq!(eval[sub]["accuracy"], 1.0, "{sub}");
    }
    let constant = root.join("constant");
    run_ok(&[
        "probe", "--out", p(&constant), "--task", "qa", "--kind", "qa", "--dataset-dir", p(&ds), "--adapter",
        &constant_adapter(),
    ]);
    let eval = read_json(&constant.join("eval_report.json"));
    for sub in ["size", "height", "position"] {
        assert_eq!(eval[sub]["accuracy"], 0.5, "{sub}");
    }
}

#[test]
fn locked_output_directory_is_rejected() {
    let dir = tmp();
    let out = dir.path().join("ds");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(LOCK_FILE), "").unwrap();
    let o = run(&["build", "--out", p(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("locked"), "{}", stderr(&o));
    assert!(!out.join("size.jsonl").exists());
}

#[test]
fn config_file_and_flag_override() {
    let dir = tmp();
    let root = dir.path();
    let ds = root.join("ds");
    build(&ds);
    let fixture = root.join("f.jsonl");
    masked_scale_fixture(&ds.join("size.jsonl"), &fixture);
    let cfg = root.join("run.toml");
    fs::write(
        &cfg,
        format!(
            "task = \"height\"\ndataset_dir = {:?}\nadapter = {:?}\nk = 5\n",
            p(&ds),
            oracle_adapter(&fixture)
        ),
    )
    .unwrap();
    let out = root.join("out");
    run_ok(&["probe", "--config", p(&cfg), "--out", p(&out), "--task", "size"]);
    let manifest = read_json(&out.join("run_manifest.probe.json"));
    assert_eq!(manifest["config"]["task"], "size");
    assert_eq!(read_json(&out.join("eval_report.json"))["accuracy"], 1.0);

    fs::write(&cfg, "task = \"size\"\nbogus = 1\n").unwrap();
    let o = run(&["probe", "--config", p(&cfg), "--out", p(&root.join("bad"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}
