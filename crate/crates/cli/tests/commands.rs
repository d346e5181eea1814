use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn docparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docparse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn synth_fixture(dir: &Path, seed: u64) {
    let seed = seed.to_string();
    let out = docparse(&["synth", "--seed", &seed, "--zero-noise", "-o", path_str(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn relations_of(v: &Value) -> Vec<Value> {
    let mut r = v["relations"].as_array().unwrap().clone();
    r.sort_by_key(|x| x.to_string());
    r
}

#[test]
fn empty_detections_give_empty_structure() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("empty.json");
    fs::write(&input, r#"{"page":{"width":100.0,"height":100.0},"entities":[]}"#).unwrap();
    let out = docparse(&["parse", path_str(&input)]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["entities"], json!([]));
    assert_eq!(v["relations"], json!([]));
}

#[test]
fn malformed_json_fails_with_diagnostic() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.json");
    fs::write(&input, "{not json").unwrap();
    let out = docparse(&["parse", path_str(&input)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json"), "{err}");
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn zero_noise_fixture_parses_back_to_ground_truth() {
    for seed in [1, 2, 3, 11] {
        let dir = TempDir::new().unwrap();
        synth_fixture(dir.path(), seed);
        let output = dir.path().join("parsed.json");
        let out = docparse(&[
            "parse",
            path_str(&dir.path().join("detections.json")),
            "-o",
            path_str(&output),
        ]);
        assert!(out.status.success());
        let parsed = read_json(&output);
        let gt = read_json(&dir.path().join("ground_truth.json"));
        assert_eq!(relations_of(&parsed), relations_of(&gt), "seed {seed}");
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    synth_fixture(dir.path(), 5);
    let det = dir.path().join("detections.json");
    let a = docparse(&["parse", path_str(&det)]);
    let b = docparse(&["parse", path_str(&det)]);
    assert_eq!(a.stdout, b.stdout);

    let other = TempDir::new().unwrap();
    synth_fixture(other.path(), 5);
    for f in ["ground_truth.json", "records.jsonl", "detections.json"] {
        assert_eq!(
            fs::read(dir.path().join(f)).unwrap(),
            fs::read(other.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn several_inputs_fan_out_to_a_directory() {
    let dir = TempDir::new().unwrap();
    let mut inputs = Vec::new();
    for seed in 0..4u64 {
        let sub = dir.path().join(format!("s{seed}"));
        synth_fixture(&sub, seed);
        let input = dir.path().join(format!("page{seed}.json"));
        fs::copy(sub.join("detections.json"), &input).unwrap();
        inputs.push(input);
    }
    let out_dir = dir.path().join("out");
    let mut args = vec!["--jobs", "3", "parse", "-o", path_str(&out_dir)];
    args.extend(inputs.iter().map(|p| path_str(p)));
    let out = docparse(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for seed in 0..4u64 {
        let single = docparse(&["parse", path_str(&inputs[seed as usize])]);
        let batch = fs::read(out_dir.join(format!("page{seed}.structure.json"))).unwrap();
        assert_eq!(single.stdout, batch);
    }
}

#[test]
fn one_failing_document_fails_the_batch() {
    let dir = TempDir::new().unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, r#"{"page":{"width":10.0,"height":10.0},"entities":[]}"#).unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "[").unwrap();
    let out_dir = dir.path().join("out");
    let out = docparse(&["parse", "-o", path_str(&out_dir), path_str(&good), path_str(&bad)]);
    assert!(!out.status.success());
    assert!(out_dir.join("good.structure.json").exists());
}

#[test]
fn timing_flag_reports_stages() {
    let dir = TempDir::new().unwrap();
    synth_fixture(dir.path(), 9);
    let out = docparse(&["--timing", "parse", path_str(&dir.path().join("detections.json"))]);
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("classify") && err.contains("refine"), "{err}");
    let raw = docparse(&["--timing", "--no-refine", "parse", path_str(&dir.path().join("detections.json"))]);
    assert!(String::from_utf8_lossy(&raw.stderr).contains("refine - ms"));
}

#[test]
fn invalid_thresholds_are_rejected() {
    let dir = TempDir::new().unwrap();
    synth_fixture(dir.path(), 1);
    let det = dir.path().join("detections.json");
    for flags in [["--theta1", "0"], ["--theta2", "1.0"], ["--tau-ovlp", "1.5"], ["--max-iterations", "0"]] {
        let mut args = flags.to_vec();
        args.extend(["parse", path_str(&det)]);
        assert!(!docparse(&args).status.success(), "{flags:?}");
    }
}

#[test]
fn print_config_reflects_flags() {
    let out = docparse(&["--print-config", "--theta1", "0.5", "--max-iterations", "12"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["parse"]["relations"]["nesting"]["theta1"], json!(0.5));
    assert_eq!(v["parse"]["relations"]["nesting"]["theta2"], json!(1.2));
    assert_eq!(v["parse"]["refinement"]["max_iterations"], json!(12));
    assert_eq!(v["parse"]["min_confidence"], json!(0.7));
    assert_eq!(v["centroid_gap"], json!(5.0));
    assert_eq!(v["gamma"], json!(0.5));
}

fn cell(id: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Value {
    json!({"id": id, "category": "table_cell", "bbox": [x0, y0, x1, y1]})
}

#[test]
fn tables_recover_grid_and_match_text() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("table.json");
    let cells = json!([
        cell("a", 0.0, 0.0, 50.0, 20.0),
        cell("b", 50.0, 0.0, 100.0, 20.0),
        cell("c", 0.0, 20.0, 50.0, 40.0),
        cell("d", 50.0, 20.0, 100.0, 40.0),
    ]);
    fs::write(&input, cells.to_string()).unwrap();
    let texts = dir.path().join("texts.json");
    fs::write(
        &texts,
        json!([{"id": "t", "category": "content_line", "bbox": [55.0, 25.0, 95.0, 35.0]}]).to_string(),
    )
    .unwrap();
    let out = docparse(&["tables", path_str(&input), "--text-boxes", path_str(&texts)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["shape"], json!([2, 2]));
    assert_eq!(v["matches"], json!([{"cell": "r1c1", "text": "t"}]));

    let low = docparse(&["tables", path_str(&input), "--gamma", "0.4"]);
    assert!(!low.status.success());
}

#[test]
fn tables_without_cells_fail() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("table.json");
    fs::write(&input, "[]").unwrap();
    assert!(!docparse(&["tables", path_str(&input)]).status.success());
}

#[test]
fn weaklabel_writes_noisy_structure() {
    let dir = TempDir::new().unwrap();
    synth_fixture(dir.path(), 4);
    let gt = read_json(&dir.path().join("ground_truth.json"));
    let h = gt["page"]["height"].as_f64().unwrap().to_string();
    let out_file = dir.path().join("weak.json");
    let out = docparse(&[
        "weaklabel",
        path_str(&dir.path().join("records.jsonl")),
        "--page-height",
        &h,
        "-o",
        path_str(&out_file),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&out_file);
    assert_eq!(v["noisy"], json!(true));
    assert!(!v["entities"].as_array().unwrap().is_empty());
}

#[test]
fn weaklabel_rejects_unbalanced_stream() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("r.jsonl");
    fs::write(&input, r#"{"page":1,"token_kind":"environment_begin","env_name":"figure"}"#).unwrap();
    assert!(!docparse(&["weaklabel", path_str(&input)]).status.success());
}

#[test]
fn eval_self_comparison_is_perfect() {
    let dir = TempDir::new().unwrap();
    synth_fixture(dir.path(), 8);
    let gt = dir.path().join("ground_truth.json");
    let out = docparse(&[
        "eval",
        "--pred",
        path_str(&gt),
        "--gt",
        path_str(&gt),
        "--iou",
        "0.8",
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["mean_ap"], json!(100.0));
    assert_eq!(v["relation_scores"]["all"]["f1"], json!(1.0));

    let text = docparse(&["eval", "--pred", path_str(&gt), "--gt", path_str(&gt), "--eleven-point"]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("mAP"));
}

#[test]
fn synth_accepts_a_layout_file() {
    let dir = TempDir::new().unwrap();
    let layout = dir.path().join("layout.json");
    let spec = json!({
        "seed": 3,
        "columns": 2,
        "blocks_per_column": 2,
        "floats": [
            {"kind": "table", "rows": 3, "cols": 2, "full_width": true},
            {"kind": "figure", "graphics": 2}
        ]
    });
    fs::write(&layout, spec.to_string()).unwrap();
    let fixture = dir.path().join("fx");
    let out = docparse(&["synth", "--layout", path_str(&layout), "--zero-noise", "-o", path_str(&fixture)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed = docparse(&["parse", path_str(&fixture.join("detections.json"))]);
    let parsed: Value = serde_json::from_slice(&parsed.stdout).unwrap();
    let gt = read_json(&fixture.join("ground_truth.json"));
    assert_eq!(relations_of(&parsed), relations_of(&gt));

    let bad = dir.path().join("bad_layout.json");
    fs::write(&bad, json!({"seed": 1, "columns": 3, "blocks_per_column": 1}).to_string()).unwrap();
    let out = docparse(&["synth", "--layout", path_str(&bad), "-o", path_str(&dir.path().join("x"))]);
    assert!(!out.status.success());
}
