mod common;

use std::fs;
use std::path::Path;

use common::{cli, ok, TINY_JSON};
use rearrange::dataset::read_dataset;
use rearrange::infer::InferOutput;
use rearrange::manifest::RunManifest;
use rearrange_core::lang::StructureShape;

fn code(dir: &Path, args: &[&str]) -> i32 {
    cli(dir, args).status.code().expect("exit code")
}

fn setup(count: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.json"), TINY_JSON).unwrap();
    ok(dir.path(), &["gen-data", "--out", "d.jsonl", "--count", count, "--seed", "7"]);
    dir
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn exit_codes() {
    let dir = setup("3");
    let d = dir.path();
    assert_eq!(code(d, &["--help"]), 0);
    assert_eq!(code(d, &["--version"]), 0);
    assert_eq!(code(d, &[]), 1);
    assert_eq!(code(d, &["train", "--task", "nonsense", "--data", "d.jsonl", "--ckpt-out", "x.ck"]), 1);
    assert_eq!(code(d, &["train", "--task", "selection", "--data", "d.jsonl", "--ckpt-out", "x.ck", "--dropout", "1.5"]), 1);
    assert_eq!(code(d, &["eval", "--ckpt", "missing.ck", "--data", "d.jsonl", "--report-out", "r.json"]), 2);
    assert_eq!(code(d, &["train", "--task", "generator", "--data", "missing.jsonl", "--ckpt-out", "x.ck"]), 2);
    fs::write(d.join("junk.txt"), "not json").unwrap();
    assert_eq!(code(d, &["export-plot", "--input", "junk.txt", "--out", "x.svg"]), 2);
    let huge = ["train", "--task", "generator", "--data", "d.jsonl", "--ckpt-out", "x.ck", "--model-config", "tiny.json"];
    let huge: Vec<&str> = huge.iter().copied().chain(["--lr", "1e200", "--clip-norm", "0", "--max-steps", "50"]).collect();
    assert_eq!(code(d, &huge), 3);
}

#[test]
fn gen_data_is_reproducible_and_filtered() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a.jsonl", "b.jsonl"] {
        ok(d, &["gen-data", "--out", out, "--count", "100", "--seed", "7"]);
    }
    assert_eq!(fs::read(d.join("a.jsonl")).unwrap(), fs::read(d.join("b.jsonl")).unwrap());
    let m = manifest(&d.join("a.jsonl.manifest.json"));
    assert_eq!((m.command.as_str(), m.master_seed), ("gen-data", 7));
    assert_eq!(m.flags["count"], 100);
    assert_eq!(m.outputs, vec!["a.jsonl".to_string()]);
    assert!(m.finished_unix >= m.started_unix);

    ok(d, &["gen-data", "--out", "c.jsonl", "--count", "40", "--seed", "1", "--structures", "circle,line"]);
    let data = read_dataset(&d.join("c.jsonl"), None).unwrap();
    assert_eq!(data.examples.len(), 40);
    assert!(data.examples.iter().all(|e| matches!(e.shape(), StructureShape::Circle | StructureShape::Line)));
    assert_eq!(code(d, &["gen-data", "--out", "x.jsonl", "--structures", "spiral"]), 1);
}

#[test]
fn resumed_training_continues_the_step_counter() {
    let dir = setup("10");
    let d = dir.path();
    let base = ["train", "--task", "generator", "--data", "d.jsonl", "--batch", "4", "--seed", "3", "--dropout", "0.1"];
    let with = |extra: &[&'static str]| -> Vec<&'static str> { base.iter().copied().chain(extra.iter().copied()).collect() };
    ok(d, &with(&["--model-config", "tiny.json", "--max-steps", "6", "--ckpt-out", "full.ck"]));
    ok(d, &with(&["--model-config", "tiny.json", "--max-steps", "3", "--ckpt-out", "half.ck"]));
    ok(d, &["train", "--task", "generator", "--data", "d.jsonl", "--resume", "half.ck", "--max-steps", "6", "--ckpt-out", "rest.ck"]);

    let csv = fs::read_to_string(d.join("rest.ck.loss.csv")).unwrap();
    let steps: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["4", "5", "6"]);
    let full_csv = fs::read_to_string(d.join("full.ck.loss.csv")).unwrap();
    assert_eq!(full_csv.lines().skip(4).collect::<Vec<_>>(), csv.lines().skip(1).collect::<Vec<_>>());
    assert_eq!(fs::read(d.join("full.ck")).unwrap(), fs::read(d.join("rest.ck")).unwrap());

    assert_eq!(code(d, &["train", "--task", "binary", "--data", "d.jsonl", "--resume", "half.ck", "--ckpt-out", "x.ck"]), 1);
    assert_eq!(code(d, &["train", "--task", "generator", "--data", "d.jsonl", "--resume", "half.ck", "--seed", "4", "--ckpt-out", "x.ck"]), 1);
    let m = manifest(&d.join("rest.ck.manifest.json"));
    assert_eq!(m.outputs, vec!["rest.ck".to_string(), "rest.ck.loss.csv".to_string()]);
}

#[test]
fn zero_dropout_training_is_repeatable() {
    let dir = setup("6");
    let d = dir.path();
    for out in ["a.ck", "b.ck"] {
        ok(d, &["train", "--task", "selection", "--data", "d.jsonl", "--model-config", "tiny.json", "--max-steps", "4", "--batch", "3", "--dropout", "0.0", "--ckpt-out", out]);
    }
    assert_eq!(fs::read(d.join("a.ck")).unwrap(), fs::read(d.join("b.ck")).unwrap());
    assert_eq!(fs::read(d.join("a.ck.loss.csv")).unwrap(), fs::read(d.join("b.ck.loss.csv")).unwrap());
}

#[test]
fn infer_on_a_memorized_scene_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.json"), TINY_JSON).unwrap();
    ok(d, &["gen-data", "--out", "one.jsonl", "--count", "1", "--seed", "5", "--structures", "line"]);
    let train = |task: &str, steps: &str, out: &str| {
        ok(d, &["train", "--task", task, "--data", "one.jsonl", "--model-config", "tiny.json", "--batch", "1", "--lr", "1e-3", "--max-steps", steps, "--ckpt-out", out]);
    };
    train("selection", "600", "sel.ck");
    train("generator", "1500", "gen.ck");
    ok(d, &[
        "infer", "--ckpt-selection", "sel.ck", "--ckpt-generator", "gen.ck", "--scene", "one.jsonl", "--B", "1", "--dropout-p", "0", "--out", "c.json",
    ]);
    let out: InferOutput = serde_json::from_str(&fs::read_to_string(d.join("c.json")).unwrap()).unwrap();
    assert_eq!(out.candidates.len(), 1);
    let mut selected = out.selected.clone();
    selected.sort_unstable();
    assert_eq!(selected, out.example.query_ids().into_iter().collect::<Vec<_>>());
    assert!(out.candidates[0].success, "{:?}", out.candidates[0].failure);

    ok(d, &[
        "infer", "--ckpt-selection", "sel.ck", "--ckpt-generator", "gen.ck", "--scene", "one.jsonl", "--B", "1", "--dropout-p", "0", "--out", "c2.json",
    ]);
    assert_eq!(fs::read(d.join("c.json")).unwrap(), fs::read(d.join("c2.json")).unwrap());

    ok(d, &["eval", "--ckpt", "gen.ck", "--ckpt-selection", "sel.ck", "--data", "one.jsonl", "--B", "1", "--report-out", "r.json"]);
    for (input, svg) in [("one.jsonl", "s.svg"), ("c.json", "c.svg"), ("r.json", "r.svg")] {
        ok(d, &["export-plot", "--input", input, "--out", svg]);
        roxmltree::Document::parse(&fs::read_to_string(d.join(svg)).unwrap()).expect("well-formed SVG");
    }
    assert!(d.join("r.txt").exists() && d.join("r.examples.jsonl").exists());
    assert_eq!(code(d, &["infer", "--ckpt-selection", "gen.ck", "--ckpt-generator", "gen.ck", "--scene", "one.jsonl", "--out", "x.json"]), 1);
}
