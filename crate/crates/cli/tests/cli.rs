use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use complaint_core::metrics::{evaluate_predictions, EvaluationReport};
use complaint_core::{AspectCatalog, AspectLabelVector, DatasetManifest};

fn complaint(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_complaint"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: [&str; 6] = [
    "--set",
    "model.dim=16",
    "--set",
    "model.num_heads=2",
    "--set",
    "model.classifier_blocks=2",
];

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen-synthetic", "--out", "data", "--set", "synth.dim=16", "--set", "synth.max_chunks=3"];
    args.extend_from_slice(extra);
    let o = complaint(&args, dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_manifest_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = complaint(&["train", "--manifest", "no/such/manifest.json", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such/manifest.json"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = complaint(&["train"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("paths.manifest") && msg.contains("paths.out_dir"), "{msg}");

    let o = complaint(&["train", "--set", "train.learning_rate=1", "--manifest", "m", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"));

    assert_eq!(complaint(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(complaint(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(complaint(&["evaluate", "--split", "dev"], dir.path()).status.code(), Some(1));
}

#[test]
fn corrupt_embedding_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--set", "synth.num_samples=4"]);
    let train = complaint(
        &[&["train", "--manifest", "data/manifest.json", "--out", "run", "--set", "train.epochs=1"][..], &TINY].concat(),
        dir.path(),
    );
    assert!(train.status.success(), "{}", stderr(&train));
    fs::write(dir.path().join("bad.mceb"), b"MCEBxxxx").unwrap();
    let o = complaint(&["predict", "--checkpoint", "run/checkpoint", "bad.mceb"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.mceb"), "{}", stderr(&o));
}

#[test]
fn generation_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path(), &["--set", "synth.num_samples=6", "--seed", "3"]);
    gen(b.path(), &["--set", "synth.num_samples=6", "--seed", "3"]);
    for entry in fs::read_dir(a.path().join("data/emb")).unwrap() {
        let p = entry.unwrap().path();
        let q = b.path().join("data/emb").join(p.file_name().unwrap());
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
    }
    assert_eq!(
        fs::read(a.path().join("data/manifest.json")).unwrap(),
        fs::read(b.path().join("data/manifest.json")).unwrap()
    );
}

#[test]
fn overfit_then_predict_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(
        d,
        &["--set", "synth.num_samples=16", "--set", "synth.test_fraction=0.0", "--set", "synth.signal_strength=3.0", "--seed", "1"],
    );
    let train_args = [
        &["train", "--manifest", "data/manifest.json", "--out", "run", "--seed", "1"][..],
        &TINY,
        &[
            "--set", "train.lr_isec=0.1", "--set", "train.lr_classifier=0.01", "--set", "train.dropout=0.0",
            "--set", "train.epochs=100",
        ],
    ]
    .concat();
    let o = complaint(&train_args, d);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["config.echo", "checkpoint", "loss.csv"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }

    let manifest = DatasetManifest::load(d.join("data/manifest.json")).unwrap();
    for s in &manifest.samples {
        let file = Path::new("data").join(&s.embedding_file);
        let o = complaint(&["predict", "--checkpoint", "run/checkpoint", "--json", file.to_str().unwrap()], d);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        let label: Vec<i64> = v["label"].as_array().unwrap().iter().map(|x| x.as_i64().unwrap()).collect();
        assert_eq!(AspectLabelVector::from_values(&label).unwrap(), s.gold_label, "{}", s.review_id);
        assert_eq!(v["review_id"], s.review_id.as_str());
    }

    // evaluate, then recompute the report from the dumped pairs
    let o = complaint(
        &["evaluate", "--manifest", "data/manifest.json", "--checkpoint", "run/checkpoint", "--out", "eval", "--split", "train"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report_text = fs::read_to_string(d.join("eval/report.csv")).unwrap();
    let (mut golds, mut preds) = (Vec::new(), Vec::new());
    for line in fs::read_to_string(d.join("eval/preds.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let vec_of = |k: &str| -> AspectLabelVector {
            let xs: Vec<i64> = v[k].as_array().unwrap().iter().map(|x| x.as_i64().unwrap()).collect();
            AspectLabelVector::from_values(&xs).unwrap()
        };
        golds.push(vec_of("gold"));
        preds.push(vec_of("pred"));
    }
    assert_eq!(golds.len(), 16);
    let recomputed = evaluate_predictions(&golds, &preds, &AspectCatalog::default()).unwrap();
    assert_eq!(recomputed.to_csv(), report_text);
    assert_eq!(EvaluationReport::from_csv(&report_text).unwrap(), recomputed);
    assert_eq!(golds, preds);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, &["--set", "synth.num_samples=12"]);
    let args = [
        &["train", "--manifest", "data/manifest.json", "--out", "a", "--set", "train.epochs=2"][..],
        &TINY,
    ]
    .concat();
    assert!(complaint(&args, d).status.success());
    let o = complaint(&["train", "--config", "a/config.echo", "--out", "b"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["checkpoint", "loss.csv", "report.csv", "preds.jsonl"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ablate_reports_every_condition() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, &["--set", "synth.num_samples=20", "--set", "synth.test_fraction=0.25"]);
    let args = [
        &["ablate", "--manifest", "data/manifest.json", "--out", "abl", "--set", "train.epochs=2", "--set", "ablate.seeds=[0]"][..],
        &TINY,
    ]
    .concat();
    let o = complaint(&args, d);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(d.join("abl/report.csv")).unwrap();
    let conditions: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(conditions, ["Video Only", "Audio Only", "Multimodal", "Frozen-only", "Without ISEC"]);
    assert!(d.join("abl/runs.csv").is_file() && d.join("abl/config.echo").is_file());
}

#[test]
fn gradcheck_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = complaint(&["gradcheck", "--seed", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    let o = complaint(&["gradcheck", "--dim", "64"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}
