use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use complaint_core::ablation::run_ablation;
use complaint_core::checkpoint::load_checkpoint;
use complaint_core::data_model::{read_embeddings, AspectState, DatasetManifest, Split};
use complaint_core::gradcheck::gradcheck as check_gradients;
use complaint_core::metrics::EvaluationReport;
use complaint_core::model::{Model, ModelConfig, Variant};
use complaint_core::synthetic::generate;
use complaint_core::train::{predict_all, summarize, train as fit, Predictions, TrainOutputs};
use complaint_core::{predict_labels, AspectCatalog};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::failure::{io_failure, Failure};

pub const CONFIG_ECHO: &str = "config.echo";
pub const CHECKPOINT: &str = "checkpoint";
pub const LOSS_LOG: &str = "loss.csv";
pub const REPORT: &str = "report.csv";
pub const PREDICTIONS: &str = "preds.jsonl";
pub const ABLATION_RUNS: &str = "runs.csv";

fn prepare_out_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = cfg.paths.out_dir.clone().expect("checked by require");
    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let echo = dir.join(CONFIG_ECHO);
    fs::write(&echo, cfg.to_toml()).map_err(|e| io_failure(&echo, e))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest, Failure> {
    let path = cfg.paths.manifest.as_ref().expect("checked by require");
    if !path.is_file() {
        return Err(Failure::Data(anyhow::anyhow!("manifest not found: {}", path.display())));
    }
    Ok(DatasetManifest::load(path)?)
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    review_id: &'a str,
    gold: [u8; 5],
    pred: [u8; 5],
}

fn write_predictions(dir: &Path, preds: &Predictions, catalog: &AspectCatalog) -> Result<EvaluationReport, Failure> {
    let (summary, report) = summarize(preds, catalog)?;
    let path = dir.join(PREDICTIONS);
    let mut out = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
    for ((id, g), p) in preds.review_ids.iter().zip(&preds.golds).zip(&preds.preds) {
        let line = serde_json::to_string(&PredictionLine {
            review_id: id,
            gold: g.values(),
            pred: p.values(),
        })
        .expect("plain data");
        writeln!(out, "{line}").map_err(|e| io_failure(&path, e))?;
    }
    write_file(&dir.join(REPORT), &report.to_csv())?;
    info!(
        "exact match {:.4}, mean AC micro-F1 {:.4}, hamming {:.4}",
        summary.exact_match, summary.ac_micro_f1, summary.hamming
    );
    Ok(report)
}

pub fn gen_synthetic(cfg: &RunConfig) -> Result<(), Failure> {
    cfg.require(&["paths.out_dir"])?;
    let dir = prepare_out_dir(cfg)?;
    let manifest = generate(&cfg.synth, &dir)?;
    println!("wrote {} samples; manifest {}", cfg.synth.num_samples, manifest.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), Failure> {
    cfg.require(&["paths.manifest", "paths.out_dir"])?;
    cfg.train.validate()?;
    let manifest = load_manifest(cfg)?;
    let dir = prepare_out_dir(cfg)?;
    let train_set = manifest.load_split(Split::Train)?;
    let test_set = manifest.load_split(Split::Test)?;
    let model = Model::<f32>::new(cfg.model_config(), cfg.train.seed)?;
    let outputs = TrainOutputs {
        checkpoint: Some(dir.join(CHECKPOINT)),
        loss_log: Some(dir.join(LOSS_LOG)),
    };
    let out = fit(model, &train_set, &test_set, &manifest.aspect_catalog, &cfg.train, &outputs)?;
    let last = out.log.last().expect("at least one epoch");
    println!("epoch {}: train loss {:.6}", last.epoch, last.train_loss);
    if !test_set.is_empty() {
        let report = write_predictions(&dir, &predict_all(&out.model, &test_set)?, &manifest.aspect_catalog)?;
        print!("{}", report.pretty());
    }
    Ok(())
}

fn parse_split(s: &str) -> Result<Split, Failure> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(Failure::Usage(format!("unknown split `{s}` (expected train or test)"))),
    }
}

pub fn evaluate(cfg: &RunConfig, split: &str) -> Result<(), Failure> {
    let split = parse_split(split)?;
    cfg.require(&["paths.manifest", "paths.checkpoint", "paths.out_dir"])?;
    let manifest = load_manifest(cfg)?;
    let model: Model<f32> = load_checkpoint(cfg.paths.checkpoint.as_ref().expect("checked"))?;
    let reviews = manifest.load_split(split)?;
    let dir = prepare_out_dir(cfg)?;
    let report = write_predictions(&dir, &predict_all(&model, &reviews)?, &manifest.aspect_catalog)?;
    print!("{}", report.pretty());
    Ok(())
}

fn state_name(s: AspectState) -> &'static str {
    match s {
        AspectState::Absent => "absent",
        AspectState::NonComplaint => "non-complaint",
        AspectState::Complaint => "complaint",
    }
}

#[derive(Serialize)]
struct AspectPrediction {
    aspect: String,
    state: &'static str,
    probabilities: [f32; 3],
}

#[derive(Serialize)]
struct PredictOutput {
    review_id: String,
    num_chunks: usize,
    label: [u8; 5],
    aspects: Vec<AspectPrediction>,
}

pub fn predict(cfg: &RunConfig, embedding: &Path, json: bool) -> Result<(), Failure> {
    cfg.require(&["paths.checkpoint"])?;
    let model: Model<f32> = load_checkpoint(cfg.paths.checkpoint.as_ref().expect("checked"))?;
    let catalog = match &cfg.paths.manifest {
        Some(p) => load_manifest(cfg).map(|m| m.aspect_catalog).map_err(|e| {
            Failure::Data(anyhow::anyhow!("{e} (while reading aspect names from {})", p.display()))
        })?,
        None => AspectCatalog::default(),
    };
    let review = read_embeddings(embedding)?;
    let logits = model.predict_review(&review)?;
    let label = predict_labels(&logits);
    let probs = logits.probabilities();
    let out = PredictOutput {
        review_id: review.review_id.clone(),
        num_chunks: review.num_chunks(),
        label: label.values(),
        aspects: (0..5)
            .map(|j| AspectPrediction {
                aspect: catalog.name(j).to_string(),
                state: state_name(label.get(j)),
                probabilities: [probs[[j, 0]], probs[[j, 1]], probs[[j, 2]]],
            })
            .collect(),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&out).expect("plain data"));
    } else {
        println!("review {} ({} chunks), label {}", out.review_id, out.num_chunks, label);
        println!("{:<18} {:<14} {:>8} {:>8} {:>10}", "aspect", "state", "p_absent", "p_non", "p_complaint");
        for a in &out.aspects {
            println!(
                "{:<18} {:<14} {:>8.4} {:>8.4} {:>10.4}",
                a.aspect, a.state, a.probabilities[0], a.probabilities[1], a.probabilities[2]
            );
        }
    }
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<(), Failure> {
    cfg.require(&["paths.manifest", "paths.out_dir"])?;
    cfg.train.validate()?;
    if cfg.ablate.seeds.is_empty() || cfg.ablate.variants.is_empty() {
        return Err(Failure::Usage("ablate.seeds and ablate.variants must be non-empty".into()));
    }
    let manifest = load_manifest(cfg)?;
    let dir = prepare_out_dir(cfg)?;
    let report = run_ablation::<f32>(
        &manifest.load_split(Split::Train)?,
        &manifest.load_split(Split::Test)?,
        &manifest.aspect_catalog,
        cfg.model_config(),
        &cfg.train,
        &cfg.ablate.variants,
        &cfg.ablate.seeds,
    )?;
    write_file(&dir.join(REPORT), &report.summary_csv())?;
    write_file(&dir.join(ABLATION_RUNS), &report.runs_csv())?;
    print!("{}", report.pretty());
    Ok(())
}

pub fn gradcheck(dim: usize, heads: usize, blocks: usize, chunks: usize, variant: &str, seed: u64) -> Result<(), Failure> {
    let variant: Variant = variant.parse().map_err(|e: complaint_core::Error| Failure::Usage(e.to_string()))?;
    let config = ModelConfig::tiny(dim, heads, blocks).with_variant(variant);
    let report = check_gradients(config, chunks, seed)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Numerical(anyhow::anyhow!(
            "gradient check failed: max relative error {:.3e}",
            report.max_rel_error()
        )))
    }
}
