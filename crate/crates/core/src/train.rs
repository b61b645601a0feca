//! Mini-batch training loop with per-group Adam, seeded shuffling and
//! dropout, per-epoch evaluation and a CSV loss log.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::chunking::pad_batch;
use crate::data_model::{AspectCatalog, AspectLabelVector, ChunkedReview};
use crate::error::{Error, Result};
use crate::fusion::{multitask_loss, predict_labels};
use crate::metrics::{evaluate_predictions, exact_match, hamming_loss, EvaluationReport};
use crate::model::{Model, SampleInput};
use crate::nn::ForwardMode;
use crate::optim::{adam_step, clip_global_norm, AdamConfig, GroupLearningRates, OptimizerState};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_isec: f64,
    pub lr_classifier: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Global gradient-norm cap; off unless set.
    pub clip_norm: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_isec: 1e-5,
            lr_classifier: 1e-6,
            batch_size: 8,
            epochs: 100,
            dropout: 0.2,
            seed: 0,
            clip_norm: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Learning rates may be zero (a frozen run) but not negative.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_isec >= 0.0 && self.lr_classifier >= 0.0) {
            return bad(format!("learning rates must be >= 0 (got {} / {})", self.lr_isec, self.lr_classifier));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("clip_norm must be > 0, got {c}"));
            }
        }
        Ok(())
    }

    pub fn learning_rates(&self) -> GroupLearningRates {
        GroupLearningRates {
            isec: self.lr_isec,
            classifier: self.lr_classifier,
        }
    }
}

/// Held-out scores computed after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub loss: f64,
    pub exact_match: f64,
    pub ac_micro_f1: f64,
    pub hamming: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub test: Option<EvalSummary>,
}

pub const LOSS_CSV_HEADER: &str = "epoch,train_loss,test_loss,test_exact_match,test_ac_micro_f1,test_hamming";

pub fn loss_log_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in log {
        let _ = write!(s, "{},{}", r.epoch, r.train_loss);
        match r.test {
            Some(t) => {
                let _ = writeln!(s, ",{},{},{},{}", t.loss, t.exact_match, t.ac_micro_f1, t.hamming);
            }
            None => s.push_str(",,,,\n"),
        }
    }
    s
}

pub fn write_loss_log(log: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, loss_log_csv(log)).map_err(|e| Error::io(path, e))
}

/// Gold labels, predictions and per-sample losses for a set of reviews.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub review_ids: Vec<String>,
    pub golds: Vec<AspectLabelVector>,
    pub preds: Vec<AspectLabelVector>,
    pub losses: Vec<f64>,
}

/// Eval-mode predictions. Every review must carry a gold label.
pub fn predict_all<F: Scalar>(model: &Model<F>, reviews: &[ChunkedReview]) -> Result<Predictions> {
    let mut out = Predictions {
        review_ids: Vec::with_capacity(reviews.len()),
        golds: Vec::with_capacity(reviews.len()),
        preds: Vec::with_capacity(reviews.len()),
        losses: Vec::with_capacity(reviews.len()),
    };
    for r in reviews {
        let gold = gold_of(r)?;
        let logits = model.predict_review(r)?;
        out.review_ids.push(r.review_id.clone());
        out.losses.push(multitask_loss(&logits, &gold).to_f64_value());
        out.preds.push(predict_labels(&logits));
        out.golds.push(gold);
    }
    Ok(out)
}

pub fn summarize(pred: &Predictions, catalog: &AspectCatalog) -> Result<(EvalSummary, EvaluationReport)> {
    let report = evaluate_predictions(&pred.golds, &pred.preds, catalog)?;
    let summary = EvalSummary {
        loss: pred.losses.iter().sum::<f64>() / pred.losses.len() as f64,
        exact_match: exact_match(&pred.golds, &pred.preds)?,
        ac_micro_f1: report.mean_ac_micro_f1(),
        hamming: hamming_loss(&pred.golds, &pred.preds)?,
    };
    Ok((summary, report))
}

fn gold_of(r: &ChunkedReview) -> Result<AspectLabelVector> {
    r.gold_label
        .ok_or_else(|| Error::InvalidReview(format!("review {} has no gold label", r.review_id)))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub model: Model<F>,
    pub log: Vec<EpochRecord>,
}

/// Where the trainer persists state.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Final checkpoint; on a numerical abort the last good model is written
    /// here instead.
    pub checkpoint: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
}

/// Trains `model` in place of its current parameters.
///
/// Each epoch shuffles the training indices (Fisher–Yates, seeded), walks
/// them in batches of `batch_size` (last partial batch kept), averages the
/// per-sample gradients and takes one Adam step. The reported train loss is
/// the mean of the per-sample losses seen during the epoch, summed in index
/// order so the value does not depend on the shuffle.
pub fn train<F: Scalar>(
    mut model: Model<F>,
    train_set: &[ChunkedReview],
    test_set: &[ChunkedReview],
    catalog: &AspectCatalog,
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training split has no samples".into()));
    }
    let golds: Vec<AspectLabelVector> = train_set.iter().map(gold_of).collect::<Result<_>>()?;
    for r in test_set {
        gold_of(r)?;
    }
    model.config.dropout = cfg.dropout;
    model.config.validate()?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let lrs = cfg.learning_rates();
    let mut grads = model.zeros_like();
    let mut state = OptimizerState::new(&model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut sample_losses = vec![0.0f64; train_set.len()];
    let mut log = Vec::with_capacity(cfg.epochs);
    info!(
        "training {} parameters on {} samples ({} test), {} epochs",
        model.num_parameters(),
        train_set.len(),
        test_set.len(),
        cfg.epochs
    );

    for epoch in 1..=cfg.epochs {
        let last_good = model.clone();
        order.shuffle(&mut shuffle_rng);
        let step = run_epoch(
            &mut model,
            &mut grads,
            &mut state,
            train_set,
            &golds,
            &order,
            &mut sample_losses,
            &mut dropout_rng,
            cfg,
            &lrs,
        );
        let train_loss = sample_losses.iter().sum::<f64>() / sample_losses.len() as f64;
        let failure = match step {
            Err(e) if e.is_numerical() => Some(e),
            Err(e) => return Err(e),
            Ok(()) if !train_loss.is_finite() => Some(Error::NonFiniteLoss { epoch }),
            Ok(()) => None,
        };
        if let Some(e) = failure {
            warn!("numerical failure in epoch {epoch}: {e}");
            if let Some(path) = &outputs.checkpoint {
                save_checkpoint(&last_good, path)?;
                warn!("last good parameters written to {}", path.display());
            }
            if let Some(path) = &outputs.loss_log {
                write_loss_log(&log, path)?;
            }
            return Err(match e {
                Error::NonFiniteGradient { .. } => e,
                _ => Error::NonFiniteLoss { epoch },
            });
        }
        let test = if test_set.is_empty() {
            None
        } else {
            Some(summarize(&predict_all(&model, test_set)?, catalog)?.0)
        };
        debug!("epoch {epoch}: train loss {train_loss:.6} test {test:?}");
        log.push(EpochRecord {
            epoch,
            train_loss,
            test,
        });
    }
    if let Some(last) = log.last() {
        info!("final train loss {:.6}", last.train_loss);
    }
    if let Some(path) = &outputs.checkpoint {
        save_checkpoint(&model, path)?;
    }
    if let Some(path) = &outputs.loss_log {
        write_loss_log(&log, path)?;
    }
    Ok(TrainOutcome { model, log })
}

#[allow(clippy::too_many_arguments)]
fn run_epoch<F: Scalar>(
    model: &mut Model<F>,
    grads: &mut Model<F>,
    state: &mut OptimizerState<F>,
    train_set: &[ChunkedReview],
    golds: &[AspectLabelVector],
    order: &[usize],
    sample_losses: &mut [f64],
    dropout_rng: &mut ChaCha8Rng,
    cfg: &TrainConfig,
    lrs: &GroupLearningRates,
) -> Result<()> {
    for batch_idx in order.chunks(cfg.batch_size) {
        let members: Vec<&ChunkedReview> = batch_idx.iter().map(|&i| &train_set[i]).collect();
        let batch = pad_batch::<F>(&members)?;
        grads.fill_zero();
        let scale = F::one() / F::lit(batch_idx.len() as f64);
        for (b, &i) in batch_idx.iter().enumerate() {
            let input = SampleInput::from_batch(&batch, b);
            let mut mode = ForwardMode::Train(dropout_rng);
            let loss = model.accumulate_gradient(&input, &golds[i], &mut mode, scale, grads)?;
            sample_losses[i] = loss.to_f64_value();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: 0 });
            }
        }
        if let Some(max) = cfg.clip_norm {
            clip_global_norm(&mut grads.params_mut(), max);
        }
        let g = grads.params();
        adam_step(&mut model.params_mut(), &g, state, &cfg.adam, lrs)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::Chunk;
    use crate::model::{ModelConfig, Variant};
    use rand::Rng;

    fn toy_set(n: usize, dim: usize, seed: u64) -> Vec<ChunkedReview> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let len = 1 + i % 3;
                let chunks = (0..len)
                    .map(|c| Chunk {
                        start_s: 2.0 * c as f32,
                        end_s: 2.0 * (c + 1) as f32,
                        text_embedding: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        image_embedding: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    })
                    .collect();
                let label: Vec<i64> = (0..5).map(|_| rng.random_range(0..3)).collect();
                ChunkedReview::new(
                    format!("r{i}"),
                    chunks,
                    Some(AspectLabelVector::from_values(&label).unwrap()),
                )
                .unwrap()
            })
            .collect()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            lr_isec: 1e-2,
            lr_classifier: 1e-3,
            batch_size: 4,
            epochs: 5,
            dropout: 0.1,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_and_validation() {
        let d = TrainConfig::default();
        assert_eq!((d.lr_isec, d.lr_classifier, d.batch_size, d.epochs, d.dropout), (1e-5, 1e-6, 8, 100, 0.2));
        assert!(d.validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..d }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..d }.validate().is_err());
        assert!(TrainConfig { lr_isec: -1.0, ..d }.validate().is_err());
        assert!(TrainConfig { dropout: 1.0, ..d }.validate().is_err());
    }

    #[test]
    fn empty_split_rejected() {
        let model = Model::<f32>::new(ModelConfig::tiny(8, 2, 1), 0).unwrap();
        let err = train(model, &[], &[], &AspectCatalog::default(), &quick_cfg(), &TrainOutputs::default());
        assert!(matches!(err, Err(Error::Empty(_))));
    }

    #[test]
    fn same_seed_same_curve() {
        let data = toy_set(10, 8, 1);
        let run = || {
            let model = Model::<f32>::new(ModelConfig::tiny(8, 2, 1), 5).unwrap();
            train(model, &data[..7], &data[7..], &AspectCatalog::default(), &quick_cfg(), &TrainOutputs::default())
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        assert_eq!(a.log.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn zero_learning_rate_freezes_loss() {
        let data = toy_set(9, 8, 2);
        let model = Model::<f32>::new(ModelConfig::tiny(8, 2, 2), 1).unwrap();
        let cfg = TrainConfig {
            lr_isec: 0.0,
            lr_classifier: 0.0,
            dropout: 0.0,
            ..quick_cfg()
        };
        let out = train(model.clone(), &data, &[], &AspectCatalog::default(), &cfg, &TrainOutputs::default()).unwrap();
        let first = out.log[0].train_loss;
        assert!(out.log.iter().all(|r| r.train_loss == first));
        assert_eq!(out.model.classifier, model.classifier);
    }

    #[test]
    fn group_learning_rates_reach_their_parameters() {
        let data = toy_set(6, 8, 4);
        let model = Model::<f64>::new(ModelConfig::tiny(8, 2, 1), 2).unwrap();
        let cfg = TrainConfig {
            lr_isec: 0.0,
            lr_classifier: 1e-2,
            epochs: 2,
            ..quick_cfg()
        };
        let out = train(model.clone(), &data, &[], &AspectCatalog::default(), &cfg, &TrainOutputs::default()).unwrap();
        assert_eq!(out.model.isec, model.isec);
        assert_ne!(out.model.classifier, model.classifier);
    }

    #[test]
    fn writes_checkpoint_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy_set(6, 8, 5);
        let outputs = TrainOutputs {
            checkpoint: Some(dir.path().join("checkpoint")),
            loss_log: Some(dir.path().join("loss.csv")),
        };
        let model = Model::<f32>::new(ModelConfig::tiny(8, 2, 1).with_variant(Variant::WithoutIsec), 0).unwrap();
        let out = train(model, &data[..4], &data[4..], &AspectCatalog::default(), &quick_cfg(), &outputs).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        assert_eq!(csv, loss_log_csv(&out.log));
        assert_eq!(csv.lines().count(), 6);
        let back: Model<f32> = crate::checkpoint::load_checkpoint(dir.path().join("checkpoint")).unwrap();
        assert_eq!(back, out.model);
    }

    #[test]
    fn nan_input_aborts_and_keeps_last_good() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy_set(4, 8, 6);
        let mut model = Model::<f32>::new(ModelConfig::tiny(8, 2, 1), 0).unwrap();
        model.classifier.head_b[0] = f32::NAN;
        let outputs = TrainOutputs {
            checkpoint: Some(dir.path().join("checkpoint")),
            loss_log: None,
        };
        let err = train(model, &data, &[], &AspectCatalog::default(), &quick_cfg(), &outputs).unwrap_err();
        assert!(err.is_numerical(), "{err}");
        assert!(dir.path().join("checkpoint").exists());
    }
}
