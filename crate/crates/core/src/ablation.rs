//! Trains and scores every architecture variant on the same data.

use std::fmt::Write as _;

use log::info;
use serde::Serialize;

use crate::data_model::{AspectCatalog, ChunkedReview};
use crate::error::{Error, Result};
use crate::metrics::{EvaluationReport, Task};
use crate::model::{Model, ModelConfig, Variant};
use crate::scalar::Scalar;
use crate::train::{predict_all, summarize, train, EvalSummary, TrainConfig, TrainOutputs};

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRun {
    pub variant: Variant,
    pub seed: u64,
    pub final_train_loss: f64,
    pub summary: EvalSummary,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub runs: usize,
    pub mean_ac_micro_f1: f64,
    pub mean_ac_macro_f1: f64,
    pub mean_ci_micro_f1: f64,
    pub mean_ci_macro_f1: f64,
    pub mean_hamming: f64,
    pub mean_exact_match: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationReport {
    pub runs: Vec<ConditionRun>,
}

impl AblationReport {
    fn runs_of(&self, v: Variant) -> impl Iterator<Item = &ConditionRun> {
        self.runs.iter().filter(move |r| r.variant == v)
    }

    fn mean_of(&self, v: Variant, f: impl Fn(&ConditionRun) -> f64) -> Option<f64> {
        let vals: Vec<f64> = self.runs_of(v).map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean over seeds of the per-run mean-over-aspects AC micro-F1.
    pub fn mean_ac_micro_f1(&self, v: Variant) -> Option<f64> {
        self.mean_of(v, |r| r.report.mean_ac_micro_f1())
    }

    pub fn summaries(&self) -> Vec<ConditionSummary> {
        Variant::ALL
            .iter()
            .filter(|v| self.runs_of(**v).next().is_some())
            .map(|&v| {
                let m = |f: &dyn Fn(&ConditionRun) -> f64| self.mean_of(v, f).unwrap_or(f64::NAN);
                ConditionSummary {
                    condition: v.label().to_string(),
                    runs: self.runs_of(v).count(),
                    mean_ac_micro_f1: m(&|r| r.report.mean_over_aspects(Task::Ac, |x| x.micro_f1)),
                    mean_ac_macro_f1: m(&|r| r.report.mean_over_aspects(Task::Ac, |x| x.macro_f1)),
                    mean_ci_micro_f1: m(&|r| r.report.mean_over_aspects(Task::Ci, |x| x.micro_f1)),
                    mean_ci_macro_f1: m(&|r| r.report.mean_over_aspects(Task::Ci, |x| x.macro_f1)),
                    mean_hamming: m(&|r| r.summary.hamming),
                    mean_exact_match: m(&|r| r.summary.exact_match),
                }
            })
            .collect()
    }

    /// One line per (condition, seed, aspect, task).
    pub fn runs_csv(&self) -> String {
        let mut s = String::from("condition,seed,aspect,task,macro_f1,micro_f1,hamming\n");
        for run in &self.runs {
            for r in &run.report.rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    run.variant.label(),
                    run.seed,
                    r.aspect,
                    r.task,
                    r.macro_f1,
                    r.micro_f1,
                    r.hamming
                );
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "condition,runs,mean_ac_micro_f1,mean_ac_macro_f1,mean_ci_micro_f1,mean_ci_macro_f1,mean_hamming,mean_exact_match\n",
        );
        for c in self.summaries() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                c.condition,
                c.runs,
                c.mean_ac_micro_f1,
                c.mean_ac_macro_f1,
                c.mean_ci_micro_f1,
                c.mean_ci_macro_f1,
                c.mean_hamming,
                c.mean_exact_match
            );
        }
        s
    }

    pub fn pretty(&self) -> String {
        let mut s = format!(
            "{:<14} {:>5} {:>9} {:>9} {:>9} {:>9} {:>8}\n",
            "condition", "runs", "AC mi-F1", "AC ma-F1", "CI mi-F1", "CI ma-F1", "hamming"
        );
        for c in self.summaries() {
            let _ = writeln!(
                s,
                "{:<14} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>8.4}",
                c.condition,
                c.runs,
                c.mean_ac_micro_f1,
                c.mean_ac_macro_f1,
                c.mean_ci_micro_f1,
                c.mean_ci_macro_f1,
                c.mean_hamming
            );
        }
        s
    }
}

/// Trains `variants × seeds` models from scratch and scores each on
/// `test_set`. The seed drives both initialization and training order.
pub fn run_ablation<F: Scalar>(
    train_set: &[ChunkedReview],
    test_set: &[ChunkedReview],
    catalog: &AspectCatalog,
    base: ModelConfig,
    train_cfg: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationReport> {
    if test_set.is_empty() {
        return Err(Error::Empty("ablation needs a non-empty test split".into()));
    }
    let mut runs = Vec::with_capacity(variants.len() * seeds.len());
    for &seed in seeds {
        for &variant in variants {
            let model = Model::<F>::new(base.with_variant(variant), seed)?;
            let cfg = TrainConfig { seed, ..*train_cfg };
            let out = train(model, train_set, &[], catalog, &cfg, &TrainOutputs::default())?;
            let (summary, report) = summarize(&predict_all(&out.model, test_set)?, catalog)?;
            info!(
                "{} seed {seed}: AC micro-F1 {:.4}",
                variant.label(),
                report.mean_ac_micro_f1()
            );
            runs.push(ConditionRun {
                variant,
                seed,
                final_train_loss: out.log.last().map_or(f64::NAN, |r| r.train_loss),
                summary,
                report,
            });
        }
    }
    Ok(AblationReport { runs })
}
