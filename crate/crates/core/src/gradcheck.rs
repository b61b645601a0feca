//! Central finite-difference verification of the analytic gradients.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data_model::{AspectLabelVector, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::fusion::multitask_loss;
use crate::model::{Model, ModelConfig, SampleInput};
use crate::nn::ForwardMode;
use crate::params::ParamGroup;

pub const FD_STEP: f64 = 1e-5;
pub const MAX_REL_ERROR: f64 = 1e-4;
/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are judged by absolute error instead of amplified round-off.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub group: ParamGroup,
    pub entries: usize,
    pub max_rel_error: f64,
    /// Analytic and numeric values at the worst entry.
    pub worst_pair: (f64, f64),
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    /// Largest relative error within each parameter group.
    pub fn per_group(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for t in &self.tensors {
            let e = out.entry(t.group.to_string()).or_insert(0.0f64);
            *e = e.max(t.max_rel_error);
        }
        out
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{:<36} {:<10} n={:<5} max_rel={:.3e} (analytic {:.6e}, numeric {:.6e}) {}",
                t.name,
                t.group,
                t.entries,
                t.max_rel_error,
                t.worst_pair.0,
                t.worst_pair.1,
                if t.passed { "ok" } else { "FAIL" }
            )?;
        }
        for (g, e) in self.per_group() {
            writeln!(f, "group {g}: max_rel={e:.3e}")?;
        }
        write!(
            f,
            "{} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.tolerance
        )
    }
}

/// A fixed batch of samples and labels the loss is evaluated on.
#[derive(Debug, Clone)]
pub struct Probe {
    pub samples: Vec<(SampleInput<f64>, AspectLabelVector)>,
}

impl Probe {
    /// Two samples padded to `max_chunks`: one full, one with its last
    /// position masked (when `max_chunks > 1`), so masking is exercised.
    pub fn random(dim: usize, max_chunks: usize, seed: u64) -> Result<Self> {
        if max_chunks == 0 {
            return Err(Error::Config("probe needs at least one chunk".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let seq = |valid: usize, rng: &mut ChaCha8Rng| {
            let data = ndarray::Array2::from_shape_fn((max_chunks, dim), |_| rng.random_range(-1.0..1.0));
            let mask = (0..max_chunks).map(|i| i < valid).collect();
            EmbeddingSequence::new(data, mask)
        };
        let mut samples = Vec::new();
        for valid in [max_chunks, max_chunks.saturating_sub(1).max(1)] {
            let input = SampleInput {
                text: seq(valid, &mut rng)?,
                image: seq(valid, &mut rng)?,
            };
            let label: Vec<i64> = (0..5).map(|_| rng.random_range(0..3)).collect();
            samples.push((input, AspectLabelVector::from_values(&label)?));
        }
        Ok(Self { samples })
    }

    /// Mean multitask loss (eval mode, so no dropout).
    pub fn loss(&self, model: &Model<f64>) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in &self.samples {
            total += multitask_loss(&model.forward(x)?, y);
        }
        Ok(total / self.samples.len() as f64)
    }

    /// Analytic gradient of [`Probe::loss`].
    pub fn gradient(&self, model: &Model<f64>) -> Result<Model<f64>> {
        let mut grads = model.zeros_like();
        let scale = 1.0 / self.samples.len() as f64;
        for (x, y) in &self.samples {
            model.accumulate_gradient(x, y, &mut ForwardMode::Eval, scale, &mut grads)?;
        }
        Ok(grads)
    }
}

/// Compares `analytic` with central differences of `loss` around `model`,
/// entry by entry.
pub fn compare_gradients(
    model: &Model<f64>,
    analytic: &Model<f64>,
    loss: impl Fn(&Model<f64>) -> Result<f64>,
    h: f64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    let meta: Vec<(String, ParamGroup, usize)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.group, p.values.len()))
        .collect();
    let grads = analytic.params();
    if grads.len() != meta.len() {
        return Err(Error::Shape("analytic gradient has a different layout".into()));
    }
    let mut probe = model.clone();
    let mut tensors = Vec::with_capacity(meta.len());
    for (t, (name, group, len)) in meta.into_iter().enumerate() {
        let mut worst = 0.0f64;
        let mut worst_pair = (0.0, 0.0);
        for i in 0..len {
            let orig = probe.params()[t].values[i];
            probe.params_mut()[t].values[i] = orig + h;
            let up = loss(&probe)?;
            probe.params_mut()[t].values[i] = orig - h;
            let down = loss(&probe)?;
            probe.params_mut()[t].values[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grads[t].values[i], numeric);
            if err >= worst {
                worst = err;
                worst_pair = (grads[t].values[i], numeric);
            }
        }
        tensors.push(TensorCheck {
            name,
            group,
            entries: len,
            max_rel_error: worst,
            worst_pair,
            passed: worst < tolerance,
        });
    }
    Ok(GradcheckReport { tensors, tolerance })
}

/// Builds a model from `config` (dropout forced to 0) and checks every
/// parameter's gradient on a random two-sample probe.
pub fn gradcheck(config: ModelConfig, max_chunks: usize, seed: u64) -> Result<GradcheckReport> {
    if config.dim > 16 {
        return Err(Error::Config(format!("gradcheck expects dim <= 16, got {}", config.dim)));
    }
    let config = ModelConfig { dropout: 0.0, ..config };
    let model = Model::<f64>::new(config, seed)?;
    let probe = Probe::random(config.dim, max_chunks, seed)?;
    let analytic = probe.gradient(&model)?;
    compare_gradients(&model, &analytic, |m| probe.loss(m), FD_STEP, MAX_REL_ERROR)
}
