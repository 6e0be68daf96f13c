//! Per-fold training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{assemble_batch, build, ModelParams, ModelSpec, Variant};
use crate::preprocess::{augment, spectral_summary, Patch};
use crate::tensor::{softmax_cross_entropy, Mode};

use super::mix_seed;
use super::optim::{adam_step, class_weights, AdamConfig, AdamState};

/// Loss weighting mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `w_c = N / (2 N_c)` from training patch counts.
    InverseFrequency,
    /// Unit weights.
    None,
}

/// Training protocol: Adam over randomly sampled batches of augmented
/// patches. Iterations count optimizer steps, not epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub weighting: Weighting,
    /// Force equal class counts per batch. Off by default: the loss weights
    /// already carry the imbalance correction.
    pub balanced_batches: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 300,
            batch: 20,
            lr: 1e-3,
            weighting: Weighting::InverseFrequency,
            balanced_batches: false,
            seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("train.iterations must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("train.batch must be at least 1".into()));
        }
        self.adam().validate()
    }

    /// Adam hyperparameters: configurable rate, fixed betas and epsilon.
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Patches available to one fold. Sources feed training; validation crops
/// only ever report a loss.
#[derive(Clone, Debug, Default)]
pub struct FoldData<'a> {
    /// Oversized spectral training sources.
    pub train_sources: Vec<&'a Patch>,
    /// Network-ready validation crops.
    pub validation: Vec<&'a Patch>,
}

/// Record of one training run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainTrace {
    /// Weighted cross-entropy per optimizer step.
    pub losses: Vec<f64>,
    /// Mean weighted cross-entropy over validation crops in eval mode;
    /// recorded for tuning only, never fed back into training.
    pub validation_loss: Option<f64>,
    pub class_weights: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct TrainedFold {
    pub params: ModelParams,
    pub trace: TrainTrace,
}

/// Train one fold from its sources: `iterations` Adam steps over batches
/// sampled with replacement, each source freshly augmented per draw.
///
/// Both classes must appear in the sources even under unit weights; a
/// one-class fold cannot express the decision boundary.
pub fn train_fold(
    fold: usize,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    data: &FoldData,
) -> Result<TrainedFold> {
    cfg.validate()?;
    spec.validate()?;
    if data.train_sources.is_empty() {
        return Err(Error::Config(format!("fold {fold}: empty training patch set")));
    }
    let mut healthy = Vec::new();
    let mut tumor = Vec::new();
    for (i, p) in data.train_sources.iter().enumerate() {
        match p.label.index() {
            0 => healthy.push(i),
            _ => tumor.push(i),
        }
    }
    let frequency = class_weights(healthy.len(), tumor.len())?;
    let weights = match cfg.weighting {
        Weighting::InverseFrequency => frequency,
        Weighting::None => [1.0, 1.0],
    };

    let mut model = build(spec)?;
    let mut state = AdamState::new(model.tensors());
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, fold as u64));
    let summarize = spec.variant == Variant::Densenet2dMs;
    let all: Vec<usize> = (0..data.train_sources.len()).collect();
    let mut losses = Vec::with_capacity(cfg.iterations);

    for step in 0..cfg.iterations {
        let mut crops = Vec::with_capacity(cfg.batch);
        let mut labels = Vec::with_capacity(cfg.batch);
        for slot in 0..cfg.batch {
            let pool: &[usize] = if cfg.balanced_batches {
                if slot % 2 == 0 {
                    &healthy
                } else {
                    &tumor
                }
            } else {
                &all
            };
            let source = data.train_sources[pool[rng.gen_range(0..pool.len())]];
            let crop = augment(source, spec.patch_size, &mut rng)?;
            let crop = if summarize { spectral_summary(&crop)? } else { crop };
            labels.push(crop.label.index());
            crops.push(crop);
        }
        let refs: Vec<&Patch> = crops.iter().collect();
        let input = assemble_batch(spec, &refs)?;

        let pass = model.forward(&input, cfg.batch, Mode::Train)?;
        let loss = softmax_cross_entropy(&pass.logits, &labels, weights)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                tensor: "loss".into(),
                what: format!("step {step} produced {value}"),
            });
        }
        loss.backward()?;
        let grads: Vec<Vec<f64>> = pass
            .bound
            .iter()
            // A parameter the loss never touched has no adjoint; its true
            // gradient is zero.
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        adam_step(model.tensors_mut(), &grads, &mut state, &adam)?;
        losses.push(value);
    }

    let validation_loss = validation_loss(&model, &data.validation, weights, cfg.batch)?;
    Ok(TrainedFold {
        params: model,
        trace: TrainTrace {
            losses,
            validation_loss,
            class_weights: weights,
        },
    })
}

/// Mean weighted cross-entropy over crops in eval mode, computed from the
/// logits with the log-sum-exp trick; `None` when no crops survived gating.
fn validation_loss(
    model: &ModelParams,
    crops: &[&Patch],
    weights: [f64; 2],
    batch: usize,
) -> Result<Option<f64>> {
    if crops.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for chunk in crops.chunks(batch.max(1)) {
        let input = assemble_batch(model.spec(), chunk)?;
        let pass = model.forward_eval(&input, chunk.len())?;
        let logits = pass.logits.value();
        for (i, patch) in chunk.iter().enumerate() {
            let (a, b) = (logits[2 * i], logits[2 * i + 1]);
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            let y = patch.label.index();
            total += weights[y] * (lse - logits[2 * i + y]);
        }
    }
    Ok(Some(total / crops.len() as f64))
}
