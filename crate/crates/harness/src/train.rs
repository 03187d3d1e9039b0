//! Minibatch Adam training with fresh masks every epoch.

use mstf_core::masking::sample_sequence_mask;
use mstf_core::trajdata::{normalize, NormalizedSample, Sample};
use mstf_core::{MissingRate, Model, SequenceMask, Variant};
use mstf_numkernel::{AdamConfig, AdamState, SeedRoot, StreamRng, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::dataset::Dataset;
use crate::error::{HarnessError, Result};

/// Samples per forward pass when only losses or predictions are needed.
pub const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub model: Variant,
    pub parameters: usize,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` keeps the initialization.
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    /// SHA-256 over every training mask in the order it was drawn.
    pub mask_digest: String,
}

pub struct Trained {
    pub model: Model,
    pub record: TrainRecord,
}

pub fn init_model(cfg: &ExperimentConfig, variant: Variant) -> Result<Model> {
    let mut rng = SeedRoot(cfg.seed).stream(&format!("init/{}", variant.name()));
    Ok(Model::new(cfg.model_config(), variant, &mut rng)?)
}

/// One mask per sample, drawn in order.
pub fn draw_masks(count: usize, len: usize, rate: MissingRate, rng: &mut StreamRng) -> Result<Vec<SequenceMask>> {
    (0..count).map(|_| Ok(sample_sequence_mask(len, rate, rng)?)).collect()
}

pub fn masked(samples: &[Sample], masks: &[SequenceMask]) -> Result<Vec<NormalizedSample>> {
    samples
        .iter()
        .zip(masks)
        .map(|(s, m)| Ok(normalize(&s.clone().with_mask(m.clone())?)))
        .collect()
}

/// Sample-weighted mean loss over chunks.
pub fn mean_loss(model: &Model, samples: &[NormalizedSample]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        total += model.batch_loss(&model.batch(chunk)?)? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

pub fn train(cfg: &ExperimentConfig, variant: Variant, data: &Dataset) -> Result<Trained> {
    let root = SeedRoot(cfg.seed);
    let t_h = data.horizons.t_h;
    let rate = cfg.train_rate()?;
    let mut model = init_model(cfg, variant)?;
    let mut order_rng = root.stream("train-order");
    let mut mask_rng = root.stream("train-masks");
    let val_masks = draw_masks(data.val.len(), t_h, rate, &mut root.stream("val-masks"))?;
    let val = masked(&data.val, &val_masks)?;

    let mut adam = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate), model.params().tensors());
    let mut digest = Sha256::new();
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_val_loss = mean_loss(&model, &val)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..cfg.epochs {
        adam.config.learning_rate = cfg.learning_rate_at(epoch);
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for (batch_index, idx) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |detail: String| HarnessError::Divergence {
                epoch,
                batch: batch_index,
                detail,
            };
            let mut samples = Vec::with_capacity(idx.len());
            for &i in idx {
                let mask = sample_sequence_mask(t_h, rate, &mut mask_rng)?;
                digest.update(mask.bits());
                samples.push(normalize(&data.train[i].clone().with_mask(mask)?));
            }
            let batch = model.batch(&samples)?;
            let (loss, mut grads) = model.loss_and_grads(&batch).map_err(|e| diverged(e.to_string()))?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss is {loss}")));
            }
            if let Some(limit) = cfg.grad_clip {
                clip_global_norm(&mut grads, limit);
            }
            adam.apply(model.params_mut().tensors_mut(), &grads)
                .map_err(|e| diverged(e.to_string()))?;
            total += loss * idx.len() as f64;
        }
        let val_loss = mean_loss(&model, &val)?;
        if !val_loss.is_finite() {
            return Err(HarnessError::Divergence {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
                detail: format!("validation loss is {val_loss}"),
            });
        }
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = Some(epoch);
            best = model.clone();
        }
        epochs.push(EpochRecord {
            epoch,
            learning_rate: adam.config.learning_rate,
            train_loss: total / data.train.len() as f64,
            val_loss,
        });
    }

    let record = TrainRecord {
        model: variant,
        parameters: best.param_count(),
        epochs,
        best_epoch,
        best_val_loss,
        mask_digest: hex(&digest.finalize()),
    };
    Ok(Trained { model: best, record })
}

/// Scales all gradients by a common factor so their joint L2 norm is at most `limit`.
pub fn clip_global_norm(grads: &mut [Tensor], limit: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > limit {
        let k = limit / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
