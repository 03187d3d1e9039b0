use std::sync::Arc;

use mstf_numkernel::Tensor;

use super::{ModelConfig, Variant};
use crate::error::{CoreError, Result};
use crate::masking::{build_padding_masks, info_increment, observation_matrices};
use crate::point::Point;
use crate::trajdata::NormalizedSample;

use super::encoding::iipa_weights;

/// Stacked inputs, attention masks and pooling weights for a set of samples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    /// `[size·t_h × 2]`, masked history divided by the coordinate scale.
    pub inputs: Tensor,
    /// `[size × n_heads × t_h × t_h]`
    pub attention_mask: Arc<[bool]>,
    /// `[size × n_heads × t_h]`
    pub pool_weights: Arc<[f64]>,
    /// `[t_f·size × 2]` step-major futures in meters, when all samples carry them.
    pub targets: Option<Tensor>,
}

pub(crate) fn scaled_inputs(histories: &[Vec<Point>], scale: f64) -> Tensor {
    let len = histories.first().map_or(0, Vec::len);
    let data = histories
        .iter()
        .flat_map(|h| h.iter().flat_map(|p| [p.x / scale, p.y / scale]))
        .collect();
    Tensor::matrix(histories.len() * len, 2, data).expect("histories share a length")
}

impl Batch {
    pub fn new(config: &ModelConfig, variant: Variant, samples: &[NormalizedSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::EmptySet);
        }
        let (len, heads) = (config.t_h, config.n_heads);
        for s in samples {
            if s.history.len() != len || s.mask.len() != len {
                return Err(CoreError::LengthMismatch {
                    what: "batch history",
                    expected: len,
                    actual: s.history.len().min(s.mask.len()),
                });
            }
        }
        let padding = build_padding_masks(len, heads)?;
        let mut mask = Vec::with_capacity(samples.len() * heads * len * len);
        let mut pool = Vec::with_capacity(samples.len() * heads * len);
        for s in samples {
            match variant {
                Variant::Mstf => {
                    let obs = observation_matrices(&s.mask, &padding)?;
                    for m in obs.attention_masks() {
                        mask.extend_from_slice(m.cells());
                    }
                    for sigma in info_increment(&obs).rows() {
                        pool.extend(iipa_weights(sigma));
                    }
                }
                Variant::Vtf => {
                    mask.resize(mask.len() + heads * len * len, true);
                    pool.resize(pool.len() + heads * len, 1.0 / len as f64);
                }
            }
        }
        let histories: Vec<Vec<Point>> = samples.iter().map(NormalizedSample::masked_history).collect();
        let targets = if samples.iter().all(|s| s.future.len() == config.t_f) {
            let n = samples.len();
            let mut data = vec![0.0; config.t_f * n * 2];
            for (b, s) in samples.iter().enumerate() {
                for (t, p) in s.future.iter().enumerate() {
                    data[(t * n + b) * 2] = p.x;
                    data[(t * n + b) * 2 + 1] = p.y;
                }
            }
            Some(Tensor::matrix(config.t_f * n, 2, data)?)
        } else {
            None
        };
        Ok(Self {
            size: samples.len(),
            inputs: scaled_inputs(&histories, config.coord_scale),
            attention_mask: mask.into(),
            pool_weights: pool.into(),
            targets,
        })
    }
}
