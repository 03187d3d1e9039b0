use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Network extents.
///
/// Per-head width is `d_model / n_heads` (floor); the concatenated head
/// outputs are projected back to `d_model`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Encoder depth. The last layer is the multiscale attention stage whose
    /// per-head outputs form the motion representation; earlier layers are
    /// full blocks (attention, projection, feed-forward, residual + norm).
    pub n_layers: usize,
    /// Hidden width of the position-wise feed-forward sublayer.
    pub d_ff: usize,
    pub t_h: usize,
    pub t_f: usize,
    pub decoder_hidden: usize,
    /// Meters per model unit for input coordinates and emitted offsets.
    pub coord_scale: f64,
}

impl ModelConfig {
    /// Default used by the experiment harness.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            n_heads: 5,
            n_layers: 2,
            d_ff: 128,
            t_h: 20,
            t_f: 30,
            decoder_hidden: 64,
            coord_scale: 10.0,
        }
    }

    /// Four layers of five heads at width 128.
    pub fn full_scale() -> Self {
        Self {
            d_model: 128,
            n_heads: 5,
            n_layers: 4,
            d_ff: 256,
            decoder_hidden: 128,
            ..Self::desk()
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    /// Width of the concatenated head outputs.
    pub fn heads_width(&self) -> usize {
        self.n_heads * self.d_k()
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("t_h", self.t_h),
            ("t_f", self.t_f),
            ("decoder_hidden", self.decoder_hidden),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(CoreError::Config(format!("{name} must be ≥ 1")));
        }
        if self.d_k() == 0 {
            return Err(CoreError::Config(format!(
                "d_model {} is smaller than n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.coord_scale > 0.0 && self.coord_scale.is_finite()) {
            return Err(CoreError::Config("coord_scale must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}
