//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use mstf_core::trajdata::{Horizons, ManeuverKind};
use mstf_core::{MissingRate, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the configured rate to zero over the run, stepped per epoch.
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// 70/10/20 by track id.
    ByTrack,
    /// Every sample in train, validation and test alike.
    None,
}

/// Network extents; horizons come from the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub decoder_hidden: usize,
    pub coord_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::desk();
        Self {
            d_model: d.d_model,
            n_heads: d.n_heads,
            n_layers: d.n_layers,
            d_ff: d.d_ff,
            decoder_hidden: d.decoder_hidden,
            coord_scale: d.coord_scale,
        }
    }
}

fn default_maneuvers() -> Vec<ManeuverKind> {
    vec![ManeuverKind::LaneKeep, ManeuverKind::LeftChange, ManeuverKind::RightChange]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// One single-window track per sample, maneuvers assigned round-robin.
    Synthetic {
        count: usize,
        #[serde(default = "default_horizons")]
        horizons: Horizons,
        #[serde(default = "default_maneuvers")]
        maneuvers: Vec<ManeuverKind>,
        #[serde(default = "default_speed_min")]
        speed_min: f64,
        #[serde(default = "default_speed_max")]
        speed_max: f64,
        #[serde(default = "default_lateral")]
        lateral_displacement: f64,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default = "default_transition")]
        transition_s: f64,
        #[serde(default = "default_split")]
        split: SplitMode,
    },
    Csv {
        path: PathBuf,
        horizons: Horizons,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_split")]
        split: SplitMode,
    },
}

fn default_horizons() -> Horizons {
    Horizons::ARGOVERSE
}
fn default_speed_min() -> f64 {
    8.0
}
fn default_speed_max() -> f64 {
    16.0
}
fn default_lateral() -> f64 {
    3.5
}
fn default_transition() -> f64 {
    3.0
}
fn default_stride() -> usize {
    10
}
fn default_split() -> SplitMode {
    SplitMode::ByTrack
}

impl DatasetConfig {
    pub fn horizons(&self) -> Horizons {
        match self {
            DatasetConfig::Synthetic { horizons, .. } | DatasetConfig::Csv { horizons, .. } => *horizons,
        }
    }

    pub fn split(&self) -> SplitMode {
        match self {
            DatasetConfig::Synthetic { split, .. } | DatasetConfig::Csv { split, .. } => *split,
        }
    }
}

fn default_epochs() -> usize {
    60
}
fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}
fn default_schedule() -> LrSchedule {
    LrSchedule::Constant
}
fn default_train_interval() -> [f64; 2] {
    [0.3, 0.6]
}
fn default_intervals() -> Vec<[f64; 2]> {
    MissingRate::STANDARD.iter().map(|r| [r.lo, r.hi]).collect()
}
fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_schedule")]
    pub lr_schedule: LrSchedule,
    /// Rescales each batch gradient to at most this global L2 norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    /// Missing-rate interval masks are drawn from during training.
    #[serde(default = "default_train_interval")]
    pub train_interval: [f64; 2],
    /// Evaluation intervals.
    #[serde(default = "default_intervals")]
    pub intervals: Vec<[f64; 2]>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub model: ModelSection,
    pub dataset: DatasetConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative dataset paths are taken from the config file's directory
        if let DatasetConfig::Csv { path: data, .. } = &mut cfg.dataset {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_config(&self) -> ModelConfig {
        let h = self.dataset.horizons();
        let m = self.model;
        ModelConfig {
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            d_ff: m.d_ff,
            t_h: h.t_h,
            t_f: h.t_f,
            decoder_hidden: m.decoder_hidden,
            coord_scale: m.coord_scale,
        }
    }

    pub fn train_rate(&self) -> Result<MissingRate> {
        Ok(MissingRate::new(self.train_interval[0], self.train_interval[1])?)
    }

    pub fn eval_rates(&self) -> Result<Vec<MissingRate>> {
        self.intervals
            .iter()
            .map(|i| Ok(MissingRate::new(i[0], i[1])?))
            .collect()
    }

    /// Learning rate for a 0-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let progress = epoch as f64 / self.epochs.max(1) as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(HarnessError::Usage(m));
        if self.batch_size == 0 {
            return usage("batch_size must be ≥ 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return usage(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return usage(format!("grad_clip {c} must be positive"));
            }
        }
        self.dataset.horizons().validate()?;
        self.model_config().validate()?;
        let t_h = self.dataset.horizons().t_h;
        self.train_rate()?.count_range(t_h)?;
        let mut rates = self.eval_rates()?;
        if rates.is_empty() {
            return usage("at least one evaluation interval is required".into());
        }
        for r in &rates {
            r.count_range(t_h)?;
        }
        rates.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        if let Some(w) = rates.windows(2).find(|w| w[1].lo < w[0].hi) {
            return usage(format!("intervals {} and {} overlap", w[0].label(), w[1].label()));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                count,
                maneuvers,
                speed_min,
                speed_max,
                noise_sigma,
                transition_s,
                ..
            } => {
                if *count == 0 || maneuvers.is_empty() {
                    return usage("synthetic datasets need count ≥ 1 and at least one maneuver".into());
                }
                if !(*speed_min > 0.0 && speed_max >= speed_min && *noise_sigma >= 0.0 && *transition_s > 0.0) {
                    return usage("synthetic maneuver parameters out of range".into());
                }
            }
            DatasetConfig::Csv { stride, .. } => {
                if *stride == 0 {
                    return usage("stride must be ≥ 1".into());
                }
            }
        }
        Ok(())
    }
}
