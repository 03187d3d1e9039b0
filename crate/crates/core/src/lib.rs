//! Incomplete-trajectory prediction: masking, data, model and metrics.

pub mod error;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod point;
pub mod trajdata;

pub use error::{CoreError, Result};
pub use masking::{MissingRate, SequenceMask};
pub use metrics::MetricReport;
pub use model::{EncoderOutput, Model, ModelConfig, Prediction, Variant};
pub use point::Point;
pub use trajdata::{Horizons, NormalizedSample, Sample};
