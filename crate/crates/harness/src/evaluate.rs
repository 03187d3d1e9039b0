//! Fixed-mask evaluation per missing-rate interval.

use mstf_core::metrics::MetricReport;
use mstf_core::trajdata::{denormalize, Horizons, NormalizedSample, Sample};
use mstf_core::{MissingRate, Model, Point, SequenceMask};
use mstf_numkernel::SeedRoot;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::train::{draw_masks, masked, EVAL_CHUNK};

pub const PERSISTENCE: &str = "persistence";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub interval: MissingRate,
    pub metrics: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub intervals: Vec<IntervalReport>,
}

impl EvalReport {
    pub fn interval(&self, rate: MissingRate) -> Option<&MetricReport> {
        self.intervals.iter().find(|r| r.interval == rate).map(|r| &r.metrics)
    }
}

/// Evaluation masks for one interval; independent of every training stream.
pub fn eval_masks(count: usize, len: usize, rate: MissingRate, seed: u64) -> Result<Vec<SequenceMask>> {
    let mut rng = SeedRoot(seed).stream(&format!("eval-masks/{}", rate.label()));
    draw_masks(count, len, rate, &mut rng)
}

fn check_horizons(model: &Model, horizons: Horizons, samples: &[Sample]) -> Result<()> {
    let c = model.config();
    if c.t_h != horizons.t_h || c.t_f != horizons.t_f {
        return Err(HarnessError::Data(format!(
            "checkpoint horizons {}+{} do not match dataset horizons {}+{}",
            c.t_h, c.t_f, horizons.t_h, horizons.t_f
        )));
    }
    if samples.is_empty() {
        return Err(HarnessError::Data("evaluation set is empty".into()));
    }
    Ok(())
}

/// Predictions in absolute coordinates, in sample order.
pub fn predict_absolute(model: &Model, samples: &[NormalizedSample]) -> Result<Vec<Vec<Point>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        for (pred, s) in model.predict_batch(chunk)?.into_iter().zip(chunk) {
            out.push(denormalize(&pred.positions, &s.frame));
        }
    }
    Ok(out)
}

pub fn evaluate(model: &Model, samples: &[Sample], horizons: Horizons, rates: &[MissingRate], seed: u64) -> Result<EvalReport> {
    check_horizons(model, horizons, samples)?;
    let truths: Vec<Vec<Point>> = samples.iter().map(|s| s.future.clone()).collect();
    let mut intervals = Vec::with_capacity(rates.len());
    for &rate in rates {
        let masks = eval_masks(samples.len(), horizons.t_h, rate, seed)?;
        let preds = predict_absolute(model, &masked(samples, &masks)?)?;
        intervals.push(IntervalReport {
            interval: rate,
            metrics: MetricReport::compute(&preds, &truths, horizons.rate)?,
        });
    }
    Ok(EvalReport {
        model: model.variant().name().to_string(),
        intervals,
    })
}

/// Repeats the last observed history position for the whole future.
pub fn persistence(samples: &[Sample], horizons: Horizons, rates: &[MissingRate], seed: u64) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(HarnessError::Data("evaluation set is empty".into()));
    }
    let truths: Vec<Vec<Point>> = samples.iter().map(|s| s.future.clone()).collect();
    let mut intervals = Vec::with_capacity(rates.len());
    for &rate in rates {
        let masks = eval_masks(samples.len(), horizons.t_h, rate, seed)?;
        let preds: Vec<Vec<Point>> = samples
            .iter()
            .zip(&masks)
            .map(|(s, m)| vec![s.history[m.last_observed()]; horizons.t_f])
            .collect();
        intervals.push(IntervalReport {
            interval: rate,
            metrics: MetricReport::compute(&preds, &truths, horizons.rate)?,
        });
    }
    Ok(EvalReport {
        model: PERSISTENCE.to_string(),
        intervals,
    })
}
