//! Displacement metrics over a set of single predictions.
//!
//! Squared errors are squared Euclidean norms of the 2-D displacement. All
//! inputs are expected in absolute meters.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::point::Point;

fn check(preds: &[Vec<Point>], truths: &[Vec<Point>], steps: usize) -> Result<()> {
    if preds.is_empty() {
        return Err(CoreError::EmptySet);
    }
    if preds.len() != truths.len() {
        return Err(CoreError::LengthMismatch {
            what: "metric sample count",
            expected: truths.len(),
            actual: preds.len(),
        });
    }
    if steps == 0 {
        return Err(CoreError::Config("metric horizon must be ≥ 1 step".into()));
    }
    for (p, t) in preds.iter().zip(truths) {
        if p.len() < steps || t.len() < steps {
            return Err(CoreError::LengthMismatch {
                what: "metric sequence",
                expected: steps,
                actual: p.len().min(t.len()),
            });
        }
    }
    Ok(())
}

/// `sqrt(mean over samples of mean over the first `steps` of |ŷ − y|²)`.
pub fn rmse(preds: &[Vec<Point>], truths: &[Vec<Point>], steps: usize) -> Result<f64> {
    check(preds, truths, steps)?;
    let total: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| p[..steps].iter().zip(t).map(|(&a, &b)| (a - b).norm_sq()).sum::<f64>() / steps as f64)
        .sum();
    Ok((total / preds.len() as f64).sqrt())
}

/// Mean Euclidean displacement over all samples and steps.
pub fn ade(preds: &[Vec<Point>], truths: &[Vec<Point>]) -> Result<f64> {
    let steps = truths.first().map_or(0, Vec::len);
    check(preds, truths, steps)?;
    let total: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| p.iter().zip(t).map(|(&a, &b)| a.distance(b)).sum::<f64>() / steps as f64)
        .sum();
    Ok(total / preds.len() as f64)
}

/// Mean Euclidean displacement at the final step.
pub fn fde(preds: &[Vec<Point>], truths: &[Vec<Point>]) -> Result<f64> {
    let steps = truths.first().map_or(0, Vec::len);
    check(preds, truths, steps)?;
    let total: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| p[steps - 1].distance(t[steps - 1]))
        .sum();
    Ok(total / preds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `(horizon seconds, RMSE meters)`, ascending.
    pub rmse_by_horizon: Vec<(f64, f64)>,
    pub ade: f64,
    pub fde: f64,
    pub sample_count: usize,
}

impl MetricReport {
    /// RMSE at every whole second that fits inside the prediction horizon,
    /// plus ADE and FDE over the full horizon.
    pub fn compute(preds: &[Vec<Point>], truths: &[Vec<Point>], rate: f64) -> Result<Self> {
        let steps = truths.first().map_or(0, Vec::len);
        check(preds, truths, steps)?;
        let mut rmse_by_horizon = Vec::new();
        let mut sec = 1;
        loop {
            let k = (sec as f64 * rate).round() as usize;
            if k == 0 || k > steps {
                break;
            }
            rmse_by_horizon.push((sec as f64, rmse(preds, truths, k)?));
            sec += 1;
        }
        Ok(Self {
            rmse_by_horizon,
            ade: ade(preds, truths)?,
            fde: fde(preds, truths)?,
            sample_count: preds.len(),
        })
    }
}
