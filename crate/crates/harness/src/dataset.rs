//! Turns a dataset section into train/validation/test samples.

use mstf_core::trajdata::{gen_synthetic_track, ingest_csv, split_by_track, CsvSchema, Horizons, ManeuverSpec, Sample, Splits, Trajectory};
use mstf_numkernel::SeedRoot;

use crate::config::{DatasetConfig, SplitMode};
use crate::error::{HarnessError, Result};

pub struct Dataset {
    pub horizons: Horizons,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Rows skipped during CSV ingestion.
    pub malformed_rows: usize,
}

/// Synthetic tracks exactly one window long; track `id` uses maneuver
/// `id mod maneuvers.len()`.
pub fn synthetic_tracks(cfg: &DatasetConfig, seed: u64) -> Result<Vec<Trajectory>> {
    let DatasetConfig::Synthetic {
        count,
        horizons,
        maneuvers,
        speed_min,
        speed_max,
        lateral_displacement,
        noise_sigma,
        transition_s,
        ..
    } = cfg
    else {
        return Err(HarnessError::Usage("dataset is not synthetic".into()));
    };
    let mut rng = SeedRoot(seed).stream("synthetic");
    (0..*count as u64)
        .map(|id| {
            let spec = ManeuverSpec {
                kind: maneuvers[id as usize % maneuvers.len()],
                speed_min: *speed_min,
                speed_max: *speed_max,
                lateral_displacement: *lateral_displacement,
                noise_sigma: *noise_sigma,
                transition_s: *transition_s,
            };
            Ok(gen_synthetic_track(&spec, id, horizons.window(), horizons.rate, &mut rng)?)
        })
        .collect()
}

pub fn load(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    let horizons = cfg.horizons();
    let (samples, malformed_rows) = match cfg {
        DatasetConfig::Synthetic { .. } => {
            let samples = synthetic_tracks(cfg, seed)?
                .into_iter()
                .map(|t| Sample::from_window(t.id, &t.points, horizons.t_h))
                .collect::<mstf_core::Result<Vec<_>>>()?;
            (samples, 0)
        }
        DatasetConfig::Csv { path, stride, .. } => {
            let report = ingest_csv(path, &CsvSchema { horizons, stride: *stride })
                .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
            for d in report.diagnostics.iter().take(20) {
                eprintln!("warning: {}:{}: {}", path.display(), d.line, d.message);
            }
            if report.malformed_rows > 20 {
                eprintln!("warning: {} malformed rows in total", report.malformed_rows);
            }
            (report.samples, report.malformed_rows)
        }
    };
    if samples.is_empty() {
        return Err(HarnessError::Data("dataset yields no samples".into()));
    }
    let Splits { train, val, test } = match cfg.split() {
        SplitMode::ByTrack => split_by_track(samples, &mut SeedRoot(seed).stream("split")),
        SplitMode::None => Splits {
            train: samples.clone(),
            val: samples.clone(),
            test: samples,
        },
    };
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(HarnessError::Data(format!(
            "split left an empty partition (train {}, val {}, test {})",
            train.len(),
            val.len(),
            test.len()
        )));
    }
    Ok(Dataset {
        horizons,
        train,
        val,
        test,
        malformed_rows,
    })
}
