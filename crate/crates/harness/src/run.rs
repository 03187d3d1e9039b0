//! Subcommand implementations and their on-disk outputs.
//!
//! Everything written here is a pure function of the configuration and seed,
//! except the `timing-*.json` files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mstf_core::masking::{build_padding_masks, write_mask_csv};
use mstf_core::trajdata::{denormalize, normalize, write_tracks_csv};
use mstf_core::{Model, Variant};
use mstf_numkernel::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::{self, Dataset};
use crate::error::{HarnessError, Result};
use crate::evaluate::{eval_masks, evaluate, persistence, EvalReport};
use crate::plot::{render, PlotInput};
use crate::report::{to_csv, to_table};
use crate::train::{train, TrainRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub malformed_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// Configuration snapshot; the output directory is left out so runs in
    /// different directories compare equal.
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub training: Vec<TrainRecord>,
    pub reports: Vec<EvalReport>,
}

pub struct RunOutcome {
    pub record: RunRecord,
    pub models: Vec<Model>,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    pub fn report(&self, model: &str) -> Option<&EvalReport> {
        self.record.reports.iter().find(|r| r.model == model)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn full_horizon(data: &Dataset) -> f64 {
    data.horizons.t_f as f64 / data.horizons.rate
}

fn snapshot(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        out_dir: PathBuf::new(),
        ..cfg.clone()
    }
}

fn summary(data: &Dataset) -> DatasetSummary {
    DatasetSummary {
        train: data.train.len(),
        val: data.val.len(),
        test: data.test.len(),
        malformed_rows: data.malformed_rows,
    }
}

fn save_model(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    model.to_checkpoint().save(path)?;
    Ok(())
}

pub fn checkpoint_path(out: &Path, variant: Variant) -> PathBuf {
    out.join(format!("checkpoint-{}.bin", variant.name()))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let ck = Checkpoint::load(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    Ok(Model::from_checkpoint(&ck)?)
}

fn write_reports(out: &Path, name: &str, reports: &[EvalReport], data: &Dataset) -> Result<()> {
    let h = full_horizon(data);
    for r in reports {
        write(&out.join(format!("{name}-{}.csv", r.model)), to_csv(r, h)?)?;
    }
    write(&out.join(format!("{name}.txt")), to_table(reports, h))
}

fn write_timing(out: &Path, name: &str, started: Instant) -> Result<()> {
    let secs = started.elapsed().as_secs_f64();
    write(&out.join(format!("timing-{name}.json")), format!("{{\"seconds\": {secs:.3}}}\n"))
}

/// Writes the synthetic tracks as CSV in the ingestion schema.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let tracks = dataset::synthetic_tracks(&cfg.dataset, cfg.seed)?;
    let mut buf = Vec::new();
    write_tracks_csv(&mut buf, &tracks)?;
    let path = cfg.out_dir.join("tracks.csv");
    write(&path, buf)?;
    Ok(path)
}

/// Trains one model, evaluates it and the persistence baseline on the test split.
pub fn train_and_report(cfg: &ExperimentConfig, variant: Variant) -> Result<RunOutcome> {
    let started = Instant::now();
    let data = dataset::load(&cfg.dataset, cfg.seed)?;
    let trained = train(cfg, variant, &data)?;
    let rates = cfg.eval_rates()?;
    let reports = vec![
        evaluate(&trained.model, &data.test, data.horizons, &rates, cfg.seed)?,
        persistence(&data.test, data.horizons, &rates, cfg.seed)?,
    ];
    let record = RunRecord {
        seed: cfg.seed,
        config: snapshot(cfg),
        dataset: summary(&data),
        training: vec![trained.record],
        reports,
    };
    let out = &cfg.out_dir;
    save_model(&trained.model, &checkpoint_path(out, variant))?;
    write(&out.join(format!("run-{}.json", variant.name())), json(&record))?;
    write_reports(out, &format!("report-{}", variant.name()), &record.reports, &data)?;
    write_timing(out, variant.name(), started)?;
    Ok(RunOutcome {
        record,
        models: vec![trained.model],
        out_dir: out.clone(),
    })
}

/// Evaluates a saved checkpoint on the configured test split.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<EvalReport>> {
    let model = load_model(checkpoint)?;
    let data = dataset::load(&cfg.dataset, cfg.seed)?;
    let rates = cfg.eval_rates()?;
    let reports = vec![
        evaluate(&model, &data.test, data.horizons, &rates, cfg.seed)?,
        persistence(&data.test, data.horizons, &rates, cfg.seed)?,
    ];
    write_reports(&cfg.out_dir, &format!("evaluate-{}", model.variant().name()), &reports, &data)?;
    Ok(reports)
}

/// Trains MSTF and V-TF on identical data, order and masks.
pub fn ablate(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    let data = dataset::load(&cfg.dataset, cfg.seed)?;
    let rates = cfg.eval_rates()?;
    let mut training = Vec::new();
    let mut reports = Vec::new();
    let mut models = Vec::new();
    for variant in [Variant::Mstf, Variant::Vtf] {
        let trained = train(cfg, variant, &data)?;
        reports.push(evaluate(&trained.model, &data.test, data.horizons, &rates, cfg.seed)?);
        save_model(&trained.model, &checkpoint_path(&cfg.out_dir, variant))?;
        training.push(trained.record);
        models.push(trained.model);
    }
    if training[0].mask_digest != training[1].mask_digest {
        return Err(HarnessError::Numerical("paired runs consumed different training masks".into()));
    }
    reports.push(persistence(&data.test, data.horizons, &rates, cfg.seed)?);
    let record = RunRecord {
        seed: cfg.seed,
        config: snapshot(cfg),
        dataset: summary(&data),
        training,
        reports,
    };
    write(&cfg.out_dir.join("ablation.json"), json(&record))?;
    write_reports(&cfg.out_dir, "ablation", &record.reports, &data)?;
    write_timing(&cfg.out_dir, "ablation", started)?;
    Ok(RunOutcome {
        record,
        models,
        out_dir: cfg.out_dir.clone(),
    })
}

/// One SVG per test sample (the first `count`) and evaluation interval.
pub fn plot(cfg: &ExperimentConfig, checkpoint: &Path, count: usize) -> Result<Vec<PathBuf>> {
    let model = load_model(checkpoint)?;
    let data = dataset::load(&cfg.dataset, cfg.seed)?;
    let rates = cfg.eval_rates()?;
    let n = count.min(data.test.len());
    let mut written = Vec::new();
    for (k, &rate) in rates.iter().enumerate() {
        let masks = eval_masks(data.test.len(), data.horizons.t_h, rate, cfg.seed)?;
        for (i, (sample, mask)) in data.test.iter().zip(&masks).take(n).enumerate() {
            let norm = normalize(&sample.clone().with_mask(mask.clone())?);
            let pred = denormalize(&model.predict(&norm)?.positions, &norm.frame);
            let title = format!("{} {} sample {i} (track {})", model.variant().name(), rate.label(), sample.track_id);
            let svg = render(&PlotInput {
                title: &title,
                history: &sample.history,
                mask,
                truth: &sample.future,
                prediction: &pred,
            });
            let path = cfg
                .out_dir
                .join("plots")
                .join(format!("{}-interval{k}-sample{i}.svg", model.variant().name()));
            write(&path, svg)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Evaluation masks per interval as CSV, plus the padding masks as 0/1 grids.
pub fn export_masks(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let data = dataset::load(&cfg.dataset, cfg.seed)?;
    let t_h = data.horizons.t_h;
    let dir = cfg.out_dir.join("masks");
    let mut written = Vec::new();
    for (k, rate) in cfg.eval_rates()?.into_iter().enumerate() {
        let masks = eval_masks(data.test.len(), t_h, rate, cfg.seed)?;
        let rows: Vec<(u64, &_)> = masks.iter().enumerate().map(|(i, m)| (i as u64, m)).collect();
        let mut buf = Vec::new();
        write_mask_csv(&mut buf, &rows)?;
        let path = dir.join(format!("eval-interval{k}.csv"));
        write(&path, buf)?;
        written.push(path);
    }
    let padding = build_padding_masks(t_h, cfg.model.n_heads)?;
    let mut grids = String::new();
    for (h, m) in padding.matrices().iter().enumerate() {
        grids.push_str(&format!("granularity {}\n{}\n", h + 1, m.to_grid()));
    }
    let path = dir.join("padding.txt");
    write(&path, grids)?;
    written.push(path);
    Ok(written)
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("records serialize");
    s.push('\n');
    s
}
