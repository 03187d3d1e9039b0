//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Failures are reported but only turn into a non-zero exit with
//! `MSTF_ACCEPTANCE_STRICT=1`. The training criteria dominate the runtime; set
//! `MSTF_ACCEPTANCE_ONLY` to a comma-separated list of criterion keys to run a
//! subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use mstf_core::masking::{
    build_padding_masks, info_increment, observation_matrices, sample_sequence_mask, MissingRate, SequenceMask,
};
use mstf_core::metrics::{ade, fde, rmse, MetricReport};
use mstf_core::model::{iipa_weights, Model, ModelConfig, Variant};
use mstf_core::trajdata::{normalize, ManeuverKind, NormalizedSample, Sample};
use mstf_core::Point;
use mstf_harness::evaluate::PERSISTENCE;
use mstf_harness::run::{ablate, train_and_report};
use mstf_harness::{DatasetConfig, ExperimentConfig, LrSchedule, SplitMode};
use mstf_numkernel::gradcheck::{grad_check, GradCheckOptions};
use mstf_numkernel::{HeadLayout, SeedRoot, StreamRng, Tape, Tensor};
use rand::Rng;

type Outcome = Result<String, String>;

struct Criterion {
    key: &'static str,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria = [
        Criterion { key: "masks", name: "mask oracle suite", budget: secs(5), run: mask_oracle },
        Criterion { key: "sigma", name: "information-increment oracle", budget: secs(5), run: sigma_oracle },
        Criterion { key: "blindness", name: "masking blindness", budget: secs(30), run: masking_blindness },
        Criterion { key: "gradient", name: "gradient check", budget: secs(60), run: gradient_check },
        Criterion { key: "softmax", name: "softmax/IIPA contracts", budget: secs(5), run: softmax_contracts },
        Criterion { key: "metrics", name: "metric oracles", budget: secs(1), run: metric_oracles },
        Criterion { key: "overfit", name: "overfit sanity", budget: secs(600), run: overfit },
        Criterion { key: "trend", name: "baseline-beating trend", budget: secs(1800), run: trend },
        Criterion { key: "ablation", name: "ablation direction", budget: secs(3600), run: ablation },
        Criterion { key: "determinism", name: "determinism", budget: secs(600), run: determinism },
    ];
    let only: Option<Vec<String>> = std::env::var("MSTF_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|k| k.trim().to_string()).collect());
    let mut failed = Vec::new();
    let mut ran = 0;
    for c in &criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|k| k == c.key)) {
            continue;
        }
        let started = Instant::now();
        let result = (c.run)();
        let elapsed = started.elapsed();
        let over = elapsed > c.budget;
        let (status, detail) = match (&result, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; over time budget")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        ran += 1;
        if status == "FAIL" {
            failed.push(c.key);
        }
        println!(
            "{status} {:<30} {:>8.2}s / {:>5}s  {detail}",
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
    }
    println!("{} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failing: {}", failed.join(", "));
        if std::env::var("MSTF_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn rng(label: &str) -> StreamRng {
    SeedRoot(2024).stream(label)
}

// ---- masks ----------------------------------------------------------------

fn mask_oracle() -> Outcome {
    let mut cells = 0usize;
    for len in 1..=64 {
        let set = build_padding_masks(len, 8).map_err(|e| e.to_string())?;
        for i in 1..=8 {
            let m = set.granularity(i);
            // 1-based step indices a, b
            for a in 1..=len {
                for b in 1..=len {
                    let oracle = (a as i64 - b as i64).rem_euclid(i as i64) == 0;
                    if m.get(a - 1, b - 1) != oracle {
                        return Err(format!("len {len} granularity {i} cell ({a},{b})"));
                    }
                    cells += 1;
                }
            }
        }
    }
    Ok(format!("{cells} cells equal"))
}

fn sigma_oracle() -> Outcome {
    let mut rng = rng("sigma");
    let mut draws = 0;
    while draws < 1000 {
        let len = rng.gen_range(1..=32);
        let lo = rng.gen_range(0.0..0.9);
        let hi = rng.gen_range(lo + 0.05..=1.0f64).min(1.0);
        let Ok(rate) = MissingRate::new(lo, hi) else {
            continue;
        };
        let Ok(ms) = sample_sequence_mask(len, rate, &mut rng) else {
            continue;
        };
        let heads = rng.gen_range(1..=8);
        let padding = build_padding_masks(len, heads).map_err(|e| e.to_string())?;
        let sigma = info_increment(&observation_matrices(&ms, &padding).map_err(|e| e.to_string())?);
        for h in 0..heads {
            let i = h + 1;
            for j in 0..len {
                let direct = ms
                    .values()
                    .iter()
                    .enumerate()
                    .filter(|&(l, &seen)| seen && (j as i64 - l as i64) % i as i64 == 0)
                    .count() as u32;
                if sigma.head(h)[j] != direct {
                    return Err(format!("len {len} head {i} step {j}: {} vs {direct}", sigma.head(h)[j]));
                }
            }
        }
        draws += 1;
    }
    Ok(format!("{draws} draws equal"))
}

// ---- model ----------------------------------------------------------------

fn small_config(len: usize, d_model: usize, n_heads: usize, n_layers: usize, t_f: usize) -> ModelConfig {
    ModelConfig {
        d_model,
        n_heads,
        n_layers,
        d_ff: 2 * d_model,
        t_h: len,
        t_f,
        decoder_hidden: 12,
        coord_scale: 4.0,
    }
}

fn random_sample(cfg: &ModelConfig, mask: SequenceMask, rng: &mut StreamRng) -> NormalizedSample {
    let v = rng.gen_range(0.5..1.5);
    let pts: Vec<Point> = (0..cfg.t_h + cfg.t_f)
        .map(|t| Point::new(v * t as f64, rng.gen_range(-1.0..1.0)))
        .collect();
    normalize(&Sample::from_window(0, &pts, cfg.t_h).unwrap().with_mask(mask).unwrap())
}

fn motion_rows(m: &Model, s: &NormalizedSample, inputs: &[Point]) -> Result<Tensor, String> {
    let mut batch = m.batch(std::slice::from_ref(s)).map_err(|e| e.to_string())?;
    let scale = m.config().coord_scale;
    batch.inputs = Tensor::matrix(inputs.len(), 2, inputs.iter().flat_map(|p| [p.x / scale, p.y / scale]).collect())
        .map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let vars = m.params().bind(&mut tape);
    let enc = m.encoder_graph(&mut tape, &vars, &batch).map_err(|e| e.to_string())?;
    Ok(tape.value(enc.r_m).clone())
}

fn masking_blindness() -> Outcome {
    let mut rng = rng("blindness");
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let n_heads = rng.gen_range(1..=5);
        let d_k = rng.gen_range(1..=4);
        let len = rng.gen_range(2..=16);
        let cfg = small_config(len, n_heads * d_k, n_heads, 1, 4);
        let m = Model::new(cfg, Variant::Mstf, &mut SeedRoot(trial).stream("init")).map_err(|e| e.to_string())?;
        let rate = MissingRate::STANDARD[rng.gen_range(0..3)];
        let ms = sample_sequence_mask(len, rate, &mut rng).unwrap_or_else(|_| SequenceMask::all_observed(len));
        let s = random_sample(&cfg, ms.clone(), &mut rng);
        let padding = build_padding_masks(len, n_heads).map_err(|e| e.to_string())?;
        let attention = observation_matrices(&ms, &padding).map_err(|e| e.to_string())?.attention_masks();
        let base_inputs = s.masked_history();
        let base = motion_rows(&m, &s, &base_inputs)?;
        for l in 0..len {
            let mut inputs = base_inputs.clone();
            inputs[l] = inputs[l] + Point::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let moved = motion_rows(&m, &s, &inputs)?;
            for (h, mask) in attention.iter().enumerate() {
                // row j of head h is blind to step l when (j, l) is masked and l is not j itself
                for j in (0..len).filter(|&j| j != l && !mask.get(j, l)) {
                    for c in h * d_k..(h + 1) * d_k {
                        worst = worst.max((base.at(j, c) - moved.at(j, c)).abs());
                        checked += 1;
                    }
                }
            }
        }
    }
    check(
        worst <= 1e-12 && checked > 1000,
        format!("{checked} masked entries, max change {worst:.1e} (tol 1e-12)"),
    )
}

fn gradient_check() -> Outcome {
    let cfg = small_config(8, 20, 4, 2, 4);
    let mut model = Model::new(cfg, Variant::Mstf, &mut SeedRoot(3).stream("init")).map_err(|e| e.to_string())?;
    // move off the ReLU kink that zero biases and zeroed inputs sit on
    let mut jitter = rng("jitter");
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += jitter.gen_range(-0.1..0.1);
        }
    }
    let mut rng = rng("grad-samples");
    let rate = MissingRate::new(0.3, 0.6).unwrap();
    let samples: Vec<NormalizedSample> = (0..3)
        .map(|_| {
            let mask = sample_sequence_mask(cfg.t_h, rate, &mut rng).unwrap();
            random_sample(&cfg, mask, &mut rng)
        })
        .collect();
    let batch = model.batch(&samples).map_err(|e| e.to_string())?;
    let opts = GradCheckOptions { step: 1e-4, floor: 1e-6 };
    let mut worst = (0.0f64, String::new());
    let mut entries = 0;
    for (i, (name, tensor)) in model.params().iter().enumerate() {
        let report = grad_check(
            |tape, x| {
                let mut vars = model.params().bind(tape);
                vars[i] = x;
                let (pos, _) = model.forward_graph(tape, &vars, &batch).map_err(|e| match e {
                    mstf_core::CoreError::Kernel(k) => k,
                    other => panic!("{other}"),
                })?;
                Ok(model.loss_graph(tape, pos, &batch).expect("targets present"))
            },
            tensor,
            opts,
        )
        .map_err(|e| e.to_string())?;
        entries += tensor.numel();
        if report.max_rel_error > worst.0 {
            let w = report.worst_index;
            worst = (
                report.max_rel_error,
                format!("{name}[{w}] (analytic {:.3e}, numeric {:.3e})", report.analytic[w], report.numeric[w]),
            );
        }
    }
    check(
        worst.0 < 1e-4,
        format!("{entries} parameters, max relative error {:.2e} at {} (tol 1e-4)", worst.0, worst.1),
    )
}

fn softmax_contracts() -> Outcome {
    let mut rng = rng("softmax");
    let mut worst_row = 0.0f64;
    let mut worst_iipa = 0.0f64;
    let mut worst_shift = 0.0f64;
    for trial in 0..1000 {
        // attention rows under a random mask with at least one admitted key per row
        let len = rng.gen_range(1..=12);
        let dk = rng.gen_range(1..=4);
        let mut r = |rows: usize| Tensor::from_fn(rows, dk, |_, _| rng.gen_range(-4.0..4.0));
        let (q, k, v) = (r(len), r(len), r(len));
        let mut mask: Vec<bool> = (0..len * len).map(|_| rng.gen_bool(0.5)).collect();
        for j in 0..len {
            mask[j * len + rng.gen_range(0..len)] = true;
        }
        let mut tape = Tape::new();
        let (qv, kv, vv) = (tape.constant(q), tape.constant(k), tape.constant(v));
        let layout = HeadLayout { batch: 1, len, heads: 1, head_dim: dk };
        let out = tape.masked_attention(qv, kv, vv, layout, Arc::from(mask.clone())).map_err(|e| e.to_string())?;
        let w = tape.attention_weights(out).ok_or("no attention weights")?.to_vec();
        for j in 0..len {
            let row = &w[j * len..(j + 1) * len];
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
            if row.iter().zip(&mask[j * len..(j + 1) * len]).any(|(&x, &m)| !m && x != 0.0) {
                return Err(format!("trial {trial}: masked key received weight"));
            }
        }

        let n = rng.gen_range(1..=40);
        let sigma: Vec<u32> = (0..n).map(|_| rng.gen_range(0..=n as u32)).collect();
        let iipa = iipa_weights(&sigma);
        worst_iipa = worst_iipa.max((iipa.iter().sum::<f64>() - 1.0).abs());
        let arg_w = (0..n).fold(0, |b, i| if iipa[i] > iipa[b] { i } else { b });
        let max_sigma = *sigma.iter().max().unwrap();
        if sigma[arg_w] != max_sigma {
            return Err(format!("trial {trial}: IIPA argmax {arg_w} has σ {} < {max_sigma}", sigma[arg_w]));
        }
        let shift = rng.gen_range(1..100u32);
        let shifted: Vec<u32> = sigma.iter().map(|s| s + shift).collect();
        for (a, b) in iipa.iter().zip(iipa_weights(&shifted)) {
            worst_shift = worst_shift.max((a - b).abs());
        }
    }
    check(
        worst_row <= 1e-12 && worst_iipa <= 1e-12 && worst_shift <= 1e-12,
        format!(
            "1000 trials; row sum err {worst_row:.1e}, IIPA sum err {worst_iipa:.1e}, shift err {worst_shift:.1e} (tol 1e-12)"
        ),
    )
}

// ---- metrics --------------------------------------------------------------

fn metric_oracles() -> Outcome {
    let e = |r: mstf_core::Result<f64>| r.map_err(|e| e.to_string());
    let truth = vec![vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(5.0, 2.0)]];
    let mut examples: Vec<(&str, f64, f64)> = vec![
        ("rmse(pred = truth)", e(rmse(&truth, &truth, 3))?, 0.0),
        ("ade(pred = truth)", e(ade(&truth, &truth))?, 0.0),
        ("fde(pred = truth)", e(fde(&truth, &truth))?, 0.0),
    ];
    let offset = vec![truth[0].iter().map(|&p| p + Point::new(3.0, 4.0)).collect::<Vec<_>>()];
    examples.push(("rmse(offset 3,4)", e(rmse(&offset, &truth, 3))?, 5.0));
    examples.push(("ade(offset 3,4)", e(ade(&offset, &truth))?, 5.0));
    examples.push(("fde(offset 3,4)", e(fde(&offset, &truth))?, 5.0));
    let zeros = vec![vec![Point::ORIGIN; 2]; 2];
    let two = vec![
        vec![Point::new(1.0, 0.0), Point::new(0.0, 1.0)],
        vec![Point::new(2.0, 0.0), Point::new(0.0, 2.0)],
    ];
    examples.push(("rmse(two samples)", e(rmse(&two, &zeros, 2))?, 2.5f64.sqrt()));
    let one = vec![vec![Point::new(1.0, 0.0), Point::new(0.0, 3.0)]];
    examples.push(("ade(displacements 1,3)", e(ade(&one, &zeros[..1]))?, 2.0));
    examples.push(("fde(displacements 1,3)", e(fde(&one, &zeros[..1]))?, 3.0));
    for (name, got, want) in &examples {
        if got != want {
            return Err(format!("{name} = {got}, expected {want}"));
        }
    }

    let mut rng = rng("metrics");
    let mut worst_shift = 0.0f64;
    let mut worst_scale = 0.0f64;
    for _ in 0..200 {
        let m = rng.gen_range(1..6);
        let t_f = rng.gen_range(1..8);
        // coordinates on a 1/8 grid and integer shifts keep every sum exact
        let mut set = || -> Vec<Vec<Point>> {
            (0..m)
                .map(|_| {
                    (0..t_f)
                        .map(|_| Point::new(rng.gen_range(-80..80) as f64 / 8.0, rng.gen_range(-80..80) as f64 / 8.0))
                        .collect()
                })
                .collect()
        };
        let (p, t) = (set(), set());
        let base = report(&p, &t)?;
        let d = Point::new(rng.gen_range(-1000..1000) as f64, rng.gen_range(-1000..1000) as f64);
        let shift = |s: &[Vec<Point>]| -> Vec<Vec<Point>> { s.iter().map(|r| r.iter().map(|&q| q + d).collect()).collect() };
        for (a, b) in base.iter().zip(report(&shift(&p), &shift(&t))?) {
            worst_shift = worst_shift.max((a - b).abs());
        }
        let c = rng.gen_range(0.1..10.0);
        let scale = |s: &[Vec<Point>]| -> Vec<Vec<Point>> {
            s.iter().map(|r| r.iter().map(|&q| Point::new(q.x * c, q.y * c)).collect()).collect()
        };
        for (a, b) in base.iter().zip(report(&scale(&p), &scale(&t))?) {
            worst_scale = worst_scale.max((a * c - b).abs() / (a * c).abs().max(1.0));
        }
    }
    check(
        worst_shift <= 1e-12 && worst_scale <= 1e-12,
        format!(
            "{} worked examples exact; translation err {worst_shift:.1e}, scaling err {worst_scale:.1e} (tol 1e-12)",
            examples.len()
        ),
    )
}

fn report(p: &[Vec<Point>], t: &[Vec<Point>]) -> Result<Vec<f64>, String> {
    let r = MetricReport::compute(p, t, 1.0).map_err(|e| e.to_string())?;
    let mut v: Vec<f64> = r.rmse_by_horizon.iter().map(|h| h.1).collect();
    v.extend([r.ade, r.fde]);
    Ok(v)
}

// ---- training -------------------------------------------------------------

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mstf-acceptance-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn synthetic(count: usize, maneuvers: Vec<ManeuverKind>, split: SplitMode) -> DatasetConfig {
    let base = ExperimentConfig::from_toml(&format!("seed = 0\n[dataset]\nkind = \"synthetic\"\ncount = {count}\n"))
        .expect("minimal config parses");
    match base.dataset {
        DatasetConfig::Synthetic {
            horizons,
            speed_min,
            speed_max,
            lateral_displacement,
            noise_sigma,
            transition_s,
            ..
        } => DatasetConfig::Synthetic {
            count,
            horizons,
            maneuvers,
            speed_min,
            speed_max,
            lateral_displacement,
            noise_sigma,
            transition_s,
            split,
        },
        DatasetConfig::Csv { .. } => unreachable!(),
    }
}

fn experiment(seed: u64, dataset: DatasetConfig, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(&format!("seed = {seed}\n[dataset]\nkind = \"synthetic\"\ncount = 1\n"))
        .expect("minimal config parses");
    cfg.dataset = dataset;
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn rate(lo: f64, hi: f64) -> MissingRate {
    MissingRate::new(lo, hi).unwrap()
}

fn ade_at(outcome: &mstf_harness::RunOutcome, model: &str, r: MissingRate) -> Result<f64, String> {
    outcome
        .report(model)
        .and_then(|rep| rep.interval(r))
        .map(|m| m.ade)
        .ok_or_else(|| format!("no {model} report for {}", r.label()))
}

const LANE_CHANGES: [ManeuverKind; 2] = [ManeuverKind::LeftChange, ManeuverKind::RightChange];

fn overfit() -> Outcome {
    let dir = scratch_dir("overfit");
    let all = vec![ManeuverKind::LaneKeep, ManeuverKind::LeftChange, ManeuverKind::RightChange];
    let mut cfg = experiment(1, synthetic(32, all, SplitMode::None), &dir);
    cfg.epochs = 500;
    cfg.batch_size = 1;
    cfg.learning_rate = 1e-3;
    cfg.lr_schedule = LrSchedule::Cosine;
    cfg.grad_clip = Some(1.0);
    cfg.train_interval = [0.0, 0.3];
    cfg.intervals = vec![[0.0, 0.3]];
    let outcome = train_and_report(&cfg, Variant::Mstf).map_err(|e| e.to_string())?;
    let ade = ade_at(&outcome, "mstf", rate(0.0, 0.3))?;
    let _ = fs::remove_dir_all(&dir);
    check(ade < 0.05, format!("train ADE {ade:.4} m over 32 samples (need < 0.05)"))
}

fn trend_config(seed: u64, out: &Path) -> ExperimentConfig {
    let mut cfg = experiment(seed, synthetic(2000, LANE_CHANGES.to_vec(), SplitMode::ByTrack), out);
    cfg.epochs = 60;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e-3;
    cfg.lr_schedule = LrSchedule::Cosine;
    cfg.grad_clip = Some(1.0);
    cfg.train_interval = [0.3, 0.6];
    cfg
}

fn trend() -> Outcome {
    let dir = scratch_dir("trend");
    let cfg = trend_config(1, &dir);
    let outcome = train_and_report(&cfg, Variant::Mstf).map_err(|e| e.to_string())?;
    let rates = cfg.eval_rates().map_err(|e| e.to_string())?;
    let mut model_ade = Vec::new();
    for &r in &rates {
        model_ade.push(ade_at(&outcome, "mstf", r)?);
    }
    let mid = rate(0.3, 0.6);
    let base = ade_at(&outcome, PERSISTENCE, mid)?;
    let ours = ade_at(&outcome, "mstf", mid)?;
    let gain = 1.0 - ours / base;
    let ordered = model_ade.windows(2).all(|w| w[0] <= w[1] * 1.05);
    let _ = fs::remove_dir_all(&dir);
    let series: Vec<String> = rates.iter().zip(&model_ade).map(|(r, a)| format!("{} {a:.3}", r.label())).collect();
    check(
        gain >= 0.2 && ordered,
        format!(
            "ADE {ours:.3} vs persistence {base:.3} ({:.0}% lower, need ≥ 20%); by interval: {} (adjacent slack 5%)",
            gain * 100.0,
            series.join(", ")
        ),
    )
}

fn ablation() -> Outcome {
    let mid = rate(0.3, 0.6);
    let mut per_seed = BTreeMap::new();
    for seed in [1u64, 2, 3] {
        let dir = scratch_dir(&format!("ablation-{seed}"));
        let mut cfg = trend_config(seed, &dir);
        cfg.intervals = vec![[0.3, 0.6]];
        let outcome = ablate(&cfg).map_err(|e| e.to_string())?;
        per_seed.insert(seed, (ade_at(&outcome, "mstf", mid)?, ade_at(&outcome, "vtf", mid)?));
        let _ = fs::remove_dir_all(&dir);
    }
    let n = per_seed.len() as f64;
    let mstf = per_seed.values().map(|v| v.0).sum::<f64>() / n;
    let vtf = per_seed.values().map(|v| v.1).sum::<f64>() / n;
    let seeds: Vec<String> = per_seed
        .iter()
        .map(|(s, (m, v))| format!("seed {s}: {m:.3}/{v:.3}"))
        .collect();
    check(
        mstf <= vtf,
        format!("mean ADE MSTF {mstf:.3} vs V-TF {vtf:.3} on {}; {}", mid.label(), seeds.join(", ")),
    )
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = fs::read_dir(dir) {
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(files(&p));
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dirs = [scratch_dir("det-a"), scratch_dir("det-b")];
    for d in &dirs {
        let mut cfg = experiment(17, synthetic(120, LANE_CHANGES.to_vec(), SplitMode::ByTrack), d);
        cfg.epochs = 3;
        cfg.batch_size = 16;
        cfg.grad_clip = Some(1.0);
        cfg.lr_schedule = LrSchedule::Cosine;
        train_and_report(&cfg, Variant::Mstf).map_err(|e| e.to_string())?;
        ablate(&cfg).map_err(|e| e.to_string())?;
    }
    let (a, b) = (files(&dirs[0]), files(&dirs[1]));
    let mut compared = 0;
    for pa in &a {
        let rel = pa.strip_prefix(&dirs[0]).unwrap();
        if rel.to_string_lossy().starts_with("timing-") {
            continue;
        }
        let pb = dirs[1].join(rel);
        if fs::read(pa).ok() != fs::read(&pb).ok() {
            return Err(format!("{} differs", rel.display()));
        }
        compared += 1;
    }
    for d in &dirs {
        let _ = fs::remove_dir_all(d);
    }
    check(
        compared >= 8 && a.len() == b.len(),
        format!("{compared} checkpoint/report files byte-identical across two same-seed runs"),
    )
}
