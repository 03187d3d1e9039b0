//! Trajectory samples: synthetic maneuvers, CSV track ingestion, splits and
//! the relative coordinate frame the model works in.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::masking::{apply_mask, SequenceMask};
use crate::point::Point;

/// Observation and prediction horizons in steps, plus the sampling rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizons {
    pub t_h: usize,
    pub t_f: usize,
    /// Samples per second.
    pub rate: f64,
}

impl Horizons {
    /// 2 s of history, 3 s of prediction at 10 Hz.
    pub const ARGOVERSE: Horizons = Horizons {
        t_h: 20,
        t_f: 30,
        rate: 10.0,
    };
    /// 3 s of history, 5 s of prediction at 5 Hz.
    pub const HIGHD: Horizons = Horizons {
        t_h: 15,
        t_f: 25,
        rate: 5.0,
    };

    pub fn window(&self) -> usize {
        self.t_h + self.t_f
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_h == 0 || self.t_f == 0 || !(self.rate > 0.0) {
            return Err(CoreError::Config(format!("invalid horizons {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub rate: f64,
    pub points: Vec<Point>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManeuverKind {
    LaneKeep,
    LeftChange,
    RightChange,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManeuverSpec {
    pub kind: ManeuverKind,
    /// Longitudinal speed range in m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Lateral offset of a lane change in meters (sign set by `kind`).
    pub lateral_displacement: f64,
    /// Per-coordinate Gaussian position noise in meters.
    pub noise_sigma: f64,
    /// Duration of the lateral transition in seconds.
    pub transition_s: f64,
}

impl ManeuverSpec {
    pub fn new(kind: ManeuverKind) -> Self {
        Self {
            kind,
            speed_min: 8.0,
            speed_max: 16.0,
            lateral_displacement: 3.5,
            noise_sigma: 0.0,
            transition_s: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed_min > 0.0 && self.speed_max >= self.speed_min) {
            return Err(CoreError::Config(format!(
                "speed range [{}, {}] must be positive",
                self.speed_min, self.speed_max
            )));
        }
        if !(self.noise_sigma >= 0.0) || !(self.transition_s > 0.0) || !self.lateral_displacement.is_finite() {
            return Err(CoreError::Config(format!("invalid maneuver spec {self:?}")));
        }
        Ok(())
    }

    fn lateral_sign(&self) -> f64 {
        match self.kind {
            ManeuverKind::LaneKeep => 0.0,
            ManeuverKind::LeftChange => 1.0,
            ManeuverKind::RightChange => -1.0,
        }
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// One synthetic track of `len` points.
///
/// Constant longitudinal speed along +x; lane changes follow a smoothstep in
/// y whose transition lies entirely inside the window, midpoint uniform over
/// the admissible range. Noise is i.i.d. per point and coordinate.
pub fn gen_synthetic_track(spec: &ManeuverSpec, id: u64, len: usize, rate: f64, rng: &mut impl Rng) -> Result<Trajectory> {
    spec.validate()?;
    let speed = if spec.speed_max > spec.speed_min {
        rng.gen_range(spec.speed_min..spec.speed_max)
    } else {
        spec.speed_min
    };
    let x0 = rng.gen_range(0.0..100.0);
    let y0 = f64::from(rng.gen_range(0u8..3)) * 3.5;
    let span = (len.saturating_sub(1)) as f64 / rate;
    let duration = spec.transition_s.min(span).max(f64::MIN_POSITIVE);
    let mid = if span > duration {
        rng.gen_range(duration / 2.0..=span - duration / 2.0)
    } else {
        span / 2.0
    };
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| CoreError::Config(e.to_string()))?;
    let lateral = spec.lateral_sign() * spec.lateral_displacement;
    let points = (0..len)
        .map(|t| {
            let tau = t as f64 / rate;
            let mut p = Point::new(
                x0 + speed * tau,
                y0 + lateral * smoothstep((tau - (mid - duration / 2.0)) / duration),
            );
            if spec.noise_sigma > 0.0 {
                p.x += noise.sample(rng);
                p.y += noise.sample(rng);
            }
            p
        })
        .collect();
    Ok(Trajectory { id, rate, points })
}

/// `count` single-window samples of the given maneuver, track ids `0..count`.
pub fn gen_synthetic(spec: &ManeuverSpec, count: usize, horizons: Horizons, rng: &mut impl Rng) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(CoreError::Config("synthetic count must be ≥ 1".into()));
    }
    horizons.validate()?;
    (0..count as u64)
        .map(|id| {
            let track = gen_synthetic_track(spec, id, horizons.window(), horizons.rate, rng)?;
            Sample::from_window(id, &track.points, horizons.t_h)
        })
        .collect()
}

/// History/future pair with the sequence mask applied to the history.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub track_id: u64,
    pub history: Vec<Point>,
    pub future: Vec<Point>,
    pub mask: SequenceMask,
}

impl Sample {
    /// Splits a window into history and future with a fully observed mask.
    pub fn from_window(track_id: u64, points: &[Point], t_h: usize) -> Result<Self> {
        if points.len() <= t_h || t_h == 0 {
            return Err(CoreError::LengthMismatch {
                what: "sample window",
                expected: t_h + 1,
                actual: points.len(),
            });
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(CoreError::Config(format!("track {track_id}: non-finite point at {i}")));
        }
        Ok(Self {
            track_id,
            history: points[..t_h].to_vec(),
            future: points[t_h..].to_vec(),
            mask: SequenceMask::all_observed(t_h),
        })
    }

    pub fn with_mask(mut self, mask: SequenceMask) -> Result<Self> {
        if mask.len() != self.history.len() {
            return Err(CoreError::LengthMismatch {
                what: "sample mask",
                expected: self.history.len(),
                actual: mask.len(),
            });
        }
        self.mask = mask;
        Ok(self)
    }

    /// Last observed history position.
    pub fn last_observed(&self) -> Point {
        self.history[self.mask.last_observed()]
    }
}

/// Translation taking absolute coordinates to the model's relative frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormFrame {
    pub origin: Point,
}

impl NormFrame {
    pub fn to_relative(&self, p: Point) -> Point {
        p - self.origin
    }

    pub fn to_absolute(&self, p: Point) -> Point {
        p + self.origin
    }
}

/// A sample expressed relative to its last observed history point.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSample {
    pub track_id: u64,
    pub history: Vec<Point>,
    pub future: Vec<Point>,
    pub mask: SequenceMask,
    pub frame: NormFrame,
}

impl NormalizedSample {
    /// History with missing steps zeroed (the model input).
    pub fn masked_history(&self) -> Vec<Point> {
        apply_mask(&self.history, &self.mask).expect("history and mask lengths agree")
    }
}

pub fn normalize(sample: &Sample) -> NormalizedSample {
    let frame = NormFrame {
        origin: sample.last_observed(),
    };
    NormalizedSample {
        track_id: sample.track_id,
        history: sample.history.iter().map(|&p| frame.to_relative(p)).collect(),
        future: sample.future.iter().map(|&p| frame.to_relative(p)).collect(),
        mask: sample.mask.clone(),
        frame,
    }
}

pub fn denormalize(pred: &[Point], frame: &NormFrame) -> Vec<Point> {
    pred.iter().map(|&p| frame.to_absolute(p)).collect()
}

/// CSV ingestion settings; the sampling rate is declared, not inferred.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub horizons: Horizons,
    /// Window start spacing in frames.
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowDiagnostic {
    /// 1-based line number in the file (header is line 1).
    pub line: u64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct IngestReport {
    pub samples: Vec<Sample>,
    pub tracks: usize,
    pub malformed_rows: usize,
    pub diagnostics: Vec<RowDiagnostic>,
}

pub const CSV_COLUMNS: [&str; 4] = ["track_id", "frame", "x", "y"];

pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    ingest_csv_reader(file, schema)
}

/// Reads `track_id,frame,x,y` rows (header required, extra columns ignored)
/// and cuts sliding windows of `t_h + t_f` frames per track.
///
/// Rows that fail to parse, or whose frame does not increase within their
/// track, are skipped and reported. Windows spanning a gap in frame numbers
/// are dropped.
pub fn ingest_csv_reader<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<IngestReport> {
    schema.horizons.validate()?;
    if schema.stride == 0 {
        return Err(CoreError::Config("stride must be ≥ 1".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 4];
    for (slot, name) in col.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CoreError::Csv(format!("missing column {name:?}")))?;
    }

    let mut tracks: BTreeMap<u64, Vec<(i64, Point)>> = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(RowDiagnostic {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let field = |k: usize| record.get(col[k]).map(str::trim).unwrap_or("");
        let parsed = (|| -> std::result::Result<(u64, i64, Point), String> {
            let id = field(0).parse::<u64>().map_err(|_| format!("track_id {:?} is not an integer", field(0)))?;
            let frame = field(1).parse::<i64>().map_err(|_| format!("frame {:?} is not an integer", field(1)))?;
            let x = field(2).parse::<f64>().map_err(|_| format!("x {:?} is not numeric", field(2)))?;
            let y = field(3).parse::<f64>().map_err(|_| format!("y {:?} is not numeric", field(3)))?;
            if !x.is_finite() || !y.is_finite() {
                return Err("non-finite coordinate".into());
            }
            Ok((id, frame, Point::new(x, y)))
        })();
        match parsed {
            Ok((id, frame, p)) => {
                let rows = tracks.entry(id).or_default();
                if let Some(&(prev, _)) = rows.last() {
                    if frame <= prev {
                        diagnostics.push(RowDiagnostic {
                            line,
                            message: format!("track {id}: frame {frame} does not follow {prev}"),
                        });
                        continue;
                    }
                }
                rows.push((frame, p));
            }
            Err(message) => diagnostics.push(RowDiagnostic { line, message }),
        }
    }

    let window = schema.horizons.window();
    let mut samples = Vec::new();
    for (&id, rows) in &tracks {
        let mut start = 0;
        while start + window <= rows.len() {
            let span = &rows[start..start + window];
            let contiguous = span.windows(2).all(|w| w[1].0 == w[0].0 + 1);
            if contiguous {
                let points: Vec<Point> = span.iter().map(|&(_, p)| p).collect();
                samples.push(Sample::from_window(id, &points, schema.horizons.t_h)?);
            }
            start += schema.stride;
        }
    }
    Ok(IngestReport {
        samples,
        tracks: tracks.len(),
        malformed_rows: diagnostics.len(),
        diagnostics,
    })
}

/// Writes tracks in the ingestion schema, frames numbered from 0.
pub fn write_tracks_csv<W: Write>(out: W, tracks: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for t in tracks {
        for (frame, p) in t.points.iter().enumerate() {
            w.write_record([t.id.to_string(), frame.to_string(), format!("{:?}", p.x), format!("{:?}", p.y)])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Partitions samples by track id: the shuffled id list is cut 70/10/20.
pub fn split_by_track(samples: Vec<Sample>, rng: &mut impl Rng) -> Splits {
    let mut ids: Vec<u64> = samples.iter().map(|s| s.track_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(rng);
    let n = ids.len();
    let n_val = ((n as f64 * 0.1).round() as usize).max(usize::from(n >= 3));
    let n_test = ((n as f64 * 0.2).round() as usize).max(usize::from(n >= 3));
    let n_train = n.saturating_sub(n_val + n_test);
    let mut which: BTreeMap<u64, u8> = BTreeMap::new();
    for (i, id) in ids.into_iter().enumerate() {
        let part = if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        };
        which.insert(id, part);
    }
    let mut splits = Splits::default();
    for s in samples {
        match which[&s.track_id] {
            0 => splits.train.push(s),
            1 => splits.val.push(s),
            _ => splits.test.push(s),
        }
    }
    splits
}

#[cfg(test)]
mod tests {
    use super::*;
    use mstf_numkernel::SeedRoot;

    fn schema(t_h: usize, t_f: usize, stride: usize) -> CsvSchema {
        CsvSchema {
            horizons: Horizons { t_h, t_f, rate: 10.0 },
            stride,
        }
    }

    fn track_csv(frames: impl Iterator<Item = i64>) -> String {
        let mut s = String::from("track_id,frame,x,y\n");
        for f in frames {
            s.push_str(&format!("1,{f},{},{}\n", f as f64 * 0.5, 1.0));
        }
        s
    }

    #[test]
    fn lane_keep_without_noise_moves_at_constant_velocity() {
        let mut spec = ManeuverSpec::new(ManeuverKind::LaneKeep);
        spec.speed_min = 10.0;
        spec.speed_max = 10.0;
        let mut rng = SeedRoot(1).stream("gen");
        let t = gen_synthetic_track(&spec, 0, 30, 5.0, &mut rng).unwrap();
        for w in t.points.windows(2) {
            let d = w[1] - w[0];
            assert!((d.x - 2.0).abs() < 1e-12, "{d:?}");
            assert_eq!(d.y, 0.0);
        }
    }

    #[test]
    fn lane_change_reaches_full_displacement() {
        let mut rng = SeedRoot(2).stream("gen");
        for kind in [ManeuverKind::LeftChange, ManeuverKind::RightChange] {
            let spec = ManeuverSpec::new(kind);
            for _ in 0..20 {
                let t = gen_synthetic_track(&spec, 0, 50, 10.0, &mut rng).unwrap();
                let dy = t.points.last().unwrap().y - t.points[0].y;
                let want = if kind == ManeuverKind::LeftChange { 3.5 } else { -3.5 };
                assert!((dy - want).abs() < 1e-9, "{dy}");
            }
        }
    }

    #[test]
    fn gen_synthetic_shapes() {
        let mut rng = SeedRoot(3).stream("gen");
        let s = gen_synthetic(&ManeuverSpec::new(ManeuverKind::LeftChange), 4, Horizons::ARGOVERSE, &mut rng).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|s| s.history.len() == 20 && s.future.len() == 30));
        assert!(gen_synthetic(&ManeuverSpec::new(ManeuverKind::LaneKeep), 0, Horizons::ARGOVERSE, &mut rng).is_err());
        let mut bad = ManeuverSpec::new(ManeuverKind::LaneKeep);
        bad.speed_min = -1.0;
        assert!(gen_synthetic(&bad, 1, Horizons::ARGOVERSE, &mut rng).is_err());
    }

    #[test]
    fn normalization_uses_last_observed_point() {
        let pts: Vec<Point> = (0..6).map(|i| Point::new(i as f64, 7.0 + i as f64)).collect();
        let sample = Sample::from_window(1, &pts, 4).unwrap();
        let n = normalize(&sample);
        assert_eq!(n.frame.origin, Point::new(3.0, 10.0));
        assert_eq!(n.history[3], Point::ORIGIN);

        let masked = sample.clone().with_mask(SequenceMask::from_bits(&[1, 1, 0, 0]).unwrap()).unwrap();
        let n = normalize(&masked);
        assert_eq!(n.frame.origin, pts[1]);
        let back = denormalize(&n.future, &n.frame);
        for (a, b) in back.iter().zip(&sample.future) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn window_counts() {
        let r = ingest_csv_reader(track_csv(0..50).as_bytes(), &schema(20, 30, 50)).unwrap();
        assert_eq!(r.samples.len(), 1);
        let r = ingest_csv_reader(track_csv(0..49).as_bytes(), &schema(20, 30, 50)).unwrap();
        assert_eq!(r.samples.len(), 0);
        let r = ingest_csv_reader(track_csv(0..60).as_bytes(), &schema(20, 30, 5)).unwrap();
        assert_eq!(r.samples.len(), 3);
    }

    #[test]
    fn windows_across_gaps_are_dropped() {
        // frames 0..10 then 12..22: any 6-frame window spanning 9→12 is discarded
        let frames = (0..10).chain(12..22);
        let r = ingest_csv_reader(track_csv(frames).as_bytes(), &schema(3, 3, 1)).unwrap();
        // starts 0..=4 lie in the first run, starts 10..=14 in the second
        assert_eq!(r.samples.len(), 10);
    }

    #[test]
    fn malformed_rows_are_reported() {
        let text = "frame,track_id,x,y,extra\n0,1,0.0,0.0,a\n1,1,abc,0.0,b\n1,1,1.0,0.0,c\n1,1,9.0,9.0,d\n2,1,2.0,0.0,e\n";
        let r = ingest_csv_reader(text.as_bytes(), &schema(2, 1, 1)).unwrap();
        assert_eq!(r.malformed_rows, 2);
        assert_eq!(r.diagnostics[0].line, 3);
        assert!(r.diagnostics[1].message.contains("does not follow"));
        assert_eq!(r.samples.len(), 1);
        assert_eq!(r.samples[0].future[0], Point::new(2.0, 0.0));

        let missing = "track_id,frame,x\n1,0,0.0\n";
        assert!(matches!(
            ingest_csv_reader(missing.as_bytes(), &schema(2, 1, 1)),
            Err(CoreError::Csv(_))
        ));
    }

    #[test]
    fn csv_round_trip_through_writer() {
        let mut rng = SeedRoot(4).stream("gen");
        let tracks: Vec<Trajectory> = (0..3)
            .map(|id| gen_synthetic_track(&ManeuverSpec::new(ManeuverKind::LeftChange), id, 50, 10.0, &mut rng).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_tracks_csv(&mut buf, &tracks).unwrap();
        let r = ingest_csv_reader(buf.as_slice(), &schema(20, 30, 50)).unwrap();
        assert_eq!(r.samples.len(), 3);
        assert_eq!(r.samples[2].history[0], tracks[2].points[0]);
        assert_eq!(r.samples[2].future[29], tracks[2].points[49]);
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let mut rng = SeedRoot(5).stream("gen");
        let samples = gen_synthetic(&ManeuverSpec::new(ManeuverKind::LaneKeep), 50, Horizons::HIGHD, &mut rng).unwrap();
        let a = split_by_track(samples.clone(), &mut SeedRoot(9).stream("split"));
        let b = split_by_track(samples, &mut SeedRoot(9).stream("split"));
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (35, 5, 10));
        let ids = |v: &[Sample]| v.iter().map(|s| s.track_id).collect::<Vec<_>>();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.test), ids(&b.test));
        for s in &a.test {
            assert!(!a.train.iter().any(|t| t.track_id == s.track_id));
            assert!(!a.val.iter().any(|t| t.track_id == s.track_id));
        }
    }
}
