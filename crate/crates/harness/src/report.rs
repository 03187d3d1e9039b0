//! Report serialization: CSV rows and an aligned text table.

use std::fmt::Write as _;

use crate::error::Result;
use crate::evaluate::EvalReport;

pub const CSV_HEADER: [&str; 5] = ["interval", "metric", "horizon", "value", "sample_count"];

/// `(metric, horizon seconds, value)` in report order: RMSE per horizon,
/// then ADE and FDE at the full horizon.
fn entries(m: &mstf_core::MetricReport, full_horizon: f64) -> Vec<(&'static str, f64, f64)> {
    let mut out: Vec<_> = m.rmse_by_horizon.iter().map(|&(h, v)| ("rmse", h, v)).collect();
    out.push(("ade", full_horizon, m.ade));
    out.push(("fde", full_horizon, m.fde));
    out
}

pub fn to_csv(report: &EvalReport, full_horizon: f64) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let row = |w: &mut csv::Writer<Vec<u8>>, fields: [String; 5]| {
        w.write_record(fields).map_err(|e| crate::error::HarnessError::Data(e.to_string()))
    };
    row(&mut w, CSV_HEADER.map(String::from))?;
    for r in &report.intervals {
        for (metric, horizon, value) in entries(&r.metrics, full_horizon) {
            row(
                &mut w,
                [
                    r.interval.label(),
                    metric.to_string(),
                    horizon.to_string(),
                    value.to_string(),
                    r.metrics.sample_count.to_string(),
                ],
            )?;
        }
    }
    let bytes = w.into_inner().map_err(|e| crate::error::HarnessError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Side-by-side table: one row per metric and horizon, one column per
/// interval and model. Reports must cover the same intervals.
pub fn to_table(reports: &[EvalReport], full_horizon: f64) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    const W: usize = 12;
    let mut out = String::new();
    let _ = write!(out, "{:<14}", "");
    for r in &first.intervals {
        let _ = write!(out, "{:<width$}", r.interval.label(), width = W * reports.len());
    }
    out.push('\n');
    let _ = write!(out, "{:<14}", "metric");
    for _ in &first.intervals {
        for rep in reports {
            let _ = write!(out, "{:>W$}", rep.model);
        }
    }
    out.push('\n');
    let rows = entries(&first.intervals[0].metrics, full_horizon);
    for (k, (metric, horizon, _)) in rows.iter().enumerate() {
        let _ = write!(out, "{:<14}", format!("{} @{}s", metric.to_uppercase(), horizon));
        for i in 0..first.intervals.len() {
            for rep in reports {
                let value = entries(&rep.intervals[i].metrics, full_horizon)[k].2;
                let _ = write!(out, "{value:>W$.3}");
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "samples: {}", first.intervals[0].metrics.sample_count);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::IntervalReport;
    use mstf_core::{MetricReport, MissingRate};

    fn report(model: &str, scale: f64) -> EvalReport {
        EvalReport {
            model: model.into(),
            intervals: MissingRate::STANDARD
                .iter()
                .enumerate()
                .map(|(i, &interval)| IntervalReport {
                    interval,
                    metrics: MetricReport {
                        rmse_by_horizon: vec![(1.0, scale * (i + 1) as f64), (2.0, scale * (i + 2) as f64)],
                        ade: scale,
                        fde: 2.0 * scale,
                        sample_count: 4,
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn csv_rows_cover_every_interval_and_metric() {
        let text = to_csv(&report("mstf", 1.0), 2.0).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "interval,metric,horizon,value,sample_count");
        assert_eq!(lines.len(), 1 + 3 * 4);
        assert_eq!(lines[1], "\"(0,0.3]\",rmse,1,1,4");
        assert_eq!(lines[4], "\"(0,0.3]\",fde,2,2,4");
    }

    #[test]
    fn table_lists_models_side_by_side() {
        let t = to_table(&[report("mstf", 1.0), report("vtf", 2.0)], 2.0);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2 + 4 + 1);
        assert_eq!(lines[1].matches("mstf").count(), 3);
        assert_eq!(lines[1].matches("vtf").count(), 3);
        assert!(lines[2].starts_with("RMSE @1s"));
        assert!(lines[4].starts_with("ADE @2s"));
    }
}
