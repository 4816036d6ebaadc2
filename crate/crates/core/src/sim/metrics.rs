//! Rollout measurement surface: boundary jumps, post-intervention tip
//! tracking error, residual decay series, and solve timing, serializable to
//! JSON (lossless) or plot-ready long-format CSV.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::intervene::DiscontinuityReport;

use super::SimError;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub method: String,
    pub seed: u64,
    pub misalignment: f64,
    pub steps: usize,
    /// Receding-horizon instrumentation: chunks requested and first actions
    /// executed must both equal `steps`.
    pub policy_predictions: usize,
    pub actions_executed: usize,
    pub discontinuity: DiscontinuityReport,
    /// Fingertip tracking error against the anchored human intent, logged on
    /// intervention steps.
    pub tracking: Vec<TrackingPoint>,
    /// Residual twist magnitudes and fused-vs-policy arm target offsets
    /// (the drift decay curve), logged on intervention steps.
    pub residuals: Vec<ResidualPoint>,
    pub timing: SolveTiming,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingPoint {
    pub step: u64,
    pub t: f64,
    /// Mean over fingers of || tip - (anchor tip + human delta) ||, meters.
    pub tip_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub step: u64,
    pub t: f64,
    pub linear: f64,
    pub angular: f64,
    /// Fused arm target displacement from the raw policy target.
    pub offset_position: f64,
    pub offset_rotation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SolveTiming {
    pub solves: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl SolveTiming {
    pub fn from_samples(mut ms: Vec<f64>) -> SolveTiming {
        if ms.is_empty() {
            return SolveTiming::default();
        }
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let pick = |q: f64| ms[((q * (n - 1) as f64).round() as usize).min(n - 1)];
        SolveTiming {
            solves: n,
            mean_ms: ms.iter().sum::<f64>() / n as f64,
            median_ms: pick(0.5),
            p95_ms: pick(0.95),
            max_ms: ms[n - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(SimError::InvalidScenario(format!(
                "unknown report format {other:?} (expected json or csv)"
            ))),
        }
    }
}

impl MetricsReport {
    /// Zeroes the wall-clock timing block; everything else in a report is a
    /// pure function of (scenario, config, method), which makes the result
    /// comparable against golden files.
    pub fn without_timing(&self) -> MetricsReport {
        MetricsReport {
            timing: SolveTiming::default(),
            ..self.clone()
        }
    }

    pub fn write_json(&self, mut w: impl Write) -> Result<(), SimError> {
        serde_json::to_writer_pretty(&mut w, self).map_err(SimError::from)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json(r: impl BufRead) -> Result<MetricsReport, SimError> {
        Ok(serde_json::from_reader(r)?)
    }

    /// Long-format CSV: one scalar per row under stable field names.
    pub fn write_csv(&self, w: impl Write) -> Result<(), SimError> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["kind", "name", "index", "time", "value"])?;
        let mut scalar = |kind: &str, name: &str, index: String, time: String, value: String| {
            csv.write_record([kind, name, &index, &time, &value])
        };
        scalar("meta", "schema_version", String::new(), String::new(), self.schema_version.to_string())?;
        scalar("meta", "method", String::new(), String::new(), self.method.clone())?;
        scalar("meta", "seed", String::new(), String::new(), self.seed.to_string())?;
        scalar("meta", "misalignment", String::new(), String::new(), self.misalignment.to_string())?;
        scalar("meta", "steps", String::new(), String::new(), self.steps.to_string())?;
        scalar("meta", "policy_predictions", String::new(), String::new(), self.policy_predictions.to_string())?;
        scalar("meta", "actions_executed", String::new(), String::new(), self.actions_executed.to_string())?;
        for (i, j) in self.discontinuity.jumps.iter().enumerate() {
            scalar("jump", "hand_l2", i.to_string(), j.toggle_time.to_string(), j.jump.to_string())?;
        }
        scalar("jump", "mean", String::new(), String::new(), self.discontinuity.mean.to_string())?;
        if let Some(ci) = self.discontinuity.ci95_half_width {
            scalar("jump", "ci95_half_width", String::new(), String::new(), ci.to_string())?;
        }
        for p in &self.tracking {
            scalar("tracking", "tip_error", p.step.to_string(), p.t.to_string(), p.tip_error.to_string())?;
        }
        for p in &self.residuals {
            scalar("residual", "linear", p.step.to_string(), p.t.to_string(), p.linear.to_string())?;
            scalar("residual", "angular", p.step.to_string(), p.t.to_string(), p.angular.to_string())?;
            scalar("residual", "offset_position", p.step.to_string(), p.t.to_string(), p.offset_position.to_string())?;
            scalar("residual", "offset_rotation", p.step.to_string(), p.t.to_string(), p.offset_rotation.to_string())?;
        }
        scalar("timing", "solves", String::new(), String::new(), self.timing.solves.to_string())?;
        scalar("timing", "mean_ms", String::new(), String::new(), self.timing.mean_ms.to_string())?;
        scalar("timing", "median_ms", String::new(), String::new(), self.timing.median_ms.to_string())?;
        scalar("timing", "p95_ms", String::new(), String::new(), self.timing.p95_ms.to_string())?;
        scalar("timing", "max_ms", String::new(), String::new(), self.timing.max_ms.to_string())?;
        csv.flush()?;
        Ok(())
    }

    pub fn write(&self, format: ReportFormat, w: impl Write) -> Result<(), SimError> {
        match format {
            ReportFormat::Json => self.write_json(w),
            ReportFormat::Csv => self.write_csv(w),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervene::ToggleJump;

    fn sample() -> MetricsReport {
        MetricsReport {
            schema_version: METRICS_SCHEMA_VERSION,
            method: "relative".into(),
            seed: 7,
            misalignment: 0.5,
            steps: 10,
            policy_predictions: 10,
            actions_executed: 10,
            discontinuity: DiscontinuityReport {
                jumps: vec![ToggleJump {
                    toggle_time: 0.8,
                    jump: 1e-7,
                }],
                mean: 1e-7,
                ci95_half_width: None,
            },
            tracking: vec![TrackingPoint {
                step: 40,
                t: 0.8,
                tip_error: 0.001,
            }],
            residuals: vec![ResidualPoint {
                step: 40,
                t: 0.8,
                linear: 0.02,
                angular: 0.1,
                offset_position: 4e-4,
                offset_rotation: 2e-3,
            }],
            timing: SolveTiming {
                solves: 5,
                mean_ms: 0.4,
                median_ms: 0.3,
                p95_ms: 0.9,
                max_ms: 1.2,
            },
        }
    }

    #[test]
    fn json_roundtrip_is_lossless() {
        let report = sample();
        let mut buf = Vec::new();
        report.write_json(&mut buf).unwrap();
        let back = MetricsReport::read_json(buf.as_slice()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn empty_report_serializes_cleanly() {
        let report = MetricsReport {
            discontinuity: DiscontinuityReport {
                jumps: vec![],
                mean: 0.0,
                ci95_half_width: None,
            },
            tracking: vec![],
            residuals: vec![],
            timing: SolveTiming::default(),
            ..sample()
        };
        let mut buf = Vec::new();
        report.write_json(&mut buf).unwrap();
        let back = MetricsReport::read_json(buf.as_slice()).unwrap();
        assert_eq!(back, report);
        let mut csv_buf = Vec::new();
        report.write_csv(&mut csv_buf).unwrap();
        assert!(!csv_buf.is_empty());
    }

    #[test]
    fn csv_rows_cover_every_series_point() {
        let report = sample();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        let count = |kind: &str| rows.iter().filter(|r| &r[0] == kind).count();
        assert_eq!(count("meta"), 7);
        assert_eq!(count("jump"), report.discontinuity.jumps.len() + 1);
        assert_eq!(count("tracking"), report.tracking.len());
        assert_eq!(count("residual"), 4 * report.residuals.len());
        assert_eq!(count("timing"), 5);
    }

    #[test]
    fn timing_quantiles_are_order_statistics() {
        let t = SolveTiming::from_samples(vec![5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(t.solves, 5);
        assert_eq!(t.median_ms, 3.0);
        assert_eq!(t.max_ms, 5.0);
        assert_eq!(t.mean_ms, 3.0);
        let empty = SolveTiming::from_samples(vec![]);
        assert_eq!(empty.solves, 0);
    }
}
