//! Post-hoc analysis of insertion traces: threshold and trigger detection,
//! interface matching, per-segment friction regression and the aggregate report.

mod detect;
mod friction;
mod matching;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use detect::{
    detect_threshold, trigger_events, DetectionEvent, EventSource, ForceColumn, ThresholdConfig,
};
pub use friction::{
    friction_regression, friction_table, ols, FrictionRow, FrictionSource, FrictionTable,
    SegmentSlope,
};
pub use matching::{
    detection_table, match_events, DetectionReport, DetectionRow, DetectionTable, InterfaceMatch,
    LabelStats,
};
pub use report::{
    summarize, AnalysisConfig, AnalysisReport, AutoSummary, CollabSummary, EstimatorMetrics,
    PlotSeries, TraceDetection, TraceInput, TraceSegments,
};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("segment {label} has {n} samples, at least 10 are needed for a slope")]
    DegenerateSegment { label: String, n: usize },
}

/// Sample statistics; `sd` uses the n - 1 denominator and is 0 for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            n,
            mean,
            sd,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// `mean(sd)` with two decimals, the compact form used in the tables.
    pub fn short(&self) -> String {
        format!("{:.2}({:.2})", self.mean, self.sd)
    }
}

fn short(s: &Option<Stats>) -> String {
    s.as_ref().map_or_else(|| "-".to_string(), Stats::short)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_small_cases() {
        assert!(Stats::of(&[]).is_none());
        let one = Stats::of(&[2.5]).unwrap();
        assert_eq!((one.mean, one.sd, one.min, one.max), (2.5, 0.0, 2.5, 2.5));
        let s = Stats::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.short(), "2.50(1.29)");
    }
}
