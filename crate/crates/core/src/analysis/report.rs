use serde::{Deserialize, Serialize};

use super::detect::{detect_threshold, trigger_events, ForceColumn, ThresholdConfig};
use super::friction::{
    friction_regression, friction_table, FrictionSource, FrictionTable, SegmentSlope,
};
use super::matching::{detection_table, match_events, DetectionReport, DetectionTable};
use super::{short, Stats};
use crate::control::{InsertionTrace, TraceMode};
use crate::meta::VERSION;
use crate::neural::{Arch, EvalReport};
use crate::phantom::PhantomSpec;

#[derive(Debug, Clone, Copy)]
pub struct TraceInput<'a> {
    pub name: &'a str,
    pub trace: &'a InsertionTrace,
    pub phantom: &'a PhantomSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub threshold: ThresholdConfig,
    pub max_match_mm: f64,
    pub friction_source: FrictionSource,
    /// Keep every n-th sample in the plot series.
    pub series_stride: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            threshold: ThresholdConfig::default(),
            max_match_mm: 20.0,
            friction_source: FrictionSource::ShaftMinusTrue,
            series_stride: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDetection {
    pub trace: String,
    pub phantom: String,
    pub operator: String,
    pub alpha: f64,
    pub report: DetectionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSegments {
    pub trace: String,
    pub segments: Vec<SegmentSlope>,
}

/// Constant-velocity block: threshold detection lags and the friction table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoSummary {
    pub n_traces: usize,
    /// Threshold detection on the true tip force, grouped by phantom.
    pub detection_true: DetectionTable,
    /// The same detector run on the estimated tip force.
    pub detection_est: DetectionTable,
    pub entry_lag: Option<Stats>,
    pub exit_lag: Option<Stats>,
    pub friction_source: FrictionSource,
    pub friction: FrictionTable,
    pub segments: Vec<TraceSegments>,
    /// Traces whose regression failed, with the reason.
    pub skipped: Vec<String>,
}

/// Collaborative block: operator triggers matched against the interfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollabSummary {
    pub n_traces: usize,
    pub table: DetectionTable,
    pub per_trace: Vec<TraceDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub version: String,
    pub config: AnalysisConfig,
    pub n_traces: usize,
    pub auto: Option<AutoSummary>,
    pub collab: Option<CollabSummary>,
    /// Filled in by callers that evaluated estimators alongside the traces.
    pub estimators: Vec<EstimatorMetrics>,
}

/// Accuracy part of an [`EvalReport`]; timings vary run to run and live elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub arch: Arch,
    pub n_scored: usize,
    pub mae: f64,
    pub pcc: Option<f64>,
    pub selected: bool,
}

impl EstimatorMetrics {
    pub fn from_eval(e: &EvalReport, selected: bool) -> Self {
        Self {
            arch: e.arch,
            n_scored: e.n_scored,
            mae: e.mae,
            pcc: e.pcc,
            selected,
        }
    }
}

/// Downsampled columns for force-over-depth and force-over-time plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub trace: String,
    pub mode: TraceMode,
    pub t_s: Vec<f64>,
    pub depth_mm: Vec<f64>,
    pub f_tip_true_n: Vec<f64>,
    pub f_tip_est_n: Vec<f64>,
    pub f_shaft_n: Vec<f64>,
    pub f_friction_n: Vec<f64>,
    pub f_handle_n: Vec<f64>,
    pub felt_n: Vec<f64>,
    pub trigger_depths_mm: Vec<f64>,
    pub interface_depths_mm: Vec<f64>,
}

impl PlotSeries {
    fn of(input: &TraceInput<'_>, stride: usize) -> Self {
        let s: Vec<_> = input.trace.samples.iter().step_by(stride.max(1)).collect();
        let alpha = input.trace.meta.alpha;
        Self {
            trace: input.name.to_string(),
            mode: input.trace.meta.mode,
            t_s: s.iter().map(|s| s.t_s).collect(),
            depth_mm: s.iter().map(|s| s.depth_mm).collect(),
            f_tip_true_n: s.iter().map(|s| s.f_tip_true_n).collect(),
            f_tip_est_n: s.iter().map(|s| s.f_tip_est_n).collect(),
            f_shaft_n: s.iter().map(|s| s.f_shaft_n).collect(),
            f_friction_n: s.iter().map(|s| s.f_friction_n).collect(),
            f_handle_n: s.iter().map(|s| s.f_handle_n).collect(),
            felt_n: s.iter().map(|s| alpha * s.f_tip_est_n).collect(),
            trigger_depths_mm: trigger_events(input.trace)
                .iter()
                .map(|e| e.depth_mm)
                .collect(),
            interface_depths_mm: input
                .phantom
                .interfaces()
                .iter()
                .map(|i| i.depth_mm)
                .collect(),
        }
    }
}

/// Groups `(key, value)` pairs by key in first-seen order.
fn group<T>(items: Vec<(String, T)>) -> Vec<(String, Vec<T>)> {
    let mut out: Vec<(String, Vec<T>)> = Vec::new();
    for (k, v) in items {
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, vs)) => vs.push(v),
            None => out.push((k, vec![v])),
        }
    }
    out
}

fn threshold_report(
    input: &TraceInput<'_>,
    cfg: &AnalysisConfig,
    column: ForceColumn,
) -> DetectionReport {
    let t = ThresholdConfig {
        column,
        ..cfg.threshold
    };
    let events = detect_threshold(input.trace, input.phantom.skin_end(), &t);
    match_events(&events, &input.phantom.interfaces(), cfg.max_match_mm)
}

fn summarize_auto(inputs: &[&TraceInput<'_>], cfg: &AnalysisConfig) -> AutoSummary {
    let by_phantom = |column| {
        group(
            inputs
                .iter()
                .map(|i| {
                    (
                        i.trace.meta.phantom.clone(),
                        threshold_report(i, cfg, column),
                    )
                })
                .collect(),
        )
    };
    let detection_true = detection_table(&by_phantom(ForceColumn::True));
    let detection_est = detection_table(&by_phantom(ForceColumn::Estimated));
    let mut segments = Vec::new();
    let mut skipped = Vec::new();
    for i in inputs {
        match friction_regression(i.trace, i.phantom, cfg.friction_source) {
            Ok(s) => segments.push(TraceSegments {
                trace: i.name.to_string(),
                segments: s,
            }),
            Err(e) => skipped.push(format!("{}: {e}", i.name)),
        }
    }
    let all: Vec<SegmentSlope> = segments
        .iter()
        .flat_map(|t| t.segments.iter().cloned())
        .collect();
    AutoSummary {
        n_traces: inputs.len(),
        entry_lag: detection_true.entry_lag,
        exit_lag: detection_true.exit_lag,
        detection_true,
        detection_est,
        friction_source: cfg.friction_source,
        friction: friction_table(&all),
        segments,
        skipped,
    }
}

fn summarize_collab(inputs: &[&TraceInput<'_>], cfg: &AnalysisConfig) -> CollabSummary {
    let per_trace: Vec<TraceDetection> = inputs
        .iter()
        .map(|i| TraceDetection {
            trace: i.name.to_string(),
            phantom: i.trace.meta.phantom.clone(),
            operator: i.trace.meta.operator.clone(),
            alpha: i.trace.meta.alpha,
            report: match_events(
                &trigger_events(i.trace),
                &i.phantom.interfaces(),
                cfg.max_match_mm,
            ),
        })
        .collect();
    let groups = group(
        per_trace
            .iter()
            .map(|d| (d.operator.clone(), d.report.clone()))
            .collect(),
    );
    CollabSummary {
        n_traces: inputs.len(),
        table: detection_table(&groups),
        per_trace,
    }
}

/// Aggregates traces into one report plus plot-ready series, in input order.
pub fn summarize(
    inputs: &[TraceInput<'_>],
    cfg: &AnalysisConfig,
) -> (AnalysisReport, Vec<PlotSeries>) {
    let auto: Vec<&TraceInput<'_>> = inputs
        .iter()
        .filter(|i| i.trace.meta.mode == TraceMode::Auto)
        .collect();
    let collab: Vec<&TraceInput<'_>> = inputs
        .iter()
        .filter(|i| i.trace.meta.mode == TraceMode::Collab)
        .collect();
    let report = AnalysisReport {
        version: VERSION.to_string(),
        config: *cfg,
        n_traces: inputs.len(),
        auto: (!auto.is_empty()).then(|| summarize_auto(&auto, cfg)),
        collab: (!collab.is_empty()).then(|| summarize_collab(&collab, cfg)),
        estimators: Vec::new(),
    };
    let series = inputs
        .iter()
        .map(|i| PlotSeries::of(i, cfg.series_stride))
        .collect();
    (report, series)
}

impl AnalysisReport {
    /// Human-readable rendering of the tables.
    pub fn render(&self) -> String {
        let mut out = format!("analysis of {} traces\n", self.n_traces);
        if let Some(a) = &self.auto {
            out.push_str(&format!(
                "\n## constant velocity ({} traces)\n\n",
                a.n_traces
            ));
            out.push_str(&format!(
                "threshold detection on true tip force: rate {:.3}, entry lag {} mm, exit lag {} mm\n",
                a.detection_true.detection_rate,
                short(&a.entry_lag),
                short(&a.exit_lag)
            ));
            out.push_str(&format!(
                "threshold detection on estimated tip force: rate {:.3}, entry lag {} mm, exit lag {} mm\n\n",
                a.detection_est.detection_rate,
                short(&a.detection_est.entry_lag),
                short(&a.detection_est.exit_lag)
            ));
            out.push_str("friction per unit length [N/mm]\n");
            out.push_str(&a.friction.render());
            for s in &a.skipped {
                out.push_str(&format!("skipped {s}\n"));
            }
        }
        if let Some(c) = &self.collab {
            out.push_str(&format!("\n## collaborative ({} traces)\n\n", c.n_traces));
            out.push_str("detection rate and distances [mm]\n");
            out.push_str(&c.table.render());
        }
        for e in &self.estimators {
            out.push_str(&format!(
                "\nestimator {}{}: MAE {:.3} N, pCC {}\n",
                e.arch.display_name(),
                if e.selected { " (selected)" } else { "" },
                e.mae,
                e.pcc.map_or("-".into(), |p| format!("{p:.3}"))
            ));
        }
        out
    }
}
