use serde::{Deserialize, Serialize};

use crate::control::{ForceSample, InsertionTrace};
use crate::phantom::InterfaceKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceColumn {
    Estimated,
    True,
}

impl ForceColumn {
    fn pick(self, s: &ForceSample) -> f64 {
        match self {
            ForceColumn::Estimated => s.f_tip_est_n,
            ForceColumn::True => s.f_tip_true_n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    Threshold,
    UserTrigger,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub depth_mm: f64,
    pub t_s: f64,
    /// Known for threshold crossings; a trigger press does not say which way.
    pub kind: Option<InterfaceKind>,
    pub source: EventSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub threshold_n: f64,
    /// Entry fires above `threshold + h/2`, exit below `threshold - h/2`.
    pub hysteresis_n: f64,
    /// Consecutive ticks beyond the level before a crossing counts.
    pub debounce_ticks: usize,
    pub column: ForceColumn,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            threshold_n: 1.0,
            hysteresis_n: 0.2,
            debounce_ticks: 3,
            column: ForceColumn::Estimated,
        }
    }
}

/// Hysteresis threshold detector over one force column.
///
/// An event sits at the depth of the first tick of the run that confirmed it.
/// The state machine also runs inside the skin so that a skin puncture does
/// not leak into the first gelatin layer, but events located above
/// `skin_end_mm` are dropped.
pub fn detect_threshold(
    trace: &InsertionTrace,
    skin_end_mm: f64,
    cfg: &ThresholdConfig,
) -> Vec<DetectionEvent> {
    let hi = cfg.threshold_n + 0.5 * cfg.hysteresis_n;
    let lo = cfg.threshold_n - 0.5 * cfg.hysteresis_n;
    let need = cfg.debounce_ticks.max(1);
    let mut above = false;
    let mut run = 0usize;
    let mut run_start = 0usize;
    let mut events = Vec::new();
    for (i, s) in trace.samples.iter().enumerate() {
        let f = cfg.column.pick(s);
        let crossing = if above { f < lo } else { f > hi };
        if !crossing {
            run = 0;
            continue;
        }
        if run == 0 {
            run_start = i;
        }
        run += 1;
        if run < need {
            continue;
        }
        above = !above;
        run = 0;
        let first = &trace.samples[run_start];
        if first.depth_mm >= skin_end_mm {
            events.push(DetectionEvent {
                depth_mm: first.depth_mm,
                t_s: first.t_s,
                kind: Some(if above {
                    InterfaceKind::Entry
                } else {
                    InterfaceKind::Exit
                }),
                source: EventSource::Threshold,
            });
        }
    }
    events
}

/// One event per rising edge of the trigger column.
pub fn trigger_events(trace: &InsertionTrace) -> Vec<DetectionEvent> {
    let mut prev = false;
    let mut events = Vec::new();
    for s in &trace.samples {
        if s.trigger && !prev {
            events.push(DetectionEvent {
                depth_mm: s.depth_mm,
                t_s: s.t_s,
                kind: None,
                source: EventSource::UserTrigger,
            });
        }
        prev = s.trigger;
    }
    events
}
