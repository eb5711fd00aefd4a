use serde::{Deserialize, Serialize};

use super::detect::DetectionEvent;
use super::{short, Stats};
use crate::phantom::{InterfaceEvent, InterfaceKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceMatch {
    pub label: String,
    pub kind: InterfaceKind,
    pub depth_mm: f64,
    pub detected_mm: Option<f64>,
    pub distance_mm: Option<f64>,
    /// Detected minus true depth; positive when the event comes late.
    pub lag_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub interfaces: Vec<InterfaceMatch>,
    pub matched: usize,
    pub total: usize,
    pub detection_rate: f64,
    pub missed: Vec<String>,
    /// Distances of matched interfaces, in depth order.
    pub distances_mm: Vec<f64>,
    pub entry: Option<Stats>,
    pub exit: Option<Stats>,
    pub unmatched_events: usize,
}

impl DetectionReport {
    fn collect(&self, kind: InterfaceKind, f: impl Fn(&InterfaceMatch) -> Option<f64>) -> Vec<f64> {
        self.interfaces
            .iter()
            .filter(|m| m.kind == kind)
            .filter_map(f)
            .collect()
    }

    pub fn lags(&self, kind: InterfaceKind) -> Vec<f64> {
        self.collect(kind, |m| m.lag_mm)
    }

    pub fn distances(&self, kind: InterfaceKind) -> Vec<f64> {
        self.collect(kind, |m| m.distance_mm)
    }

    pub fn misses(&self, kind: InterfaceKind) -> usize {
        self.interfaces
            .iter()
            .filter(|m| m.kind == kind && m.detected_mm.is_none())
            .count()
    }
}

fn compatible(ev: &DetectionEvent, gt: &InterfaceEvent) -> bool {
    ev.kind.is_none_or(|k| k == gt.kind)
}

/// Greedy nearest matching: interfaces in depth order each take the closest
/// unused compatible event within `max_match_mm`. Ties go to the shallower event.
pub fn match_events(
    events: &[DetectionEvent],
    ground_truth: &[InterfaceEvent],
    max_match_mm: f64,
) -> DetectionReport {
    let mut evs: Vec<&DetectionEvent> = events.iter().collect();
    evs.sort_by(|a, b| a.depth_mm.total_cmp(&b.depth_mm));
    let mut gts: Vec<&InterfaceEvent> = ground_truth.iter().collect();
    gts.sort_by(|a, b| a.depth_mm.total_cmp(&b.depth_mm));

    let mut used = vec![false; evs.len()];
    let mut interfaces = Vec::with_capacity(gts.len());
    for gt in gts {
        let mut best: Option<(usize, f64)> = None;
        for (j, ev) in evs.iter().enumerate() {
            if used[j] || !compatible(ev, gt) {
                continue;
            }
            let d = (ev.depth_mm - gt.depth_mm).abs();
            if d <= max_match_mm && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let hit = best.map(|(j, d)| {
            used[j] = true;
            (evs[j].depth_mm, d)
        });
        interfaces.push(InterfaceMatch {
            label: gt.label.clone(),
            kind: gt.kind,
            depth_mm: gt.depth_mm,
            detected_mm: hit.map(|h| h.0),
            distance_mm: hit.map(|h| h.1),
            lag_mm: hit.map(|h| h.0 - gt.depth_mm),
        });
    }

    let total = interfaces.len();
    let matched = interfaces
        .iter()
        .filter(|m| m.detected_mm.is_some())
        .count();
    let mut report = DetectionReport {
        missed: interfaces
            .iter()
            .filter(|m| m.detected_mm.is_none())
            .map(|m| m.label.clone())
            .collect(),
        distances_mm: interfaces.iter().filter_map(|m| m.distance_mm).collect(),
        interfaces,
        matched,
        total,
        detection_rate: if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64
        },
        entry: None,
        exit: None,
        unmatched_events: used.iter().filter(|u| !**u).count(),
    };
    report.entry = Stats::of(&report.distances(InterfaceKind::Entry));
    report.exit = Stats::of(&report.distances(InterfaceKind::Exit));
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub label: String,
    pub distance: Option<Stats>,
}

/// One participant (or phantom) row of the detection table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub name: String,
    pub insertions: usize,
    pub detection_rate: f64,
    pub per_label: Vec<LabelStats>,
    pub mean: Option<Stats>,
}

/// Rows of detection rate and per-interface distances plus a pooled footer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTable {
    pub labels: Vec<String>,
    pub rows: Vec<DetectionRow>,
    pub label_means: Vec<LabelStats>,
    pub matched: usize,
    pub total: usize,
    pub detection_rate: f64,
    /// Missed gelatin-to-tissue interfaces.
    pub missed_entry: usize,
    /// Missed tissue-to-gelatin interfaces.
    pub missed_exit: usize,
    pub entry_distance: Option<Stats>,
    pub exit_distance: Option<Stats>,
    pub entry_lag: Option<Stats>,
    pub exit_lag: Option<Stats>,
}

fn label_stats(labels: &[String], reports: &[&DetectionReport]) -> Vec<LabelStats> {
    labels
        .iter()
        .map(|label| {
            let d: Vec<f64> = reports
                .iter()
                .flat_map(|r| r.interfaces.iter())
                .filter(|m| &m.label == label)
                .filter_map(|m| m.distance_mm)
                .collect();
            LabelStats {
                label: label.clone(),
                distance: Stats::of(&d),
            }
        })
        .collect()
}

fn rate(matched: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    }
}

/// Pools detection reports grouped by participant into the table layout.
pub fn detection_table(groups: &[(String, Vec<DetectionReport>)]) -> DetectionTable {
    let mut labels: Vec<String> = Vec::new();
    for m in groups
        .iter()
        .flat_map(|(_, rs)| rs)
        .flat_map(|r| &r.interfaces)
    {
        if !labels.contains(&m.label) {
            labels.push(m.label.clone());
        }
    }
    let all: Vec<&DetectionReport> = groups.iter().flat_map(|(_, rs)| rs).collect();
    let rows = groups
        .iter()
        .map(|(name, rs)| {
            let refs: Vec<&DetectionReport> = rs.iter().collect();
            let (m, t) = rs
                .iter()
                .fold((0, 0), |acc, r| (acc.0 + r.matched, acc.1 + r.total));
            let d: Vec<f64> = rs
                .iter()
                .flat_map(|r| r.distances_mm.iter().copied())
                .collect();
            DetectionRow {
                name: name.clone(),
                insertions: rs.len(),
                detection_rate: rate(m, t),
                per_label: label_stats(&labels, &refs),
                mean: Stats::of(&d),
            }
        })
        .collect();
    let (matched, total) = all
        .iter()
        .fold((0, 0), |acc, r| (acc.0 + r.matched, acc.1 + r.total));
    let pool = |f: &dyn Fn(&DetectionReport) -> Vec<f64>| -> Option<Stats> {
        Stats::of(&all.iter().flat_map(|r| f(r)).collect::<Vec<_>>())
    };
    DetectionTable {
        label_means: label_stats(&labels, &all),
        labels,
        rows,
        matched,
        total,
        detection_rate: rate(matched, total),
        missed_entry: all.iter().map(|r| r.misses(InterfaceKind::Entry)).sum(),
        missed_exit: all.iter().map(|r| r.misses(InterfaceKind::Exit)).sum(),
        entry_distance: pool(&|r| r.distances(InterfaceKind::Entry)),
        exit_distance: pool(&|r| r.distances(InterfaceKind::Exit)),
        entry_lag: pool(&|r| r.lags(InterfaceKind::Entry)),
        exit_lag: pool(&|r| r.lags(InterfaceKind::Exit)),
    }
}

impl DetectionTable {
    /// Plain-text rendering: one row per group with the rate first, then a mean row.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut header = vec!["name".to_string(), "DR".to_string()];
        header.extend(self.labels.iter().cloned());
        header.push("Mean".into());
        out.push_str(&header.join(" | "));
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![r.name.clone(), format!("{:.0}%", 100.0 * r.detection_rate)];
            cells.extend(r.per_label.iter().map(|l| short(&l.distance)));
            cells.push(short(&r.mean));
            out.push_str(&cells.join(" | "));
            out.push('\n');
        }
        let mut cells = vec![
            "Mean".to_string(),
            format!("{:.0}%", 100.0 * self.detection_rate),
        ];
        cells.extend(self.label_means.iter().map(|l| short(&l.distance)));
        out.push_str(&cells.join(" | "));
        out.push('\n');
        out.push_str(&format!(
            "missed {} of {} (tissue to gelatin {}, gelatin to tissue {})\n",
            self.total - self.matched,
            self.total,
            self.missed_exit,
            self.missed_entry
        ));
        out
    }
}
