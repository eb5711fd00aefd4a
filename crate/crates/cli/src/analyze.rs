//! Offline analysis of saved traces against ground-truth phantoms.

use std::path::Path;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use tipforce_core::analysis::{summarize, AnalysisConfig, AnalysisReport, PlotSeries, TraceInput};
use tipforce_core::control::InsertionTrace;
use tipforce_core::meta::{config_hash, Provenance, VERSION};
use tipforce_core::PhantomSpec;

use crate::artifacts::{trace_name, write_json, write_stamped, write_text};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    /// Consistency problems that were overridden with `--force`.
    pub warnings: Vec<String>,
    pub report: AnalysisReport,
}

pub struct Analysis {
    pub seed: u64,
    pub warnings: Vec<String>,
    pub report: AnalysisReport,
    pub series: Vec<PlotSeries>,
}

fn phantom_for<'a>(phantoms: &'a [PhantomSpec], t: &InsertionTrace) -> Option<&'a PhantomSpec> {
    phantoms.iter().find(|p| trace_name(p) == t.meta.phantom)
}

/// Provenance mismatches between traces and the ground truth: phantom hashes,
/// crate versions and seeds.
pub fn consistency_problems(
    traces: &[(String, InsertionTrace)],
    phantoms: &[PhantomSpec],
) -> Vec<String> {
    let mut out = Vec::new();
    let seed = traces.first().map(|(_, t)| t.meta.seed);
    for (name, t) in traces {
        if let Some(p) = phantom_for(phantoms, t) {
            let h = config_hash(p);
            if h != t.meta.phantom_hash {
                out.push(format!(
                    "{name}: phantom {} hash {} does not match ground truth {h}",
                    t.meta.phantom, t.meta.phantom_hash
                ));
            }
        }
        if t.meta.version != VERSION {
            out.push(format!(
                "{name}: written by version {}, this is {VERSION}",
                t.meta.version
            ));
        }
        if Some(t.meta.seed) != seed {
            out.push(format!(
                "{name}: seed {} differs from {}",
                t.meta.seed,
                seed.unwrap_or_default()
            ));
        }
    }
    out
}

pub fn analyze(
    traces: &[(String, InsertionTrace)],
    phantoms: &[PhantomSpec],
    cfg: &AnalysisConfig,
    force: bool,
) -> Result<Analysis> {
    let mut inputs = Vec::with_capacity(traces.len());
    for (name, t) in traces {
        let Some(p) = phantom_for(phantoms, t) else {
            bail!("{name}: no ground truth for phantom {:?}", t.meta.phantom);
        };
        inputs.push(TraceInput {
            name,
            trace: t,
            phantom: p,
        });
    }
    let warnings = consistency_problems(traces, phantoms);
    if !warnings.is_empty() {
        if !force {
            bail!(
                "refusing to analyze mismatched inputs (use --force to override):\n  {}",
                warnings.join("\n  ")
            );
        }
        for w in &warnings {
            log::warn!("{w}");
        }
    }
    let (report, series) = summarize(&inputs, cfg);
    Ok(Analysis {
        seed: traces.first().map_or(0, |(_, t)| t.meta.seed),
        warnings,
        report,
        series,
    })
}

impl Analysis {
    /// JSON report at `path`, its text rendering next to it, and optional plot series.
    pub fn write(
        &self,
        path: &Path,
        cfg: &AnalysisConfig,
        series_dir: Option<&Path>,
    ) -> Result<()> {
        let provenance = Provenance::new(self.seed, cfg);
        write_stamped(
            path,
            &provenance,
            ReportBody {
                warnings: self.warnings.clone(),
                report: self.report.clone(),
            },
        )?;
        write_text(&path.with_extension("txt"), &self.report.render())?;
        if let Some(dir) = series_dir {
            for s in &self.series {
                write_json(&dir.join(format!("{}.json", s.trace)), s)?;
            }
        }
        Ok(())
    }
}
