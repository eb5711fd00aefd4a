//! Batches of constant-velocity and scripted collaborative insertions.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tipforce_core::control::{
    choose_gain, run_collaborative, run_constant_velocity, GainTrial, InsertionTrace, Operator,
    ReactiveOperator, StopReason,
};
use tipforce_core::exec::Exec;
use tipforce_core::PhantomSpec;

use crate::artifacts::EstimatorFactory;
use crate::manifest::Manifest;

/// Insertion numbers: robotic runs count from 0, practice runs and study runs
/// get their own ranges so every run draws its own friction and noise.
const PRACTICE_BASE: u64 = 1000;
const STUDY_BASE: u64 = 5000;

pub type NamedTrace = (String, InsertionTrace);

pub fn run_auto(
    phantoms: &[PhantomSpec],
    m: &Manifest,
    estimator: &EstimatorFactory,
    exec: Exec,
) -> Result<Vec<NamedTrace>> {
    let results = exec.map_range(m.auto.insertions, |i| {
        let p = &phantoms[i % phantoms.len()];
        let depth = (p.total_depth() - m.auto.depth_margin_mm).max(0.0);
        run_constant_velocity(
            p,
            m.auto.velocity_mm_s,
            depth,
            estimator(),
            &m.session,
            i as u64,
        )
        .map(|t| (format!("auto-{i:03}"), t))
        .with_context(|| format!("constant-velocity insertion {i} into {}", p.name))
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRecord {
    pub trace: String,
    pub operator: String,
    pub phantom: String,
    pub alpha: f64,
    pub trials: Vec<GainTrial>,
    pub stop: StopReason,
}

/// Gain choices of one collaborative batch, as written to `gains.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub runs: Vec<GainRecord>,
}

/// Every scripted participant inserts once into every phantom, after picking
/// a gain on three practice runs unless the manifest fixes it.
pub fn run_collab(
    phantoms: &[PhantomSpec],
    m: &Manifest,
    estimator: &EstimatorFactory,
    exec: Exec,
) -> Result<(Vec<NamedTrace>, Gains)> {
    let n = m.collab.operators * phantoms.len();
    let results = exec.map_range(n, |idx| -> Result<(NamedTrace, GainRecord)> {
        let k = (idx / phantoms.len()) as u64;
        let p = &phantoms[idx % phantoms.len()];
        let mut op = ReactiveOperator::persona(m.seed, k);
        let (alpha, trials) = match m.collab.alpha {
            Some(a) => (a, Vec::new()),
            None => {
                let g = choose_gain(
                    p,
                    &mut op,
                    &|| estimator(),
                    &m.session,
                    PRACTICE_BASE + 10 * idx as u64,
                )?;
                (g.alpha, g.trials)
            }
        };
        let mut cfg = m.session;
        cfg.controller.alpha = alpha;
        let (trace, stop) =
            run_collaborative(p, &mut op, estimator(), &cfg, STUDY_BASE + idx as u64)
                .with_context(|| format!("collaborative insertion {idx} into {}", p.name))?;
        let name = format!("collab-{idx:03}");
        let record = GainRecord {
            trace: name.clone(),
            operator: op.name(),
            phantom: p.name.clone(),
            alpha,
            trials,
            stop,
        };
        Ok(((name, trace), record))
    });
    let mut traces = Vec::with_capacity(n);
    let mut gains = Vec::with_capacity(n);
    for r in results {
        let (t, g) = r?;
        traces.push(t);
        gains.push(g);
    }
    Ok((traces, Gains { runs: gains }))
}

pub fn save_traces(dir: &Path, traces: &[NamedTrace]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, t) in traces {
        let path = dir.join(format!("{name}.csv"));
        t.save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
