//! calibrate -> train both architectures -> select -> insert -> analyze.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use tipforce_core::analysis::{AnalysisReport, EstimatorMetrics};
use tipforce_core::exec::Exec;
use tipforce_core::neural::Arch;
use tipforce_core::neural::{
    evaluate, generate_recording, select_best, train, CalibrationConfig, Checkpoint, EpochStats,
    EvalReport, Model, Recording, WindowSet,
};
use tipforce_core::rng::Stream;

use crate::analyze::analyze;
use crate::artifacts::{neural_factory, trace_name, write_json, write_phantom, write_stamped};
use crate::manifest::Manifest;
use crate::runs::{run_auto, run_collab, save_traces};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    Phantoms,
    Calibrate,
    Train,
    Evaluate,
    Auto,
    Collab,
    Analyze,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source:#}")]
pub struct StageError {
    pub stage: Stage,
    pub source: anyhow::Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            source: e.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineOptions {
    /// Reuse the checkpoints already in the output directory.
    pub skip_train: bool,
    pub exec: Exec,
}

/// One trained candidate: its validation MAE decides, test metrics are reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub arch: Arch,
    pub val_mae: f64,
    pub test: EstimatorMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: Arch,
    pub candidates: Vec<Candidate>,
}

/// Wall-clock measurements; kept apart from the deterministic artifacts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages_s: Vec<(Stage, f64)>,
    pub train_s: Vec<(Arch, f64)>,
    pub evals: Vec<EvalReport>,
    /// 99th percentile of per-frame streaming inference, ms.
    pub p99_frame_ms: Vec<(Arch, f64)>,
    pub total_s: f64,
}

pub struct PipelineOutcome {
    pub out: PathBuf,
    pub selection: Selection,
    pub evals: Vec<EvalReport>,
    pub report: AnalysisReport,
    pub timings: Timings,
}

pub fn checkpoint_path(out: &Path, arch: Arch) -> PathBuf {
    out.join("models").join(format!("{}.ckpt", arch.tag()))
}

/// Trains one architecture on a calibration recording; the checkpoint carries
/// its final validation MAE.
pub fn train_arch(
    m: &Manifest,
    arch: Arch,
    rec: &Recording,
    exec: Exec,
) -> anyhow::Result<(Checkpoint, Vec<EpochStats>)> {
    let model = Model::new(&m.model_config(arch));
    let windows = WindowSet::new(rec, model.pool(), model.seq_len())?;
    log::info!(
        "training {arch} ({} parameters) on {} windows",
        model.n_params(),
        windows.len()
    );
    let outcome = train(&model, &windows, &m.train, exec)?;
    let val_mae = outcome.final_val_mae();
    log::info!("{arch}: final validation MAE {val_mae:.4} N");
    let mut ck = Checkpoint::new(&model, outcome.params, Some(m.train), m.seed);
    ck.header.val_mae = Some(val_mae);
    Ok((ck, outcome.history))
}

/// `models/cgru.ckpt` -> `models/cgru.history.json`.
pub fn history_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("history.json")
}

fn p99(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    v[(v.len() * 99).div_ceil(100) - 1]
}

fn record(m: &Manifest, stream: Stream, n: usize, exec: Exec) -> anyhow::Result<Recording> {
    let cfg = CalibrationConfig { n, ..m.calibration };
    Ok(generate_recording(
        &cfg,
        &m.session.sensor,
        m.seed,
        stream,
        exec,
    )?)
}

pub fn run_pipeline(
    m: &Manifest,
    out: &Path,
    opts: PipelineOptions,
) -> Result<PipelineOutcome, StageError> {
    let started = Instant::now();
    let mut timings = Timings::default();
    let mut clock = Instant::now();
    let mut lap = |stage: Stage, timings: &mut Timings| {
        timings
            .stages_s
            .push((stage, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
        log::info!("stage {stage} done");
    };
    let mut m = m.clone();
    m.sync_seeds();
    let prov = m.provenance();
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .at(Stage::Setup)?;
    write_stamped(&out.join("manifest.json"), &prov, &m).at(Stage::Setup)?;

    let phantoms = m.phantoms().at(Stage::Phantoms)?;
    for p in &phantoms {
        let path = out.join("phantoms").join(format!("{}.toml", trace_name(p)));
        write_phantom(&path, p, &prov).at(Stage::Phantoms)?;
    }
    lap(Stage::Phantoms, &mut timings);

    let data = out.join("data");
    std::fs::create_dir_all(&data).at(Stage::Calibrate)?;
    let calibration = if opts.skip_train {
        None
    } else {
        let rec =
            record(&m, Stream::Calibration, m.calibration.n, opts.exec).at(Stage::Calibrate)?;
        rec.save(&data.join("calibration.bin"))
            .at(Stage::Calibrate)?;
        Some(rec)
    };
    let test = record(&m, Stream::TestStream, m.test_frames, opts.exec).at(Stage::Calibrate)?;
    test.save(&data.join("test.bin")).at(Stage::Calibrate)?;
    lap(Stage::Calibrate, &mut timings);

    let mut checkpoints = Vec::new();
    for arch in [Arch::Cgru, Arch::Resnet] {
        let path = checkpoint_path(out, arch);
        let ck = match &calibration {
            None => Checkpoint::load(&path)
                .map_err(|e| anyhow!("missing or unreadable checkpoint {}: {e}", path.display()))
                .at(Stage::Train)?,
            Some(rec) => {
                let t0 = Instant::now();
                let (ck, history) = train_arch(&m, arch, rec, opts.exec).at(Stage::Train)?;
                timings.train_s.push((arch, t0.elapsed().as_secs_f64()));
                write_json(&history_path(&path), &history).at(Stage::Train)?;
                ck.save(&path).at(Stage::Train)?;
                ck
            }
        };
        checkpoints.push((arch, ck));
    }
    lap(Stage::Train, &mut timings);

    let mut candidates = Vec::new();
    let mut evals = Vec::new();
    for (arch, ck) in &checkpoints {
        let model = ck.model().at(Stage::Evaluate)?;
        let (report, preds) = evaluate(&model, &ck.params, &test).at(Stage::Evaluate)?;
        let val_mae = ck
            .header
            .val_mae
            .ok_or_else(|| anyhow!("checkpoint for {arch} carries no validation MAE"))
            .at(Stage::Evaluate)?;
        log::info!(
            "{arch}: validation MAE {val_mae:.4} N, test MAE {:.4} N, pCC {:?}",
            report.mae,
            report.pcc
        );
        timings.p99_frame_ms.push((*arch, p99(&preds.step_ms)));
        candidates.push(Candidate {
            arch: *arch,
            val_mae,
            test: EstimatorMetrics::from_eval(&report, false),
        });
        evals.push(report);
    }
    let selected = select_best(
        &candidates
            .iter()
            .map(|c| (c.arch, c.val_mae))
            .collect::<Vec<_>>(),
    )
    .ok_or_else(|| anyhow!("no candidate has a finite validation MAE"))
    .at(Stage::Evaluate)?;
    for c in &mut candidates {
        c.test.selected = c.arch == selected;
    }
    let selection = Selection {
        selected,
        candidates,
    };
    write_stamped(
        &out.join("models").join("selection.json"),
        &prov,
        &selection,
    )
    .at(Stage::Evaluate)?;
    timings.evals = evals.clone();
    lap(Stage::Evaluate, &mut timings);

    let ck = &checkpoints
        .iter()
        .find(|(a, _)| *a == selected)
        .expect("selected among candidates")
        .1;
    let estimator = neural_factory(ck).at(Stage::Auto)?;
    let traces_dir = out.join("traces");
    if traces_dir.exists() {
        std::fs::remove_dir_all(&traces_dir).at(Stage::Auto)?;
    }
    let auto = run_auto(&phantoms, &m, &estimator, opts.exec).at(Stage::Auto)?;
    save_traces(&traces_dir, &auto).at(Stage::Auto)?;
    lap(Stage::Auto, &mut timings);

    let (collab, gains) = run_collab(&phantoms, &m, &estimator, opts.exec).at(Stage::Collab)?;
    save_traces(&traces_dir, &collab).at(Stage::Collab)?;
    write_stamped(&out.join("collab").join("gains.json"), &prov, &gains).at(Stage::Collab)?;
    lap(Stage::Collab, &mut timings);

    let all: Vec<_> = auto.into_iter().chain(collab).collect();
    let mut analysis = analyze(&all, &phantoms, &m.analysis, false).at(Stage::Analyze)?;
    analysis.report.estimators = selection
        .candidates
        .iter()
        .map(|c| c.test.clone())
        .collect();
    let series = out.join("series");
    if series.exists() {
        std::fs::remove_dir_all(&series).at(Stage::Analyze)?;
    }
    analysis
        .write(&out.join("report.json"), &m.analysis, Some(&series))
        .at(Stage::Analyze)?;
    lap(Stage::Analyze, &mut timings);

    timings.total_s = started.elapsed().as_secs_f64();
    write_json(&out.join("timings.json"), &timings).at(Stage::Analyze)?;
    Ok(PipelineOutcome {
        out: out.to_path_buf(),
        selection,
        evals,
        report: analysis.report,
        timings,
    })
}
