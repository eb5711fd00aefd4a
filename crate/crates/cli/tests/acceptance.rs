//! Headline acceptance checks, one PASS/FAIL line each.
//!
//! Runs the full-size pipeline once (about half an hour on one core), the quick
//! pipeline twice, and evaluates every criterion against those artifacts plus a
//! few self-contained checks. Set `ACCEPTANCE_FULL_RERUN=1` to repeat the
//! full pipeline from scratch for the determinism check instead of reusing its
//! checkpoints.

#[path = "../../core/tests/support/controller_cases.rs"]
mod controller_cases;
#[path = "../../core/tests/support/grad_cases.rs"]
mod grad_cases;
#[path = "../../core/tests/support/oracle_cases.rs"]
mod oracle_cases;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use tipforce_cli::artifacts::{load_phantoms, load_traces, trace_name};
use tipforce_cli::manifest::Manifest;
use tipforce_cli::pipeline::{checkpoint_path, run_pipeline, PipelineOptions, PipelineOutcome};
use tipforce_core::analysis::{
    detect_threshold, friction_regression, match_events, ForceColumn, FrictionSource,
    ThresholdConfig,
};
use tipforce_core::control::SessionConfig;
use tipforce_core::exec::Exec;
use tipforce_core::neural::{pool_frame, Arch, Checkpoint, Recording};
use tipforce_core::{InterfaceKind, Mechanics};

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    format!("{e:#}")
}

/// Runs one check, turning panics from the shared assertion helpers into failures.
fn criterion(name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let t0 = Instant::now();
    let verdict = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let secs = t0.elapsed().as_secs_f64();
    let (tag, detail) = match &verdict {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {name}: {detail} [{secs:.1} s]");
    verdict.is_ok()
}

fn fresh(dir: &Path) -> PathBuf {
    if dir.exists() {
        std::fs::remove_dir_all(dir).unwrap();
    }
    dir.to_path_buf()
}

fn pipeline(m: &Manifest, out: &Path, skip_train: bool) -> Result<PipelineOutcome, String> {
    run_pipeline(
        m,
        out,
        PipelineOptions {
            skip_train,
            exec: Exec::Parallel,
        },
    )
    .map_err(err)
}

/// Every file under `dir` by relative path, except wall-clock timings.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().is_some_and(|n| n != "timings.json") {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn compare(
    a: &BTreeMap<PathBuf, Vec<u8>>,
    b: &BTreeMap<PathBuf, Vec<u8>>,
    keep: impl Fn(&Path) -> bool,
) -> Result<usize, String> {
    let ka: Vec<_> = a.keys().filter(|p| keep(p)).collect();
    let kb: Vec<_> = b.keys().filter(|p| keep(p)).collect();
    ensure(ka == kb, format!("file sets differ: {ka:?} vs {kb:?}"))?;
    for k in &ka {
        ensure(a[*k] == b[*k], format!("{} differs", k.display()))?;
    }
    Ok(ka.len())
}

fn gradients() -> Verdict {
    let t0 = Instant::now();
    grad_cases::check(Arch::Cgru);
    grad_cases::check(Arch::Resnet);
    let s = t0.elapsed().as_secs_f64();
    ensure(s < 60.0, format!("took {s:.1} s"))?;
    Ok(format!(
        "both architectures within 1e-4 relative error at tiny size in {s:.1} s"
    ))
}

fn oracles() -> Verdict {
    oracle_cases::conv1d_matches_reference();
    oracle_cases::conv2d_matches_reference();
    oracle_cases::residual_blocks_match_reference();
    oracle_cases::cgru_cell_matches_reference();
    oracle_cases::cgru_model_matches_reference();
    oracle_cases::resnet_model_matches_reference();
    Ok("conv1d, conv2d, residual blocks, cGRU cell, cGRU and ResNet models agree to 1e-12 on 100 instances each".into())
}

fn table_one(
    full: &Result<PipelineOutcome, String>,
    quick: &Result<PipelineOutcome, String>,
) -> Verdict {
    let full = full
        .as_ref()
        .map_err(|e| format!("full pipeline failed: {e}"))?;
    let quick = quick
        .as_ref()
        .map_err(|e| format!("quick pipeline failed: {e}"))?;
    let cgru = |o: &PipelineOutcome| {
        o.selection
            .candidates
            .iter()
            .find(|c| c.arch == Arch::Cgru)
            .cloned()
            .ok_or("no cGRU candidate")
    };
    let c = cgru(full)?;
    let pcc = c.test.pcc.unwrap_or(f64::NAN);
    let n = full.evals.iter().map(|e| e.n_frames).max().unwrap_or(0);
    let sel = &full.selection;
    let by_val = sel
        .candidates
        .iter()
        .min_by(|a, b| a.val_mae.total_cmp(&b.val_mae))
        .unwrap();
    let by_test = sel
        .candidates
        .iter()
        .min_by(|a, b| a.test.mae.total_cmp(&b.test.mae))
        .unwrap();
    let qc = cgru(quick)?;
    let detail = format!(
        "full: cGRU test MAE {:.4} N, pCC {pcc:.4} on {n} frames, selected {} (val MAE {}), {:.0} s; quick: cGRU MAE {:.4} N, {:.0} s",
        c.test.mae,
        sel.selected,
        sel.candidates
            .iter()
            .map(|c| format!("{} {:.4}", c.arch, c.val_mae))
            .collect::<Vec<_>>()
            .join(", "),
        full.timings.total_s,
        qc.test.mae,
        quick.timings.total_s
    );
    ensure(n == 10_000, format!("test stream has {n} frames; {detail}"))?;
    ensure(
        c.test.mae <= 0.15 && pcc >= 0.99,
        format!("accuracy short; {detail}"),
    )?;
    ensure(
        sel.selected == by_val.arch && sel.selected == by_test.arch,
        format!("selected model is not the most accurate; {detail}"),
    )?;
    ensure(
        full.timings.total_s <= 3600.0,
        format!("over budget; {detail}"),
    )?;
    ensure(
        quick.timings.total_s <= 600.0 && qc.test.mae <= 0.3,
        format!("quick mode short; {detail}"),
    )?;
    Ok(detail)
}

fn streaming(dir: &Path) -> Verdict {
    let ck = Checkpoint::load(&checkpoint_path(dir, Arch::Cgru)).map_err(err)?;
    let model = ck.model().map_err(err)?;
    let rec = Recording::load(&dir.join("data/test.bin")).map_err(err)?;
    let fl = model.frame_len();
    let mut seq = Vec::new();
    let mut stream = model.stream::<f32>();
    for k in 0..50 {
        let y = stream.step(&model, &ck.params, rec.frame(k));
        let mut pooled = vec![0.0f32; fl];
        pool_frame(rec.frame(k), model.pool(), &mut pooled);
        seq.extend_from_slice(&pooled);
        let whole = model.forward(&ck.params, &seq).map_err(err)?;
        ensure(
            y.to_bits() == whole.to_bits(),
            format!("frame {}: stream {y} vs forward {whole}", k + 1),
        )?;
    }
    let mut times = Vec::with_capacity(rec.len());
    let mut stream = model.stream::<f32>();
    for k in 0..rec.len() {
        let t0 = Instant::now();
        std::hint::black_box(stream.step(&model, &ck.params, rec.frame(k)));
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let p99 = times[(times.len() * 99).div_ceil(100) - 1];
    ensure(p99 < 5.0, format!("p99 {p99:.3} ms per frame"))?;
    Ok(format!(
        "trained cGRU stream bitwise equal to forward over 50 frames; p99 {p99:.3} ms per frame over {} frames",
        rec.len()
    ))
}

fn phenomenology(dir: &Path) -> Verdict {
    let phantoms = load_phantoms(&dir.join("phantoms")).map_err(err)?;
    let traces: Vec<_> = load_traces(&dir.join("traces"))
        .map_err(err)?
        .into_iter()
        .filter(|(n, _)| n.starts_with("auto-"))
        .collect();
    ensure(
        traces.len() == 25,
        format!("{} constant-velocity traces", traces.len()),
    )?;
    let session = SessionConfig::default();
    let cfg = ThresholdConfig {
        column: ForceColumn::True,
        ..Default::default()
    };
    let (mut entry, mut exit, mut worst_slope) = (Vec::new(), Vec::new(), 0.0f64);
    for (name, t) in &traces {
        ensure(
            (t.samples[1].depth_mm - t.samples[0].depth_mm - 5.0 * 0.005).abs() < 1e-9,
            format!("{name} is not at 5 mm/s"),
        )?;
        let p = phantoms
            .iter()
            .find(|p| trace_name(p) == t.meta.phantom)
            .ok_or(format!("{name}: unknown phantom"))?;
        let report = match_events(
            &detect_threshold(t, p.skin_end(), &cfg),
            &p.interfaces(),
            20.0,
        );
        ensure(
            report.detection_rate == 1.0,
            format!("{name}: detection rate {}", report.detection_rate),
        )?;
        for m in &report.interfaces {
            let lag = m.lag_mm.unwrap_or(f64::NAN);
            let bound = match m.kind {
                InterfaceKind::Entry => p.layer_at(m.depth_mm + 1e-9).rupture_deformation() + 1.0,
                InterfaceKind::Exit => 6.0,
            };
            ensure(
                lag > 0.0 && lag <= bound,
                format!(
                    "{name} {}: lag {lag:.3} mm outside (0, {bound:.3}]",
                    m.label
                ),
            )?;
            match m.kind {
                InterfaceKind::Entry => entry.push(lag),
                InterfaceKind::Exit => exit.push(lag),
            }
        }
        let drawn = Mechanics::new(p.clone(), session.geometry, session.mech)
            .start(t.meta.insertion)
            .segment_slopes;
        for s in friction_regression(t, p, FrictionSource::ShaftMinusTrue).map_err(err)? {
            let e = (s.slope_n_per_mm - drawn[s.layer]).abs();
            worst_slope = worst_slope.max(e);
            ensure(
                e <= 0.01,
                format!("{name} {}: slope error {e:.4} N/mm", s.label),
            )?;
        }
    }
    let text = std::fs::read_to_string(dir.join("report.txt")).map_err(err)?;
    ensure(
        text.lines()
            .any(|l| l.starts_with("Material | Skin Layer | Tissue | Gelatin")),
        "friction table header missing from report.txt",
    )?;
    for row in ["Mean |", "Min |", "Max |"] {
        ensure(
            text.lines().any(|l| l.starts_with(row)),
            format!("friction table row {row} missing"),
        )?;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(format!(
        "25 runs, rate 1.0, entry lag {:.2} mm, exit lag {:.2} mm, worst slope error {worst_slope:.4} N/mm, table present",
        mean(&entry),
        mean(&exit)
    ))
}

fn controller() -> Verdict {
    controller_cases::randomized_collaborative_ticks_never_retract();
    controller_cases::equilibrium_velocity_matches_the_integral_gain();
    controller_cases::clamped_error_halts_the_needle_within_a_second();
    controller_cases::pi_law_stops_when_feedback_exceeds_handle_force();
    Ok(
        "no retraction over >= 1e4 randomized ticks, equilibrium within 2%, clamp halts within 1 s"
            .into(),
    )
}

fn user_study(full: &Result<PipelineOutcome, String>, dir: &Path) -> Verdict {
    let full = full
        .as_ref()
        .map_err(|e| format!("full pipeline failed: {e}"))?;
    let collab = full
        .report
        .collab
        .as_ref()
        .ok_or("no collaborative block")?;
    ensure(
        collab.n_traces == 20,
        format!("{} collaborative insertions", collab.n_traces),
    )?;
    let traces = load_traces(&dir.join("traces")).map_err(err)?;
    for (name, t) in traces.iter().filter(|(n, _)| n.starts_with("collab-")) {
        ensure(
            t.meta.estimator == full.selection.selected.tag(),
            format!("{name} used estimator {}", t.meta.estimator),
        )?;
    }
    let tab = &collab.table;
    let detail = format!(
        "rate {:.3} ({} of {}), missed tissue-to-gelatin {}, gelatin-to-tissue {}",
        tab.detection_rate, tab.matched, tab.total, tab.missed_exit, tab.missed_entry
    );
    ensure(tab.detection_rate >= 0.90, detail.clone())?;
    ensure(
        tab.missed_exit >= tab.missed_entry,
        format!("miss direction reversed; {detail}"),
    )?;
    Ok(detail)
}

fn determinism(
    full_dir: &Path,
    first_full: &BTreeMap<PathBuf, Vec<u8>>,
    full_m: &Manifest,
    quick: (&Path, &Path),
) -> Verdict {
    let n_quick = compare(&snapshot(quick.0), &snapshot(quick.1), |_| true)?;
    let rerun = std::env::var("ACCEPTANCE_FULL_RERUN").is_ok_and(|v| v == "1");
    let (second, what) = if rerun {
        let dir = fresh(&full_dir.with_file_name("full-rerun"));
        pipeline(full_m, &dir, false)?;
        (snapshot(&dir), "full pipeline rerun from scratch")
    } else {
        pipeline(full_m, full_dir, true)?;
        (
            snapshot(full_dir),
            "full pipeline rerun on its own checkpoints",
        )
    };
    let n_full = compare(first_full, &second, |p| {
        rerun
            || p.starts_with("traces")
            || p.starts_with("series")
            || p.starts_with("report.")
            || p.starts_with("collab")
            || p.starts_with("models/selection.json")
    })?;
    Ok(format!(
        "quick pipeline twice from scratch: {n_quick} files identical; {what}: {n_full} trace and report files identical"
    ))
}

fn main() -> ExitCode {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&root).unwrap();
    let full_m = Manifest::default();
    let quick_m = Manifest::default().quick();

    let full_dir = fresh(&root.join("full"));
    let full = pipeline(&full_m, &full_dir, false);
    let first_full = if full.is_ok() {
        snapshot(&full_dir)
    } else {
        BTreeMap::new()
    };
    let qa = fresh(&root.join("quick-a"));
    let qb = fresh(&root.join("quick-b"));
    let quick = pipeline(&quick_m, &qa, false);
    let quick_b = pipeline(&quick_m, &qb, false);

    let results = [
        criterion("gradient correctness", gradients),
        criterion("forward oracle equivalence", oracles),
        criterion("held-out accuracy and model selection", || {
            table_one(&full, &quick)
        }),
        criterion("streaming equivalence", || {
            full.as_ref()
                .map_err(|e| format!("full pipeline failed: {e}"))?;
            streaming(&full_dir)
        }),
        criterion("constant-velocity phenomenology", || {
            full.as_ref()
                .map_err(|e| format!("full pipeline failed: {e}"))?;
            phenomenology(&full_dir)
        }),
        criterion("controller properties", controller),
        criterion("scripted user study", || user_study(&full, &full_dir)),
        criterion("determinism", || {
            full.as_ref()
                .map_err(|e| format!("full pipeline failed: {e}"))?;
            quick_b
                .as_ref()
                .map_err(|e| format!("quick pipeline failed: {e}"))?;
            determinism(&full_dir, &first_full, &full_m, (&qa, &qb))
        }),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
