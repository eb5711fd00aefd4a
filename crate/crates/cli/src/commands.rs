//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tipforce_core::exec::Exec;
use tipforce_core::neural::{
    evaluate, generate_recording, CalibrationConfig, Checkpoint, Recording,
};
use tipforce_core::phantom::generate_phantom;
use tipforce_core::rng::Stream;
use tipforce_core::PhantomSpec;

use crate::analyze::analyze;
use crate::args::{
    AnalyzeArgs, Cli, Command, EstimatorArgs, NeuralCmd, OperatorKind, PhantomCmd, PipelineArgs,
    RunCmd, SensorCmd, ServeArgs, StreamArg,
};
use crate::artifacts::{
    load_phantoms, load_traces, trace_name, write_json, write_phantom, write_stamped,
    EstimatorChoice, EstimatorFactory,
};
use crate::manifest::Manifest;
use crate::pipeline::{history_path, run_pipeline, train_arch, PipelineOptions};
use crate::runs::{run_auto, run_collab, save_traces};
use crate::serve::{serve, ServeOptions};

struct Ctx {
    m: Manifest,
    out: Option<PathBuf>,
    exec: Exec,
}

impl Ctx {
    fn out_or(&self, default: impl AsRef<Path>) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| default.as_ref().to_path_buf())
    }

    fn estimator(&self, a: &EstimatorArgs) -> Result<EstimatorFactory> {
        let ckpt = a.ckpt.as_deref().or(self.m.checkpoint.as_deref());
        EstimatorChoice::parse(ckpt, &a.estimator)?.factory(self.m.session.sensor)
    }

    fn phantoms(&self, path: Option<&Path>) -> Result<Vec<PhantomSpec>> {
        match path {
            Some(p) => load_phantoms(p),
            None => self.m.phantoms(),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let m = Manifest::load(cli.config.as_deref())?;
    let m = match cli.seed {
        Some(s) => m.with_seed(s),
        None => {
            let mut m = m;
            m.sync_seeds();
            m
        }
    };
    let ctx = Ctx {
        m,
        out: cli.out,
        exec: if cli.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        },
    };
    match cli.command {
        Command::Phantom(c) => phantom(&ctx, c),
        Command::Sensor(c) => sensor(&ctx, c),
        Command::Neural(c) => neural(&ctx, c),
        Command::Run(c) => run_cmd(&ctx, c),
        Command::Analyze(a) => analyze_cmd(&ctx, a),
        Command::Pipeline(a) => pipeline(&ctx, a),
        Command::Serve(a) => serve_cmd(&ctx, a),
    }
}

fn phantom(ctx: &Ctx, c: PhantomCmd) -> Result<()> {
    match c {
        PhantomCmd::Gen { index, count } => {
            let dir = ctx.out_or("phantoms");
            let indices: Vec<u64> = match index {
                Some(i) => vec![i],
                None => (0..count).collect(),
            };
            let prov = ctx.m.provenance();
            for i in indices {
                let p = generate_phantom(ctx.m.seed, i, &ctx.m.phantom_gen);
                let path = dir.join(format!("{}.toml", trace_name(&p)));
                write_phantom(&path, &p, &prov)?;
                println!("{}", path.display());
            }
            Ok(())
        }
        PhantomCmd::Validate { files } => {
            let mut bad = 0;
            for f in &files {
                match PhantomSpec::load(f) {
                    Ok(p) => println!(
                        "{}: ok, {} layers, {:.1} mm, {} interfaces",
                        f.display(),
                        p.layers.len(),
                        p.total_depth(),
                        p.interfaces().len()
                    ),
                    Err(e) => {
                        bad += 1;
                        println!("{}: invalid: {e}", f.display());
                    }
                }
            }
            if bad > 0 {
                bail!("{bad} of {} phantom files are invalid", files.len());
            }
            Ok(())
        }
    }
}

fn sensor(ctx: &Ctx, c: SensorCmd) -> Result<()> {
    let SensorCmd::Calibrate {
        n,
        profile: _,
        stream,
    } = c;
    let (stream, default_n, default_out) = match stream {
        StreamArg::Calibration => (
            Stream::Calibration,
            ctx.m.calibration.n,
            "data/calibration.bin",
        ),
        StreamArg::Test => (Stream::TestStream, ctx.m.test_frames, "data/test.bin"),
    };
    let cfg = CalibrationConfig {
        n: n.unwrap_or(default_n),
        ..ctx.m.calibration
    };
    let rec = generate_recording(&cfg, &ctx.m.session.sensor, ctx.m.seed, stream, ctx.exec)?;
    let path = ctx.out_or(default_out);
    crate::artifacts::create_parent(&path)?;
    rec.save(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    println!("{} frames -> {}", rec.len(), path.display());
    Ok(())
}

fn load_recording(path: &Path) -> Result<Recording> {
    Recording::load(path).with_context(|| format!("loading recording {}", path.display()))
}

fn neural(ctx: &Ctx, c: NeuralCmd) -> Result<()> {
    match c {
        NeuralCmd::Train { arch, data, epochs } => {
            let mut m = ctx.m.clone();
            if let Some(e) = epochs {
                m.train.epochs = e;
            }
            let rec = load_recording(&data)?;
            let (ck, history) = train_arch(&m, arch, &rec, ctx.exec)?;
            let path = ctx.out_or(format!("models/{}.ckpt", arch.tag()));
            crate::artifacts::create_parent(&path)?;
            ck.save(&path)
                .with_context(|| format!("writing {}", path.display()))?;
            write_json(&history_path(&path), &history)?;
            println!(
                "{arch}: validation MAE {:.4} N -> {}",
                ck.header.val_mae.unwrap_or(f64::NAN),
                path.display()
            );
            Ok(())
        }
        NeuralCmd::Eval { ckpt, data, report } => {
            let ck = Checkpoint::load(&ckpt)
                .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
            let rec = load_recording(&data)?;
            let model = ck.model()?;
            let (r, _) = evaluate(&model, &ck.params, &rec)?;
            match report.or_else(|| ctx.out.clone()) {
                Some(path) => write_stamped(&path, &ctx.m.provenance(), &r)?,
                None => println!("{}", serde_json::to_string_pretty(&r)?),
            }
            log::info!(
                "{}: MAE {:.4} N, pCC {:?}, inference {:.3} ms/frame",
                r.arch,
                r.mae,
                r.pcc,
                r.it_ms
            );
            Ok(())
        }
    }
}

fn run_cmd(ctx: &Ctx, c: RunCmd) -> Result<()> {
    match c {
        RunCmd::Auto {
            phantom,
            v,
            n,
            estimator,
        } => {
            let phantoms = ctx.phantoms(phantom.as_deref())?;
            let mut m = ctx.m.clone();
            if let Some(v) = v {
                m.auto.velocity_mm_s = v;
            }
            if let Some(n) = n {
                m.auto.insertions = n;
            }
            let f = ctx.estimator(&estimator)?;
            let traces = run_auto(&phantoms, &m, &f, ctx.exec)?;
            let dir = ctx.out_or("traces");
            save_traces(&dir, &traces)?;
            println!("{} traces -> {}", traces.len(), dir.display());
            Ok(())
        }
        RunCmd::Collab {
            phantom,
            operator,
            alpha,
            operators,
            port,
            estimator,
        } => {
            let phantoms = ctx.phantoms(phantom.as_deref())?;
            if operator == OperatorKind::Remote {
                let args = ServeArgs {
                    port,
                    host: None,
                    phantom: None,
                    time_scale: None,
                    estimator,
                };
                return serve_with(ctx, &args, phantoms);
            }
            let mut m = ctx.m.clone();
            if alpha.is_some() {
                m.collab.alpha = alpha;
            }
            if let Some(k) = operators {
                m.collab.operators = k;
            }
            let f = ctx.estimator(&estimator)?;
            let (traces, gains) = run_collab(&phantoms, &m, &f, ctx.exec)?;
            let dir = ctx.out_or("traces");
            save_traces(&dir, &traces)?;
            write_stamped(&dir.join("gains.json"), &m.provenance(), &gains)?;
            println!("{} traces -> {}", traces.len(), dir.display());
            Ok(())
        }
    }
}

fn analyze_cmd(ctx: &Ctx, a: AnalyzeArgs) -> Result<()> {
    let traces = load_traces(&a.traces)?;
    let phantoms = load_phantoms(&a.ground_truth)?;
    let analysis = analyze(&traces, &phantoms, &ctx.m.analysis, a.force)?;
    analysis.write(&a.report, &ctx.m.analysis, a.series.as_deref())?;
    print!("{}", analysis.report.render());
    Ok(())
}

fn pipeline(ctx: &Ctx, a: PipelineArgs) -> Result<()> {
    let m = if a.quick {
        ctx.m.clone().quick()
    } else {
        ctx.m.clone()
    };
    let out = ctx.out_or("out");
    let outcome = run_pipeline(
        &m,
        &out,
        PipelineOptions {
            skip_train: a.skip_train,
            exec: ctx.exec,
        },
    )?;
    print!("{}", outcome.report.render());
    println!(
        "selected {} in {:.0} s; artifacts in {}",
        outcome.selection.selected,
        outcome.timings.total_s,
        out.display()
    );
    Ok(())
}

fn serve_cmd(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let phantoms = ctx.phantoms(a.phantom.as_deref())?;
    serve_with(ctx, &a, phantoms)
}

fn serve_with(ctx: &Ctx, a: &ServeArgs, phantoms: Vec<PhantomSpec>) -> Result<()> {
    let mut cfg = ctx.m.serve.clone();
    if let Some(p) = a.port {
        cfg.port = p;
    }
    if let Some(h) = &a.host {
        cfg.host = h.clone();
    }
    if let Some(s) = a.time_scale {
        cfg.time_scale = s;
    }
    let opts = ServeOptions {
        phantoms,
        estimator: ctx.estimator(&a.estimator)?,
        session: ctx.m.session,
        analysis: ctx.m.analysis,
        serve: cfg,
        out: ctx.out_or("serve-out"),
        max_connections: None,
    };
    serve(opts, |addr| println!("listening on ws://{addr}"))?;
    Ok(())
}
