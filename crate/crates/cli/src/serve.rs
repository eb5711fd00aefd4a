//! WebSocket bridge between a browser UI and one collaborative session at a time.
//!
//! Each connection gets a thread that moves JSON frames; a started session
//! runs in its own tick thread paced to wall-clock time. Telemetry goes through
//! a bounded queue that drops the oldest frame when the client falls behind.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TryRecvError};
use tipforce_core::analysis::{summarize, AnalysisConfig, TraceInput};
use tipforce_core::control::{
    CollabSession, InsertionTrace, Operator, RemoteLink, RemoteOperator, SessionConfig, StopReason,
    TraceMode,
};
use tipforce_core::PhantomSpec;
use tungstenite::{Message, WebSocket};

use crate::artifacts::{trace_name, EstimatorFactory};
use crate::manifest::ServeConfig;
use crate::protocol::{ClientMsg, ErrorCode, EventKind, ServerMsg};

/// Served insertions are numbered from here.
const SERVE_BASE: u64 = 9000;
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("address {0} is already in use")]
    PortInUse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone)]
pub struct ServeOptions {
    pub phantoms: Vec<PhantomSpec>,
    pub estimator: EstimatorFactory,
    pub session: SessionConfig,
    pub analysis: AnalysisConfig,
    pub serve: ServeConfig,
    /// Finished traces are written to `out/traces`.
    pub out: PathBuf,
    /// Return after this many connections; `None` serves forever.
    pub max_connections: Option<usize>,
}

struct Shared {
    opts: ServeOptions,
    busy: AtomicBool,
    sessions: AtomicU64,
}

/// Binds, reports the bound address through `ready`, then accepts connections.
pub fn serve(opts: ServeOptions, ready: impl FnOnce(SocketAddr)) -> Result<(), ServeError> {
    let addr = format!("{}:{}", opts.serve.host, opts.serve.port);
    let listener = TcpListener::bind(&addr).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => ServeError::PortInUse(addr.clone()),
        _ => ServeError::Io(e),
    })?;
    let local = listener.local_addr()?;
    log::info!("serving on ws://{local}");
    ready(local);
    let limit = opts.max_connections;
    let shared = Arc::new(Shared {
        opts,
        busy: AtomicBool::new(false),
        sessions: AtomicU64::new(0),
    });
    let mut handles = Vec::new();
    for (n, stream) in listener.incoming().enumerate() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let shared = shared.clone();
        handles.push(thread::spawn(move || {
            if let Err(e) = connection(stream, &shared) {
                log::warn!("connection ended: {e}");
            }
        }));
        if limit.is_some_and(|l| n + 1 >= l) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

type Ws = WebSocket<TcpStream>;

fn send(ws: &mut Ws, msg: &ServerMsg) -> tungstenite::Result<()> {
    ws.send(Message::text(msg.to_json()))
}

/// Clears the busy flag when the owning connection goes away.
struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

fn connection(stream: TcpStream, shared: &Shared) -> anyhow::Result<()> {
    let peer = stream.peer_addr().ok();
    let mut ws = tungstenite::accept(stream)?;
    if shared.busy.swap(true, Ordering::SeqCst) {
        send(
            &mut ws,
            &ServerMsg::error(ErrorCode::Busy, "another client holds the session"),
        )?;
        ws.close(None)?;
        let _ = ws.flush();
        return Ok(());
    }
    let _guard = BusyGuard(&shared.busy);
    log::info!("client connected from {peer:?}");
    ws.get_ref().set_read_timeout(Some(POLL))?;

    let mut active: Option<Running> = None;
    loop {
        if let Some(run) = &mut active {
            if pump(&mut ws, run)? {
                active = None;
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = match serde_json::from_str::<ClientMsg>(text.as_ref()) {
                    Ok(msg) => handle(msg, &mut active, shared),
                    Err(e) => Some(ServerMsg::error(ErrorCode::BadMessage, e.to_string())),
                };
                if let Some(r) = reply {
                    send(&mut ws, &r)?;
                }
            }
            Ok(Message::Binary(_)) => send(
                &mut ws,
                &ServerMsg::error(ErrorCode::BadMessage, "binary frames are not supported"),
            )?,
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(run) = active.take() {
        let _ = run.commands.send(Command::Abort);
        let _ = run.thread.join();
    }
    log::info!("client {peer:?} disconnected");
    Ok(())
}

fn handle(msg: ClientMsg, active: &mut Option<Running>, shared: &Shared) -> Option<ServerMsg> {
    match msg {
        ClientMsg::Start { phantom, alpha } => {
            if active.is_some() {
                return Some(ServerMsg::error(
                    ErrorCode::SessionActive,
                    "finish or abort the current insertion first",
                ));
            }
            match start(&phantom, alpha, shared) {
                Ok(run) => {
                    *active = Some(run);
                    None
                }
                Err(e) => Some(e),
            }
        }
        other => {
            let Some(run) = active.as_ref() else {
                return Some(ServerMsg::error(
                    ErrorCode::NoSession,
                    "no insertion running",
                ));
            };
            let cmd = match other {
                ClientMsg::Input {
                    f_handle_n,
                    trigger,
                    seq,
                } => {
                    run.link.send(f_handle_n, trigger, seq);
                    return None;
                }
                ClientMsg::Retract { mm } if mm.is_finite() && mm >= 0.0 => Command::Retract(mm),
                ClientMsg::Retract { mm } => {
                    return Some(ServerMsg::error(
                        ErrorCode::BadMessage,
                        format!("retract distance {mm} must be finite and non-negative"),
                    ))
                }
                ClientMsg::Finish => Command::Finish,
                ClientMsg::Abort => Command::Abort,
                ClientMsg::Start { .. } => unreachable!(),
            };
            let _ = run.commands.send(cmd);
            None
        }
    }
}

/// Forwards queued frames; returns true once the session thread has exited.
fn pump(ws: &mut Ws, run: &mut Running) -> tungstenite::Result<bool> {
    let flush_telemetry = |ws: &mut Ws, rx: &Receiver<ServerMsg>| -> tungstenite::Result<()> {
        while let Ok(m) = rx.try_recv() {
            send(ws, &m)?;
        }
        Ok(())
    };
    loop {
        match run.control.try_recv() {
            Ok(m) => {
                // Telemetry queued before this frame goes out first.
                flush_telemetry(ws, &run.telemetry)?;
                send(ws, &m)?;
            }
            Err(TryRecvError::Empty) => {
                flush_telemetry(ws, &run.telemetry)?;
                return Ok(false);
            }
            Err(TryRecvError::Disconnected) => {
                flush_telemetry(ws, &run.telemetry)?;
                return Ok(true);
            }
        }
    }
}

enum Command {
    Retract(f64),
    Finish,
    Abort,
}

struct Running {
    link: RemoteLink,
    commands: Sender<Command>,
    telemetry: Receiver<ServerMsg>,
    control: Receiver<ServerMsg>,
    thread: JoinHandle<()>,
}

fn start(phantom: &str, alpha: f64, shared: &Shared) -> Result<Running, ServerMsg> {
    let opts = &shared.opts;
    let Some(p) = opts
        .phantoms
        .iter()
        .find(|p| p.name == phantom || trace_name(p) == phantom)
    else {
        let known: Vec<_> = opts.phantoms.iter().map(trace_name).collect();
        return Err(ServerMsg::error(
            ErrorCode::UnknownPhantom,
            format!("unknown phantom {phantom:?}; known: {}", known.join(", ")),
        ));
    };
    let mut cfg = opts.session;
    cfg.controller.alpha = alpha;
    cfg.realtime = true;
    // A person may pause for as long as they like; only the deadman applies.
    cfg.stall_timeout_s = 1e9;
    let n = shared.sessions.fetch_add(1, Ordering::SeqCst);
    let session = CollabSession::new(
        p.clone(),
        (opts.estimator)(),
        cfg,
        SERVE_BASE + n,
        TraceMode::Collab,
    )
    .map_err(|e| ServerMsg::error(ErrorCode::BadStart, e.to_string()))?;
    let link = RemoteLink::new();
    let (cmd_tx, cmd_rx) = unbounded();
    let (tel_tx, tel_rx) = bounded(opts.serve.queue.max(1));
    let (ctl_tx, ctl_rx) = unbounded();
    let tick = Tick {
        session,
        operator: RemoteOperator::new(link.clone()),
        phantom: p.clone(),
        name: format!("serve-{n:03}"),
        commands: cmd_rx,
        telemetry: (tel_tx, tel_rx.clone()),
        control: ctl_tx,
        out: opts.out.join("traces"),
        analysis: opts.analysis,
        serve: opts.serve.clone(),
    };
    log::info!("starting {} on {} with alpha {alpha}", tick.name, p.name);
    let thread = thread::spawn(move || tick.run());
    Ok(Running {
        link,
        commands: cmd_tx,
        telemetry: tel_rx,
        control: ctl_rx,
        thread,
    })
}

struct Tick {
    session: CollabSession,
    operator: RemoteOperator,
    phantom: PhantomSpec,
    name: String,
    commands: Receiver<Command>,
    telemetry: (Sender<ServerMsg>, Receiver<ServerMsg>),
    control: Sender<ServerMsg>,
    out: PathBuf,
    analysis: AnalysisConfig,
    serve: ServeConfig,
}

impl Tick {
    fn push_telemetry(&self, msg: ServerMsg) {
        let (tx, rx) = &self.telemetry;
        let mut msg = msg;
        loop {
            match tx.try_send(msg) {
                Ok(()) => return,
                Err(crossbeam_channel::TrySendError::Full(m)) => {
                    let _ = rx.try_recv();
                    msg = m;
                }
                Err(crossbeam_channel::TrySendError::Disconnected(_)) => return,
            }
        }
    }

    fn run(mut self) {
        let (name, control) = (self.name.clone(), self.control.clone());
        let result = match self.run_inner() {
            Ok(true) => self.finish(),
            Ok(false) => {
                let _ = control.send(ServerMsg::Event {
                    kind: EventKind::Stopped,
                    reason: Some(StopReason::Aborted),
                });
                Ok(())
            }
            Err(e) => Err(e),
        };
        if let Err(e) = result {
            log::error!("{name}: {e:#}");
            let _ = control.send(ServerMsg::error(ErrorCode::Internal, format!("{e:#}")));
        }
    }

    /// Ticks until finish (true) or abort (false).
    fn run_inner(&mut self) -> anyhow::Result<bool> {
        self.session.set_operator(&self.operator.name());
        self.operator.reset(&self.session.insertion_context());
        let dt = self.session.dt();
        let scale = if self.serve.time_scale > 0.0 {
            self.serve.time_scale
        } else {
            1.0
        };
        let period = Duration::from_secs_f64(dt / scale);
        let every = ((1.0 / dt) / self.serve.telemetry_hz.max(1e-3))
            .round()
            .max(1.0) as u64;
        let mut retract = 0.0;
        let mut overruns = 0;
        let mut ticks = 0u64;
        let mut next = Instant::now();
        loop {
            loop {
                match self.commands.try_recv() {
                    Ok(Command::Retract(mm)) => retract += mm,
                    Ok(Command::Finish) => return Ok(true),
                    Ok(Command::Abort) | Err(TryRecvError::Disconnected) => {
                        log::info!("{} aborted", self.name);
                        return Ok(false);
                    }
                    Err(TryRecvError::Empty) => break,
                }
            }
            if self.session.stopped().is_none() {
                let obs = self.session.observe()?;
                if retract > 0.0 {
                    let back = self.session.retract_step(retract)?;
                    retract = if back > 0.0 { retract - back } else { 0.0 };
                } else {
                    let cmd = self.operator.step(&obs);
                    self.session.apply(cmd)?;
                }
                if self.session.overruns > overruns {
                    overruns = self.session.overruns;
                    let _ = self.control.send(ServerMsg::Event {
                        kind: EventKind::Overrun,
                        reason: None,
                    });
                }
                if ticks.is_multiple_of(every) {
                    self.push_telemetry(ServerMsg::Telemetry {
                        t_s: obs.t_s,
                        depth_mm: obs.depth_mm,
                        f_felt_n: obs.felt_force_n,
                        v_mm_s: self.session.velocity_mm_s(),
                    });
                }
                ticks += 1;
                if let Some(reason) = self.session.stopped() {
                    let _ = self.control.send(ServerMsg::Event {
                        kind: EventKind::Stopped,
                        reason: Some(reason),
                    });
                }
            }
            next += period;
            let now = Instant::now();
            if next > now {
                thread::sleep(next - now);
            } else if now - next > 10 * period {
                // Far behind: resume from now rather than bursting to catch up.
                next = now;
            }
        }
    }

    fn finish(self) -> anyhow::Result<()> {
        let trace = self.session.finish();
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(format!("{}.csv", self.name));
        trace.save(&path)?;
        // Report from the file as saved so offline analysis sees the same numbers.
        let saved = InsertionTrace::load(&path)?;
        let (report, _) = summarize(
            &[TraceInput {
                name: &self.name,
                trace: &saved,
                phantom: &self.phantom,
            }],
            &self.analysis,
        );
        let det = report
            .collab
            .and_then(|c| c.per_trace.into_iter().next())
            .map(|t| t.report)
            .ok_or_else(|| anyhow::anyhow!("no collaborative summary for {}", self.name))?;
        log::info!(
            "{} saved to {}: detection rate {:.2}",
            self.name,
            path.display(),
            det.detection_rate
        );
        let _ = self.control.send(ServerMsg::Report {
            trace: format!("{}.csv", self.name),
            distances_mm: det.distances_mm,
            detection_rate: det.detection_rate,
            ground_truth: self.phantom.interfaces(),
        });
        Ok(())
    }
}
