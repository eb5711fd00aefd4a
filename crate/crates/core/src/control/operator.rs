use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};

/// No input for this long starts the deadman decay.
pub const DEADMAN_TIMEOUT_S: f64 = 1.0;
/// Duration of the linear decay of the handle force to zero.
pub const DEADMAN_DECAY_S: f64 = 0.2;

/// What the operator perceives at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t_s: f64,
    pub depth_mm: f64,
    /// Rendered resistance, `alpha * F_T_est`.
    pub felt_force_n: f64,
    pub dt_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatorCommand {
    pub f_handle_n: f64,
    pub trigger: bool,
    pub stop: bool,
}

/// Prior knowledge handed to an operator before an insertion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertionContext {
    pub insertion: u64,
    pub alpha: f64,
    /// Depth of the visible skin layer; sensations above it are not reported.
    pub skin_end_mm: f64,
}

pub trait Operator: Send {
    fn name(&self) -> String;
    fn reset(&mut self, ctx: &InsertionContext);
    fn step(&mut self, obs: &Observation) -> OperatorCommand;
    /// Feedback gain the operator picks without practice runs.
    fn preferred_alpha(&self) -> Option<f64> {
        None
    }
}

/// Never pushes.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullOperator;

impl Operator for NullOperator {
    fn name(&self) -> String {
        "null".into()
    }

    fn reset(&mut self, _: &InsertionContext) {}

    fn step(&mut self, _: &Observation) -> OperatorCommand {
        OperatorCommand::default()
    }
}

/// Pushes with a fixed handle force and never triggers.
#[derive(Debug, Clone, Copy)]
pub struct ConstantForce {
    pub f_handle_n: f64,
}

impl Operator for ConstantForce {
    fn name(&self) -> String {
        format!("constant-{}", self.f_handle_n)
    }

    fn reset(&mut self, _: &InsertionContext) {}

    fn step(&mut self, _: &Observation) -> OperatorCommand {
        OperatorCommand {
            f_handle_n: self.f_handle_n,
            ..Default::default()
        }
    }
}

/// Persona of a scripted participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactiveConfig {
    pub target_velocity_mm_s: f64,
    /// Handle-force rate per unit of velocity error, N/s per mm/s.
    pub velocity_gain: f64,
    pub f_start_n: f64,
    /// Most force the participant is willing to apply.
    pub f_max_n: f64,
    /// Standard deviation of force perception, in felt N.
    pub perception_noise_n: f64,
    pub reaction_delay_s: f64,
    pub velocity_tau_s: f64,
    /// Entry cue: felt force above `alpha * entry_threshold_n`.
    pub entry_threshold_n: f64,
    /// Exit cue: felt force below `(1 - drop_fraction)` times the highest
    /// adapted level since the entry trigger.
    pub drop_fraction: f64,
    pub adaptation_tau_s: f64,
    /// Drops are ignored this long after an entry trigger.
    pub refractory_s: f64,
    pub debounce_ticks: usize,
}

impl Default for ReactiveConfig {
    fn default() -> Self {
        Self {
            target_velocity_mm_s: 4.0,
            velocity_gain: 1.0,
            f_start_n: 1.0,
            f_max_n: 10.0,
            perception_noise_n: 0.05,
            reaction_delay_s: 0.2,
            velocity_tau_s: 0.1,
            entry_threshold_n: 1.0,
            drop_fraction: 0.55,
            adaptation_tau_s: 1.0,
            refractory_s: 1.0,
            debounce_ticks: 3,
        }
    }
}

impl ReactiveConfig {
    /// Persona `k` of a cohort drawn from `seed`.
    pub fn persona(seed: u64, k: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Operator, k);
        Self {
            target_velocity_mm_s: rng.gen_range(3.0..5.0),
            velocity_gain: rng.gen_range(0.8..1.5),
            f_max_n: rng.gen_range(4.5..9.0),
            perception_noise_n: rng.gen_range(0.03..0.08),
            reaction_delay_s: rng.gen_range(0.15..0.3),
            entry_threshold_n: rng.gen_range(0.8..1.2),
            drop_fraction: rng.gen_range(0.45..0.7),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Outside,
    Inside,
}

/// Scripted participant: tracks a comfortable velocity by modulating the
/// handle force and presses the trigger on perceived rises and drops of the
/// felt resistance.
#[derive(Debug, Clone)]
pub struct ReactiveOperator {
    pub config: ReactiveConfig,
    seed: u64,
    id: u64,
    rng: ChaCha8Rng,
    ctx: InsertionContext,
    delay: VecDeque<Observation>,
    last_seen: Option<Observation>,
    velocity: f64,
    f_handle: f64,
    adapted: f64,
    /// Remembered resistance inside the current layer.
    reference: f64,
    phase: Phase,
    streak: usize,
    since_entry_s: f64,
}

impl ReactiveOperator {
    pub fn new(config: ReactiveConfig, seed: u64, id: u64) -> Self {
        let ctx = InsertionContext {
            insertion: 0,
            alpha: 1.0,
            skin_end_mm: 0.0,
        };
        let mut op = Self {
            config,
            seed,
            id,
            rng: stream_rng(seed, Stream::Operator, id),
            ctx,
            delay: VecDeque::new(),
            last_seen: None,
            velocity: 0.0,
            f_handle: config.f_start_n,
            adapted: 0.0,
            reference: 0.0,
            phase: Phase::Outside,
            streak: 0,
            since_entry_s: f64::INFINITY,
        };
        op.reset(&ctx);
        op
    }

    /// The `k`-th member of a seeded cohort.
    pub fn persona(seed: u64, k: u64) -> Self {
        Self::new(ReactiveConfig::persona(seed, k), seed, k)
    }

    fn perceive(&mut self, obs: &Observation) -> Option<Observation> {
        self.delay.push_back(*obs);
        let lag = (self.config.reaction_delay_s / obs.dt_s).round() as usize;
        if self.delay.len() > lag {
            self.delay.pop_front()
        } else {
            None
        }
    }
}

impl Operator for ReactiveOperator {
    fn name(&self) -> String {
        format!("reactive-{}", self.id)
    }

    fn reset(&mut self, ctx: &InsertionContext) {
        self.ctx = *ctx;
        self.rng = stream_rng(self.seed, Stream::Operator, (self.id << 32) ^ ctx.insertion);
        self.delay.clear();
        self.last_seen = None;
        self.velocity = 0.0;
        self.f_handle = self.config.f_start_n;
        self.adapted = 0.0;
        self.reference = 0.0;
        self.phase = Phase::Outside;
        self.streak = 0;
        self.since_entry_s = f64::INFINITY;
    }

    fn step(&mut self, obs: &Observation) -> OperatorCommand {
        let c = self.config;
        let dt = obs.dt_s;
        let Some(seen) = self.perceive(obs) else {
            return OperatorCommand {
                f_handle_n: self.f_handle,
                ..Default::default()
            };
        };
        let noise: f64 = self.rng.sample(StandardNormal);
        let felt = seen.felt_force_n + c.perception_noise_n * noise;

        if let Some(prev) = self.last_seen {
            let v = (seen.depth_mm - prev.depth_mm) / dt;
            self.velocity += (v - self.velocity) * (dt / c.velocity_tau_s).min(1.0);
        }
        self.last_seen = Some(seen);
        self.f_handle = (self.f_handle
            + c.velocity_gain * (c.target_velocity_mm_s - self.velocity) * dt)
            .clamp(0.0, c.f_max_n);

        self.adapted += (felt - self.adapted) * (dt / c.adaptation_tau_s).min(1.0);
        self.reference = self.reference.max(self.adapted);
        self.since_entry_s += dt;
        let mut trigger = false;
        if seen.depth_mm > self.ctx.skin_end_mm {
            let cue = match self.phase {
                Phase::Outside => felt > self.ctx.alpha * c.entry_threshold_n,
                Phase::Inside => {
                    self.since_entry_s > c.refractory_s
                        && felt < (1.0 - c.drop_fraction) * self.reference
                }
            };
            self.streak = if cue { self.streak + 1 } else { 0 };
            if self.streak >= c.debounce_ticks {
                trigger = true;
                self.streak = 0;
                self.phase = match self.phase {
                    Phase::Outside => {
                        self.since_entry_s = 0.0;
                        self.reference = self.adapted;
                        Phase::Inside
                    }
                    Phase::Inside => Phase::Outside,
                };
            }
        }
        OperatorCommand {
            f_handle_n: self.f_handle,
            trigger,
            stop: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct LinkState {
    f_handle_n: f64,
    seq: u64,
    fresh: bool,
    pending_trigger: bool,
    alpha: Option<f64>,
}

/// Latest-value mailbox between a network client and the session loop.
#[derive(Debug, Clone, Default)]
pub struct RemoteLink(Arc<Mutex<LinkState>>);

impl RemoteLink {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores the newest input; older sequence numbers are ignored.
    pub fn send(&self, f_handle_n: f64, trigger: bool, seq: u64) {
        let mut s = self.0.lock().expect("link mutex");
        if s.fresh && seq < s.seq {
            return;
        }
        s.f_handle_n = if f_handle_n.is_finite() {
            f_handle_n.max(0.0)
        } else {
            0.0
        };
        s.seq = seq;
        s.fresh = true;
        s.pending_trigger |= trigger;
    }

    pub fn set_alpha(&self, alpha: f64) {
        self.0.lock().expect("link mutex").alpha = Some(alpha);
    }

    fn take(&self) -> LinkState {
        let mut s = self.0.lock().expect("link mutex");
        let out = *s;
        s.fresh = false;
        s.pending_trigger = false;
        out
    }
}

/// Human operator on the other end of a [`RemoteLink`], with a deadman on
/// input starvation.
#[derive(Debug, Clone)]
pub struct RemoteOperator {
    link: RemoteLink,
    last_input_t: f64,
    last_f: f64,
}

impl RemoteOperator {
    pub fn new(link: RemoteLink) -> Self {
        Self {
            link,
            last_input_t: 0.0,
            last_f: 0.0,
        }
    }

    /// Handle force after the deadman rule, `elapsed` seconds after the last input.
    pub fn deadman(f: f64, elapsed: f64) -> f64 {
        if elapsed <= DEADMAN_TIMEOUT_S {
            f
        } else if elapsed < DEADMAN_TIMEOUT_S + DEADMAN_DECAY_S {
            f * (1.0 - (elapsed - DEADMAN_TIMEOUT_S) / DEADMAN_DECAY_S)
        } else {
            0.0
        }
    }
}

impl Operator for RemoteOperator {
    fn name(&self) -> String {
        "remote".into()
    }

    fn reset(&mut self, _: &InsertionContext) {
        self.last_input_t = 0.0;
        self.last_f = 0.0;
    }

    fn step(&mut self, obs: &Observation) -> OperatorCommand {
        let s = self.link.take();
        if s.fresh {
            self.last_input_t = obs.t_s;
            self.last_f = s.f_handle_n;
        }
        OperatorCommand {
            f_handle_n: Self::deadman(self.last_f, obs.t_s - self.last_input_t),
            trigger: s.pending_trigger,
            stop: false,
        }
    }

    fn preferred_alpha(&self) -> Option<f64> {
        self.link.0.lock().expect("link mutex").alpha
    }
}
