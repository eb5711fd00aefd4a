use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::operator::{InsertionContext, Observation, Operator, OperatorCommand};
use super::trace::{ForceSample, InsertionTrace, TraceMeta, TraceMode};
use super::{ControlError, ControllerConfig, PiController};
use crate::estimator::{SensorReading, TipForceEstimator};
use crate::mechanics::{MechConfig, MechState, Mechanics, NeedleGeometry};
use crate::meta::{config_hash, VERSION};
use crate::phantom::PhantomSpec;
use crate::rng::{stream_rng, Stream};
use crate::sensor::{AScanFrame, Sensor, SensorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub controller: ControllerConfig,
    pub sensor: SensorConfig,
    pub mech: MechConfig,
    pub geometry: NeedleGeometry,
    /// Standard deviation of the shaft force measurement.
    pub shaft_noise_n: f64,
    /// Runs stop this far above the bottom of the phantom.
    pub depth_margin_mm: f64,
    pub max_duration_s: f64,
    /// A collaborative run that advances less than 0.1 mm for this long is stalled.
    pub stall_timeout_s: f64,
    pub seed: u64,
    /// Wall-clock mode: estimates that miss the tick budget are dropped.
    #[serde(skip)]
    pub realtime: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            controller: ControllerConfig::default(),
            sensor: SensorConfig::default(),
            mech: MechConfig::default(),
            geometry: NeedleGeometry::default(),
            shaft_noise_n: 0.02,
            depth_margin_mm: 2.0,
            max_duration_s: 300.0,
            stall_timeout_s: 10.0,
            seed: 0,
            realtime: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    DepthReached,
    OperatorStop,
    Stalled,
    Timeout,
    Aborted,
}

/// Tick-driven insertion: sense, estimate, let the caller decide, actuate.
///
/// Each tick is [`observe`](Self::observe) followed by exactly one of
/// [`apply`](Self::apply), [`advance_fixed`](Self::advance_fixed) or
/// [`retract_step`](Self::retract_step), which appends one trace sample
/// describing the state before the motion.
pub struct CollabSession {
    pub config: SessionConfig,
    mech: Mechanics,
    state: MechState,
    sensor: Sensor,
    estimator: Box<dyn TipForceEstimator>,
    pi: PiController,
    sensor_rng: ChaCha8Rng,
    shaft_rng: ChaCha8Rng,
    blank: AScanFrame,
    est: f64,
    true_tip: f64,
    observed: bool,
    samples: Vec<ForceSample>,
    meta: TraceMeta,
    depth_max: f64,
    tick: u64,
    stop: Option<StopReason>,
    progress: (f64, f64),
    pub overruns: u64,
}

impl CollabSession {
    pub fn new(
        phantom: PhantomSpec,
        estimator: Box<dyn TipForceEstimator>,
        config: SessionConfig,
        insertion: u64,
        mode: TraceMode,
    ) -> Result<Self, ControlError> {
        config.controller.validate()?;
        let meta = TraceMeta {
            version: VERSION.to_string(),
            seed: config.seed,
            insertion,
            phantom: phantom
                .name
                .split_whitespace()
                .collect::<Vec<_>>()
                .join("_"),
            phantom_hash: config_hash(&phantom),
            config_hash: config_hash(&config),
            mode,
            estimator: estimator.name(),
            operator: "robot".into(),
            alpha: config.controller.alpha,
        };
        let depth_max = (phantom.total_depth() - config.depth_margin_mm).max(0.0);
        let mech = Mechanics::new(phantom, config.geometry, config.mech);
        let state = mech.start(insertion);
        let mut estimator = estimator;
        estimator.reset();
        Ok(Self {
            mech,
            state,
            sensor: Sensor::new(config.sensor),
            estimator,
            pi: PiController::new(config.controller),
            sensor_rng: stream_rng(config.seed, Stream::SensorNoise, insertion),
            shaft_rng: stream_rng(config.seed, Stream::ShaftNoise, insertion),
            blank: AScanFrame {
                intensities: Vec::new(),
                t_s: 0.0,
            },
            est: 0.0,
            true_tip: 0.0,
            observed: false,
            samples: Vec::new(),
            meta,
            depth_max,
            tick: 0,
            stop: None,
            progress: (0.0, 0.0),
            overruns: 0,
            config,
        })
    }

    pub fn phantom(&self) -> &PhantomSpec {
        &self.mech.phantom
    }

    pub fn alpha(&self) -> f64 {
        self.pi.config.alpha
    }

    pub fn dt(&self) -> f64 {
        self.config.controller.dt()
    }

    pub fn t_s(&self) -> f64 {
        self.tick as f64 * self.dt()
    }

    pub fn depth_mm(&self) -> f64 {
        self.state.depth_mm
    }

    pub fn depth_max_mm(&self) -> f64 {
        self.depth_max
    }

    pub fn set_depth_max(&mut self, depth: f64) {
        self.depth_max = depth.min(self.mech.phantom.total_depth());
    }

    pub fn velocity_mm_s(&self) -> f64 {
        self.state.velocity_mm_s
    }

    pub fn stopped(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn samples(&self) -> &[ForceSample] {
        &self.samples
    }

    /// Names the operator in the trace header; names are single tokens.
    pub fn set_operator(&mut self, name: &str) {
        self.meta.operator = name.split_whitespace().collect::<Vec<_>>().join("_");
    }

    pub fn stop_with(&mut self, reason: StopReason) {
        self.stop.get_or_insert(reason);
    }

    pub fn insertion_context(&self) -> InsertionContext {
        InsertionContext {
            insertion: self.meta.insertion,
            alpha: self.alpha(),
            skin_end_mm: self.mech.phantom.skin_end(),
        }
    }

    /// Senses the current state and updates the tip-force estimate.
    pub fn observe(&mut self) -> Result<Observation, ControlError> {
        if !self.observed {
            let t = self.t_s();
            let f_true = self.mech.tip_force(&self.state);
            let frame = if self.estimator.needs_frame() {
                Some(self.sensor.sense(f_true, t, &mut self.sensor_rng)?)
            } else {
                None
            };
            let reading = SensorReading {
                true_tip_n: f_true,
                frame: frame.as_ref().unwrap_or(&self.blank),
            };
            let started = Instant::now();
            let est = self.estimator.estimate(&reading);
            if self.config.realtime && started.elapsed().as_secs_f64() > self.dt() {
                self.overruns += 1;
                log::warn!(
                    "estimator overran the tick budget at t = {t:.3} s; reusing the last estimate"
                );
            } else {
                self.est = est;
            }
            self.true_tip = f_true;
            self.observed = true;
        }
        Ok(Observation {
            t_s: self.t_s(),
            depth_mm: self.state.depth_mm,
            felt_force_n: self.alpha() * self.est,
            dt_s: self.dt(),
        })
    }

    fn record_and_move(
        &mut self,
        f_handle: f64,
        e_f: f64,
        trigger: bool,
        dx: f64,
    ) -> Result<ForceSample, ControlError> {
        self.observe()?;
        let noise: f64 = self.shaft_rng.sample(StandardNormal);
        let sample = ForceSample {
            t_s: self.t_s(),
            depth_mm: self.state.depth_mm,
            f_handle_n: f_handle,
            f_tip_true_n: self.true_tip,
            f_tip_est_n: self.est,
            f_friction_n: self.mech.friction_force(&self.state),
            f_shaft_n: self.mech.shaft_force(&self.state) + self.config.shaft_noise_n * noise,
            e_f_n: e_f,
            trigger,
        };
        self.samples.push(sample);
        self.state = self.mech.step(&self.state, dx, self.dt())?;
        self.tick += 1;
        self.observed = false;

        let t = self.t_s();
        if self.state.depth_mm >= self.depth_max - 1e-9 {
            self.stop_with(StopReason::DepthReached);
        } else if t >= self.config.max_duration_s {
            self.stop_with(StopReason::Timeout);
        }
        Ok(sample)
    }

    /// One collaborative tick driven by an operator command.
    pub fn apply(&mut self, cmd: OperatorCommand) -> Result<ForceSample, ControlError> {
        self.observe()?;
        let out = self.pi.step(cmd.f_handle_n, self.est);
        let dx = out.dx_mm.min(self.depth_max - self.state.depth_mm).max(0.0);
        let sample = self.record_and_move(cmd.f_handle_n.max(0.0), out.e_f_n, cmd.trigger, dx)?;
        let (t, d) = (self.t_s(), self.state.depth_mm);
        if d > self.progress.1 + 0.1 {
            self.progress = (t, d);
        } else if t - self.progress.0 > self.config.stall_timeout_s {
            self.stop_with(StopReason::Stalled);
        }
        if cmd.stop {
            self.stop_with(StopReason::OperatorStop);
        }
        Ok(sample)
    }

    /// One tick of position-controlled motion bypassing the admittance law.
    pub fn advance_fixed(&mut self, dx: f64) -> Result<ForceSample, ControlError> {
        let dx = dx.min(self.depth_max - self.state.depth_mm).max(0.0);
        self.record_and_move(0.0, 0.0, false, dx)
    }

    /// One tick of explicit retraction; returns the distance withdrawn.
    pub fn retract_step(&mut self, remaining_mm: f64) -> Result<f64, ControlError> {
        let back = remaining_mm
            .min(
                self.config
                    .controller
                    .v_max_mm_s
                    .min(self.config.mech.v_max_mm_s)
                    * self.dt(),
            )
            .min(self.state.depth_mm)
            .max(0.0);
        self.record_and_move(0.0, 0.0, false, -back)?;
        self.progress = (self.t_s(), self.state.depth_mm);
        Ok(back)
    }

    pub fn finish(self) -> InsertionTrace {
        InsertionTrace {
            meta: self.meta,
            samples: self.samples,
        }
    }
}

/// Operator-in-the-loop insertion until the depth limit, a stall or a stop request.
pub fn run_collaborative(
    phantom: &PhantomSpec,
    operator: &mut dyn Operator,
    estimator: Box<dyn TipForceEstimator>,
    config: &SessionConfig,
    insertion: u64,
) -> Result<(InsertionTrace, StopReason), ControlError> {
    let mut session = CollabSession::new(
        phantom.clone(),
        estimator,
        *config,
        insertion,
        TraceMode::Collab,
    )?;
    session.set_operator(&operator.name());
    operator.reset(&session.insertion_context());
    loop {
        let obs = session.observe()?;
        let cmd = operator.step(&obs);
        session.apply(cmd)?;
        if let Some(reason) = session.stopped() {
            return Ok((session.finish(), reason));
        }
    }
}

/// Fully robotic insertion at constant velocity to `depth_max_mm`.
pub fn run_constant_velocity(
    phantom: &PhantomSpec,
    velocity_mm_s: f64,
    depth_max_mm: f64,
    estimator: Box<dyn TipForceEstimator>,
    config: &SessionConfig,
    insertion: u64,
) -> Result<InsertionTrace, ControlError> {
    let v_max = config.controller.v_max_mm_s.min(config.mech.v_max_mm_s);
    if !(velocity_mm_s > 0.0 && velocity_mm_s <= v_max) {
        return Err(ControlError::Config(format!(
            "velocity {velocity_mm_s} mm/s outside (0, {v_max}]"
        )));
    }
    let mut session = CollabSession::new(
        phantom.clone(),
        estimator,
        *config,
        insertion,
        TraceMode::Auto,
    )?;
    session.set_depth_max(depth_max_mm);
    let step = velocity_mm_s * session.dt();
    let ticks = (session.depth_max_mm() / step - 1e-9).ceil().max(0.0) as u64;
    for _ in 0..ticks {
        session.advance_fixed(step)?;
    }
    Ok(session.finish())
}
