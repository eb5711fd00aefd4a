//! Outer-loop admittance control and the 200 Hz insertion session.
//!
//! The commanded pose follows `x_d = k_i * integral(e_F) + k_p * e_F` with the
//! force error `e_F = clamp(F_H - alpha * F_T, 0, F_H)`. Pose increments are
//! clamped to `[0, v_max * dt]` so the controller can never retract the needle.

mod gain;
mod operator;
mod session;
mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gain::{choose_gain, trigger_snr, GainChoice, GainTrial, CANDIDATE_GAINS};
pub use operator::{
    ConstantForce, InsertionContext, NullOperator, Observation, Operator, OperatorCommand,
    ReactiveConfig, ReactiveOperator, RemoteLink, RemoteOperator, DEADMAN_DECAY_S,
    DEADMAN_TIMEOUT_S,
};
pub use session::{
    run_collaborative, run_constant_velocity, CollabSession, SessionConfig, StopReason,
};
pub use trace::{ForceSample, InsertionTrace, TraceMeta, TraceMode, TRACE_COLUMNS};

use crate::mechanics::MechError;
use crate::sensor::SensorError;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mechanics(#[from] MechError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("trace format: {0}")]
    Trace(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Proportional gain, mm/N.
    pub k_p: f64,
    /// Integral gain, mm/(N s).
    pub k_i: f64,
    /// Feedback gain on the estimated tip force.
    pub alpha: f64,
    pub rate_hz: f64,
    pub v_max_mm_s: f64,
    /// Bound on the integral path `k_i * integral(e_F)`, mm.
    pub integrator_limit_mm: f64,
    /// First-order lag of the position loop; 0 makes the plant ideal.
    pub plant_tau_s: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            k_p: 0.5,
            k_i: 2.0,
            alpha: 1.0,
            rate_hz: 200.0,
            v_max_mm_s: 20.0,
            integrator_limit_mm: 1000.0,
            plant_tau_s: 0.0,
        }
    }
}

impl ControllerConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let ok = self.k_p >= 0.0
            && self.k_i >= 0.0
            && self.alpha > 0.0
            && self.rate_hz > 0.0
            && self.v_max_mm_s > 0.0
            && self.integrator_limit_mm > 0.0
            && self.plant_tau_s >= 0.0
            && [
                self.k_p,
                self.k_i,
                self.alpha,
                self.rate_hz,
                self.v_max_mm_s,
                self.plant_tau_s,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(ControlError::Config(format!("{self:?}")))
        }
    }
}

/// Force error after clamping to `[0, F_H]`; negative or NaN handle forces count as 0.
pub fn force_error(f_handle: f64, f_tip_est: f64, alpha: f64) -> f64 {
    let f_h = if f_handle > 0.0 { f_handle } else { 0.0 };
    let e = f_h - alpha * f_tip_est;
    if e.is_nan() {
        0.0
    } else {
        e.clamp(0.0, f_h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiOutput {
    pub dx_mm: f64,
    pub e_f_n: f64,
}

/// Discrete PI admittance law with trapezoidal integration and an optional
/// first-order plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PiController {
    pub config: ControllerConfig,
    integral_mm: f64,
    e_prev: f64,
    xd_prev: f64,
    /// Commanded pose not yet realised by the lagging plant.
    plant_gap_mm: f64,
}

impl PiController {
    pub fn new(config: ControllerConfig) -> Self {
        Self {
            config,
            integral_mm: 0.0,
            e_prev: 0.0,
            xd_prev: 0.0,
            plant_gap_mm: 0.0,
        }
    }

    pub fn integral_mm(&self) -> f64 {
        self.integral_mm
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.config.alpha = alpha;
    }

    pub fn step(&mut self, f_handle: f64, f_tip_est: f64) -> PiOutput {
        let c = &self.config;
        let dt = c.dt();
        let e = force_error(f_handle, f_tip_est, c.alpha);
        let lim = c.integrator_limit_mm;
        self.integral_mm =
            (self.integral_mm + c.k_i * 0.5 * (e + self.e_prev) * dt).clamp(-lim, lim);
        let xd = self.integral_mm + c.k_p * e;
        let step_max = c.v_max_mm_s * dt;
        let dx_cmd = (xd - self.xd_prev).clamp(0.0, step_max);
        self.xd_prev = xd;
        self.e_prev = e;

        let dx = if c.plant_tau_s > 0.0 {
            self.plant_gap_mm += dx_cmd;
            let frac = 1.0 - (-dt / c.plant_tau_s).exp();
            let mv = (self.plant_gap_mm * frac).clamp(0.0, step_max);
            self.plant_gap_mm -= mv;
            mv
        } else {
            dx_cmd
        };
        PiOutput {
            dx_mm: dx,
            e_f_n: e,
        }
    }
}
