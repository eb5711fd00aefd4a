//! Streaming tip-force estimators consumed by the control loop.

use std::sync::Arc;

use crate::neural::{Arch, Model, ModelStream};
use crate::sensor::{AScanFrame, AnalyticInverse, SensorConfig};

/// What the loop knows at one tick: the fresh A-scan, plus the simulator's true
/// force for oracle estimators and diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct SensorReading<'a> {
    pub true_tip_n: f64,
    pub frame: &'a AScanFrame,
}

pub trait TipForceEstimator: Send {
    fn name(&self) -> String;
    fn reset(&mut self);
    fn estimate(&mut self, reading: &SensorReading<'_>) -> f64;
    /// Estimators that ignore the A-scan let the loop skip rendering it.
    fn needs_frame(&self) -> bool {
        true
    }
}

/// Returns the simulator's true tip force.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrueForce;

impl TipForceEstimator for TrueForce {
    fn name(&self) -> String {
        "true".into()
    }

    fn reset(&mut self) {}

    fn estimate(&mut self, reading: &SensorReading<'_>) -> f64 {
        reading.true_tip_n
    }

    fn needs_frame(&self) -> bool {
        false
    }
}

/// Peak localisation plus closed-form inversion of the cavity spring.
#[derive(Debug, Clone)]
pub struct AnalyticEstimator(pub AnalyticInverse);

impl AnalyticEstimator {
    pub fn new(config: SensorConfig) -> Self {
        Self(AnalyticInverse::new(config))
    }
}

impl TipForceEstimator for AnalyticEstimator {
    fn name(&self) -> String {
        "analytic".into()
    }

    fn reset(&mut self) {}

    fn estimate(&mut self, reading: &SensorReading<'_>) -> f64 {
        self.0.estimate(reading.frame)
    }
}

/// A trained regressor run frame by frame.
#[derive(Debug, Clone)]
pub struct NeuralEstimator {
    model: Arc<Model>,
    params: Arc<Vec<f32>>,
    stream: ModelStream<f32>,
}

impl NeuralEstimator {
    pub fn new(model: Arc<Model>, params: Arc<Vec<f32>>) -> Self {
        let stream = model.stream();
        Self {
            model,
            params,
            stream,
        }
    }

    pub fn arch(&self) -> Arch {
        self.model.arch()
    }

    pub fn warming_up(&self) -> bool {
        self.stream.warming_up()
    }
}

impl TipForceEstimator for NeuralEstimator {
    fn name(&self) -> String {
        self.model.arch().tag().into()
    }

    fn reset(&mut self) {
        self.stream.reset();
    }

    fn estimate(&mut self, reading: &SensorReading<'_>) -> f64 {
        self.stream
            .step(&self.model, &self.params, &reading.frame.intensities) as f64
    }
}
