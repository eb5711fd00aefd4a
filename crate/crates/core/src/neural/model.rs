use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cgru::{CgruCnn, CgruConfig, CgruStream};
use super::resnet::{ResNet2d, ResNetConfig, ResNetStream};
use super::{NeuralError, Scalar};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Cgru,
    Resnet,
}

impl Arch {
    pub const ALL: [Arch; 2] = [Arch::Resnet, Arch::Cgru];

    pub fn tag(self) -> &'static str {
        match self {
            Arch::Cgru => "cgru",
            Arch::Resnet => "resnet",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Arch::Cgru => "cGRU-CNN",
            Arch::Resnet => "ResNet",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cgru" | "cgru-cnn" => Ok(Arch::Cgru),
            "resnet" => Ok(Arch::Resnet),
            other => Err(format!(
                "unknown architecture `{other}` (expected cgru or resnet)"
            )),
        }
    }
}

/// Architecture plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ModelConfig {
    Cgru(CgruConfig),
    Resnet(ResNetConfig),
}

impl ModelConfig {
    pub fn arch(&self) -> Arch {
        match self {
            ModelConfig::Cgru(_) => Arch::Cgru,
            ModelConfig::Resnet(_) => Arch::Resnet,
        }
    }

    pub fn default_for(arch: Arch) -> Self {
        match arch {
            Arch::Cgru => ModelConfig::Cgru(CgruConfig::default()),
            Arch::Resnet => ModelConfig::Resnet(ResNetConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Cgru(CgruCnn),
    Resnet(ResNet2d),
}

/// Per-sample backpropagation record.
pub enum Tape<F> {
    Cgru(super::cgru::CgruTape<F>),
    Resnet(super::resnet::ResNetTape<F>),
}

impl Model {
    pub fn new(config: &ModelConfig) -> Self {
        match *config {
            ModelConfig::Cgru(c) => Model::Cgru(CgruCnn::new(c)),
            ModelConfig::Resnet(c) => Model::Resnet(ResNet2d::new(c)),
        }
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Cgru(m) => ModelConfig::Cgru(m.config),
            Model::Resnet(m) => ModelConfig::Resnet(m.config),
        }
    }

    pub fn arch(&self) -> Arch {
        self.config().arch()
    }

    pub fn layout(&self) -> &super::Layout {
        match self {
            Model::Cgru(m) => &m.layout,
            Model::Resnet(m) => &m.layout,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().len()
    }

    pub fn frame_len(&self) -> usize {
        match self {
            Model::Cgru(m) => m.frame_len(),
            Model::Resnet(m) => m.frame_len(),
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            Model::Cgru(m) => m.config.seq_len,
            Model::Resnet(m) => m.config.seq_len,
        }
    }

    pub fn pool(&self) -> usize {
        match self {
            Model::Cgru(m) => m.config.pool,
            Model::Resnet(m) => m.config.pool,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Model::Cgru(m) => m.config.height,
            Model::Resnet(m) => m.config.height,
        }
    }

    pub fn output_bias_index(&self) -> usize {
        match self {
            Model::Cgru(m) => m.head.output_bias_index(),
            Model::Resnet(m) => m.output_bias_index(),
        }
    }

    /// Fresh parameters; the output bias starts at `bias` (typically the label mean).
    pub fn init<F: Scalar>(&self, seed: u64, bias: f64) -> Vec<F> {
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let mut p = match self {
            Model::Cgru(m) => m.init(&mut rng),
            Model::Resnet(m) => m.init(&mut rng),
        };
        p[self.output_bias_index()] = F::of(bias);
        p
    }

    /// Forward pass over a time-major window of pooled frames.
    pub fn forward<F: Scalar>(&self, p: &[F], seq: &[F]) -> Result<F, NeuralError> {
        match self {
            Model::Cgru(m) => m.forward(p, seq),
            Model::Resnet(m) => m.forward(p, seq),
        }
    }

    pub fn forward_tape<F: Scalar>(&self, p: &[F], seq: &[F]) -> Result<(F, Tape<F>), NeuralError> {
        Ok(match self {
            Model::Cgru(m) => {
                let (y, t) = m.forward_tape(p, seq)?;
                (y, Tape::Cgru(t))
            }
            Model::Resnet(m) => {
                let (y, t) = m.forward_tape(p, seq)?;
                (y, Tape::Resnet(t))
            }
        })
    }

    /// Accumulates `dout * d(output)/d(params)` into `grad`.
    pub fn backward<F: Scalar>(&self, p: &[F], tape: &Tape<F>, dout: F, grad: &mut [F]) {
        match (self, tape) {
            (Model::Cgru(m), Tape::Cgru(t)) => m.backward(p, t, dout, grad),
            (Model::Resnet(m), Tape::Resnet(t)) => m.backward(p, t, dout, grad),
            _ => panic!("tape was recorded by a different architecture"),
        }
    }

    /// Squared error of one window; its gradient is added to `grad`.
    pub fn sample_grad<F: Scalar>(
        &self,
        p: &[F],
        seq: &[F],
        target: F,
        grad: &mut [F],
    ) -> Result<F, NeuralError> {
        let (y, tape) = self.forward_tape(p, seq)?;
        let e = y - target;
        self.backward(p, &tape, F::of(2.0) * e, grad);
        Ok(e * e)
    }

    pub fn stream<F: Scalar>(&self) -> ModelStream<F> {
        match self {
            Model::Cgru(m) => ModelStream::Cgru(CgruStream::new(m)),
            Model::Resnet(m) => ModelStream::Resnet(ResNetStream::new(m)),
        }
    }
}

/// Per-stream inference state for either architecture.
#[derive(Debug, Clone)]
pub enum ModelStream<F> {
    Cgru(CgruStream<F>),
    Resnet(ResNetStream<F>),
}

impl<F: Scalar> ModelStream<F> {
    pub fn reset(&mut self) {
        match self {
            ModelStream::Cgru(s) => s.reset(),
            ModelStream::Resnet(s) => s.reset(),
        }
    }

    /// Predictions made before the input window is full (ResNet only).
    pub fn warming_up(&self) -> bool {
        match self {
            ModelStream::Cgru(_) => false,
            ModelStream::Resnet(s) => s.warming_up(),
        }
    }

    pub fn step(&mut self, model: &Model, p: &[F], raw: &[f32]) -> F {
        match (self, model) {
            (ModelStream::Cgru(s), Model::Cgru(m)) => s.step(m, p, raw),
            (ModelStream::Resnet(s), Model::Resnet(m)) => s.step(m, p, raw),
            _ => panic!("stream was created for a different architecture"),
        }
    }

    pub fn step_pooled(&mut self, model: &Model, p: &[F], pooled: &[F]) -> F {
        match (self, model) {
            (ModelStream::Cgru(s), Model::Cgru(m)) => s.step_pooled(m, p, pooled),
            (ModelStream::Resnet(s), Model::Resnet(m)) => s.step_pooled(m, p, pooled),
            _ => panic!("stream was created for a different architecture"),
        }
    }
}
