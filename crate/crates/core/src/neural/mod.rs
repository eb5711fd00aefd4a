//! Tip-force regressors over A-scan streams.
//!
//! Two architectures share one small gradient engine:
//!
//! * [`CgruCnn`]: a GRU whose gate transforms are 1-D convolutions along the
//!   A-scan axis, followed by a residual 1-D CNN and two dense layers,
//! * [`ResNet2d`]: a 2-D residual CNN over the height x time buffer.
//!
//! All layers are written against the [`Scalar`] trait so the same code runs in
//! `f32` for training and inference and in `f64` for gradient checks. Parameters
//! of a model live in one flat vector described by a [`Layout`].

mod adam;
mod block;
mod cgru;
mod checkpoint;
mod dataset;
mod eval;
mod gradcheck;
mod head;
mod model;
pub mod ops;
mod params;
mod resnet;
mod train;

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use block::{BlockCache, ResidualBlock};
pub use cgru::{
    cell_backward, cell_forward, CellCache, CgruCell, CgruCnn, CgruConfig, CgruStream, CgruTape,
};
pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{
    calibration_profile, generate_recording, CalibrationConfig, Recording, WindowSet,
    RECORDING_MAGIC,
};
pub use eval::{
    evaluate, mean_abs_error, median, pearson, stream_predictions, time_train_step, EvalReport,
    StreamPredictions,
};
pub use gradcheck::{gradient_check, tiny_config, GradCheck, GRADCHECK_FLOOR};
pub use head::{Head1d, Head1dConfig, HeadCache};
pub use model::{Arch, Model, ModelConfig, ModelStream, Tape};
pub use params::{Layout, TensorSpec};
pub use resnet::{ResNet2d, ResNetConfig, ResNetStream, ResNetTape};
pub use train::{score, select_best, train, EpochStats, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Floating-point element type of the gradient engine.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Average-pools an A-scan by `factor` along its height.
pub fn pool_frame<F: Scalar>(raw: &[f32], factor: usize, out: &mut [F]) {
    let inv = 1.0 / factor as f64;
    for (o, chunk) in out.iter_mut().zip(raw.chunks_exact(factor)) {
        *o = F::of(chunk.iter().map(|&v| v as f64).sum::<f64>() * inv);
    }
}
