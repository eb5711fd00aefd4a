use super::Arch;
use super::{CgruConfig, Head1dConfig, Model, ModelConfig, NeuralError, ResNetConfig};

/// Gradients below this magnitude are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Share of parameters whose analytic gradient exceeds the floor.
    pub live_fraction: f64,
    pub n_params: usize,
}

/// Tiny configurations for derivative checks: height 16, 2 channels, 5 frames, no pooling.
pub fn tiny_config(arch: Arch) -> ModelConfig {
    match arch {
        Arch::Cgru => ModelConfig::Cgru(CgruConfig {
            height: 16,
            pool: 1,
            input_channels: 1,
            channels: 2,
            kernel: 3,
            seq_len: 5,
            head: Head1dConfig {
                channels: [2, 2],
                kernel: 3,
                hidden: 4,
            },
        }),
        Arch::Resnet => ModelConfig::Resnet(ResNetConfig {
            height: 16,
            pool: 1,
            seq_len: 5,
            stem_channels: 2,
            stem_stride: 1,
            channels: [2, 2, 2, 2],
            strides: [2, 1, 2, 1],
            kernel: 3,
        }),
    }
}

/// Compares the squared-error gradient with central differences of step `h`.
pub fn gradient_check(
    model: &Model,
    params: &[f64],
    seq: &[f64],
    target: f64,
    h: f64,
) -> Result<GradCheck, NeuralError> {
    let mut grad = vec![0.0; params.len()];
    model.sample_grad(params, seq, target, &mut grad)?;
    let mut p = params.to_vec();
    let loss = |p: &[f64]| -> Result<f64, NeuralError> {
        let y = model.forward(p, seq)?;
        Ok((y - target) * (y - target))
    };
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let keep = p[i];
        p[i] = keep + h;
        let up = loss(&p)?;
        p[i] = keep - h;
        let down = loss(&p)?;
        p[i] = keep;
        let numeric = (up - down) / (2.0 * h);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
        worst = worst.max(err);
    }
    let live = grad.iter().filter(|g| g.abs() > GRADCHECK_FLOOR).count();
    Ok(GradCheck {
        max_rel_error: worst,
        live_fraction: live as f64 / grad.len().max(1) as f64,
        n_params: grad.len(),
    })
}
