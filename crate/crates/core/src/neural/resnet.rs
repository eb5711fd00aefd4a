use std::collections::VecDeque;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::block::{BlockCache, ResidualBlock};
use super::head::split_two;
use super::ops::{
    bias_grad, fill_bias, relu_backward_inplace, relu_inplace, Conv2d, ConvOp, Linear,
};
use super::params::{fill_normal, Layout};
use super::{pool_frame, NeuralError, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResNetConfig {
    pub height: usize,
    pub pool: usize,
    pub seq_len: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub channels: [usize; 4],
    pub strides: [usize; 4],
    pub kernel: usize,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        Self {
            height: 512,
            pool: 8,
            seq_len: 50,
            stem_channels: 4,
            stem_stride: 1,
            channels: [4, 4, 8, 8],
            strides: [2, 2, 2, 2],
            kernel: 3,
        }
    }
}

impl ResNetConfig {
    pub fn pooled_height(&self) -> usize {
        self.height / self.pool
    }
}

/// 2-D residual CNN over a height x time window of A-scans, global average
/// pooling and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNet2d {
    pub config: ResNetConfig,
    pub stem: Conv2d,
    pub blocks: Vec<ResidualBlock<Conv2d>>,
    fc: Linear,
    w_stem: Range<usize>,
    b_stem: Range<usize>,
    w_fc: Range<usize>,
    b_fc: Range<usize>,
    pub layout: Layout,
}

#[derive(Debug, Clone, Default)]
pub struct ResNetTape<F> {
    x: Vec<F>,
    stem: Vec<F>,
    blocks: Vec<BlockCache<F>>,
    pooled: Vec<F>,
}

impl ResNet2d {
    pub fn new(config: ResNetConfig) -> Self {
        let mut layout = Layout::default();
        let (h, w) = (config.pooled_height(), config.seq_len);
        let k = config.kernel;
        let stem = Conv2d::new(1, config.stem_channels, k, config.stem_stride, h, w);
        let w_stem = layout.push("stem.w", stem.weight_shape());
        let b_stem = layout.push("stem.b", vec![stem.c_out]);
        let (mut c_prev, mut hh, mut ww) = (stem.c_out, stem.h_out(), stem.w_out());
        let mut blocks = Vec::new();
        for (i, (&c, &s)) in config.channels.iter().zip(&config.strides).enumerate() {
            let conv1 = Conv2d::new(c_prev, c, k, s, hh, ww);
            let conv2 = Conv2d::new(c, c, k, 1, conv1.h_out(), conv1.w_out());
            let skip = Conv2d::new(c_prev, c, 1, s, hh, ww);
            blocks.push(ResidualBlock::new(
                &mut layout,
                &format!("block{i}"),
                conv1,
                conv2,
                skip,
            ));
            (c_prev, hh, ww) = (c, conv1.h_out(), conv1.w_out());
        }
        let fc = Linear {
            n_in: c_prev,
            n_out: 1,
        };
        Self {
            w_fc: layout.push("fc.w", vec![1, c_prev]),
            b_fc: layout.push("fc.b", vec![1]),
            config,
            stem,
            blocks,
            fc,
            w_stem,
            b_stem,
            layout,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.config.pooled_height()
    }

    pub fn output_bias_index(&self) -> usize {
        self.b_fc.start
    }

    pub fn init<F: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        let mut p = vec![F::zero(); self.layout.len()];
        let fan = (self.stem.kernel * self.stem.kernel) as f64;
        fill_normal(&mut p[self.w_stem.clone()], (2.0 / fan).sqrt(), rng);
        for b in &self.blocks {
            b.init(&mut p, rng);
        }
        fill_normal(
            &mut p[self.w_fc.clone()],
            (1.0 / self.fc.n_in as f64).sqrt(),
            rng,
        );
        p
    }

    fn last_map(&self) -> (usize, usize) {
        let last = self.blocks.last().map(|b| b.conv2).unwrap_or(self.stem);
        (last.c_out, last.out_spatial())
    }

    pub fn forward<F: Scalar>(&self, p: &[F], seq: &[F]) -> Result<F, NeuralError> {
        let mut tape = ResNetTape::default();
        self.forward_into(p, seq, &mut tape)
    }

    pub fn forward_tape<F: Scalar>(
        &self,
        p: &[F],
        seq: &[F],
    ) -> Result<(F, ResNetTape<F>), NeuralError> {
        let mut tape = ResNetTape::default();
        let y = self.forward_into(p, seq, &mut tape)?;
        Ok((y, tape))
    }

    /// `seq` is time-major: `seq_len` pooled frames of `frame_len` values each.
    pub fn forward_into<F: Scalar>(
        &self,
        p: &[F],
        seq: &[F],
        tape: &mut ResNetTape<F>,
    ) -> Result<F, NeuralError> {
        let (h, t) = (self.frame_len(), self.config.seq_len);
        if p.len() != self.layout.len() {
            return Err(NeuralError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.layout.len(),
                p.len()
            )));
        }
        if seq.len() != h * t {
            return Err(NeuralError::ShapeMismatch(format!(
                "window must hold {t} frames of {h} values, got {} values",
                seq.len()
            )));
        }
        tape.x.resize(h * t, F::zero());
        for (ti, frame) in seq.chunks_exact(h).enumerate() {
            for (hi, &v) in frame.iter().enumerate() {
                tape.x[hi * t + ti] = v;
            }
        }
        tape.stem.resize(self.stem.out_len(), F::zero());
        fill_bias(
            &mut tape.stem,
            &p[self.b_stem.clone()],
            self.stem.out_spatial(),
        );
        self.stem
            .forward_acc(&p[self.w_stem.clone()], &tape.x, &mut tape.stem);
        relu_inplace(&mut tape.stem);

        tape.blocks
            .resize_with(self.blocks.len(), BlockCache::default);
        for i in 0..self.blocks.len() {
            let (done, rest) = tape.blocks.split_at_mut(i);
            let input = if i == 0 { &tape.stem } else { &done[i - 1].out };
            self.blocks[i].forward(p, input, &mut rest[0]);
        }

        let (c, sp) = self.last_map();
        let last = tape.blocks.last().map(|b| &b.out).unwrap_or(&tape.stem);
        let inv = F::one() / F::of(sp as f64);
        tape.pooled.clear();
        tape.pooled.extend(
            last.chunks_exact(sp)
                .take(c)
                .map(|row| row.iter().copied().sum::<F>() * inv),
        );
        let mut y = [F::zero()];
        self.fc.forward(
            &p[self.w_fc.clone()],
            &p[self.b_fc.clone()],
            &tape.pooled,
            &mut y,
        );
        Ok(y[0])
    }

    pub fn backward<F: Scalar>(&self, p: &[F], tape: &ResNetTape<F>, dout: F, grad: &mut [F]) {
        let (c, sp) = self.last_map();
        let mut dpool = vec![F::zero(); c];
        {
            let (dw, db) = split_two(grad, &self.w_fc, &self.b_fc);
            self.fc.backward(
                &p[self.w_fc.clone()],
                &tape.pooled,
                &[dout],
                dw,
                db,
                Some(&mut dpool),
            );
        }
        let inv = F::one() / F::of(sp as f64);
        let mut dmap: Vec<F> = dpool
            .iter()
            .flat_map(|&d| std::iter::repeat_n(d * inv, sp))
            .collect();
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let mut dx = vec![F::zero(); block.conv1.in_len()];
            block.backward(p, &tape.blocks[i], &dmap, grad, Some(&mut dx));
            dmap = dx;
        }
        relu_backward_inplace(&tape.stem, &mut dmap);
        bias_grad(
            &dmap,
            &mut grad[self.b_stem.clone()],
            self.stem.out_spatial(),
        );
        self.stem.backward(
            &p[self.w_stem.clone()],
            &tape.x,
            &dmap,
            &mut grad[self.w_stem.clone()],
            None,
        );
    }
}

/// Streaming wrapper: keeps the last `seq_len` pooled frames and re-runs the
/// network on the zero-padded window after every new frame.
#[derive(Debug, Clone)]
pub struct ResNetStream<F> {
    ring: VecDeque<Vec<F>>,
    window: Vec<F>,
    tape: ResNetTape<F>,
    pub frames_seen: usize,
}

impl<F: Scalar> ResNetStream<F> {
    pub fn new(model: &ResNet2d) -> Self {
        let h = model.frame_len();
        let t = model.config.seq_len;
        Self {
            ring: (0..t).map(|_| vec![F::zero(); h]).collect(),
            window: vec![F::zero(); h * t],
            tape: ResNetTape::default(),
            frames_seen: 0,
        }
    }

    pub fn reset(&mut self) {
        for f in &mut self.ring {
            f.fill(F::zero());
        }
        self.frames_seen = 0;
    }

    /// True while the window still contains zero padding.
    pub fn warming_up(&self) -> bool {
        self.frames_seen < self.ring.len()
    }

    pub fn step_pooled(&mut self, model: &ResNet2d, p: &[F], pooled: &[F]) -> F {
        let mut oldest = self.ring.pop_front().expect("ring is never empty");
        oldest.copy_from_slice(pooled);
        self.ring.push_back(oldest);
        self.frames_seen += 1;
        let h = model.frame_len();
        for (dst, f) in self.window.chunks_exact_mut(h).zip(&self.ring) {
            dst.copy_from_slice(f);
        }
        model
            .forward_into(p, &self.window, &mut self.tape)
            .expect("stream buffers match the model")
    }

    pub fn step(&mut self, model: &ResNet2d, p: &[F], raw: &[f32]) -> F {
        let mut pooled = vec![F::zero(); model.frame_len()];
        pool_frame(raw, model.config.pool, &mut pooled);
        self.step_pooled(model, p, &pooled)
    }
}
