//! Convolutional GRU cell and the cGRU-CNN regressor built on it.
//!
//! Gate equations, with `*` a same-padded 1-D convolution along the A-scan axis:
//!
//! ```text
//! z_t = sigmoid(W_hz * h_{t-1} + W_xz * x_t + b_z)
//! r_t = sigmoid(W_hr * h_{t-1} + W_xr * x_t + b_r)
//! c_t = tanh(W_h * (r_t . h_{t-1}) + W_x * x_t + b)
//! h_t = (1 - z_t) . h_{t-1} + z_t . c_t
//! ```

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::head::{Head1d, Head1dConfig, HeadCache};
use super::ops::{bias_grad, fill_bias, sigmoid, Conv1d, ConvOp};
use super::params::{fill_normal, Layout};
use super::{pool_frame, NeuralError, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgruConfig {
    /// Raw A-scan height.
    pub height: usize,
    /// Average-pooling factor applied to each A-scan before the cell.
    pub pool: usize,
    pub input_channels: usize,
    pub channels: usize,
    pub kernel: usize,
    pub seq_len: usize,
    pub head: Head1dConfig,
}

impl Default for CgruConfig {
    fn default() -> Self {
        Self {
            height: 512,
            pool: 8,
            input_channels: 1,
            channels: 4,
            kernel: 7,
            seq_len: 50,
            head: Head1dConfig::default(),
        }
    }
}

impl CgruConfig {
    pub fn pooled_height(&self) -> usize {
        self.height / self.pool
    }
}

/// Weight ranges and convolution shapes of one cGRU cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CgruCell {
    pub conv_h: Conv1d,
    pub conv_x: Conv1d,
    pub w_hz: Range<usize>,
    pub w_xz: Range<usize>,
    pub w_hr: Range<usize>,
    pub w_xr: Range<usize>,
    pub w_h: Range<usize>,
    pub w_x: Range<usize>,
    pub b_z: Range<usize>,
    pub b_r: Range<usize>,
    pub b: Range<usize>,
}

/// Activations of one cell step, kept for backpropagation through time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellCache<F> {
    pub h_prev: Vec<F>,
    pub x: Vec<F>,
    pub z: Vec<F>,
    pub r: Vec<F>,
    pub rh: Vec<F>,
    pub cand: Vec<F>,
    pub h: Vec<F>,
}

impl CgruCell {
    pub fn new(
        layout: &mut Layout,
        height: usize,
        c_in: usize,
        channels: usize,
        kernel: usize,
    ) -> Self {
        let conv_h = Conv1d::new(channels, channels, kernel, 1, height);
        let conv_x = Conv1d::new(c_in, channels, kernel, 1, height);
        Self {
            w_hz: layout.push("cgru.w_hz", conv_h.weight_shape()),
            w_xz: layout.push("cgru.w_xz", conv_x.weight_shape()),
            w_hr: layout.push("cgru.w_hr", conv_h.weight_shape()),
            w_xr: layout.push("cgru.w_xr", conv_x.weight_shape()),
            w_h: layout.push("cgru.w_h", conv_h.weight_shape()),
            w_x: layout.push("cgru.w_x", conv_x.weight_shape()),
            b_z: layout.push("cgru.b_z", vec![channels]),
            b_r: layout.push("cgru.b_r", vec![channels]),
            b: layout.push("cgru.b", vec![channels]),
            conv_h,
            conv_x,
        }
    }

    pub fn height(&self) -> usize {
        self.conv_h.len_in
    }

    pub fn hidden_len(&self) -> usize {
        self.conv_h.out_len()
    }

    pub fn input_len(&self) -> usize {
        self.conv_x.in_len()
    }

    pub fn init<F: Scalar, R: Rng + ?Sized>(&self, p: &mut [F], rng: &mut R) {
        let fan_h = (self.conv_h.c_in * self.conv_h.kernel) as f64;
        let fan_x = (self.conv_x.c_in * self.conv_x.kernel) as f64;
        for r in [&self.w_hz, &self.w_hr, &self.w_h] {
            fill_normal(&mut p[r.clone()], (1.0 / fan_h).sqrt(), rng);
        }
        for r in [&self.w_xz, &self.w_xr, &self.w_x] {
            fill_normal(&mut p[r.clone()], (1.0 / fan_x).sqrt(), rng);
        }
    }

    /// One step of the cell on explicit inputs; returns `h_t`.
    pub fn step<F: Scalar>(&self, p: &[F], x: &[F], h_prev: &[F]) -> Result<Vec<F>, NeuralError> {
        if x.len() != self.input_len() || h_prev.len() != self.hidden_len() {
            return Err(NeuralError::ShapeMismatch(format!(
                "cell expects x of {} and h of {}, got {} and {}",
                self.input_len(),
                self.hidden_len(),
                x.len(),
                h_prev.len()
            )));
        }
        let mut cache = CellCache::default();
        cell_forward(self, p, x, h_prev, &mut cache);
        Ok(cache.h)
    }
}

pub fn cell_forward<F: Scalar>(
    cell: &CgruCell,
    p: &[F],
    x: &[F],
    h_prev: &[F],
    cache: &mut CellCache<F>,
) {
    let n = cell.hidden_len();
    let sp = cell.height();
    cache.h_prev.clear();
    cache.h_prev.extend_from_slice(h_prev);
    cache.x.clear();
    cache.x.extend_from_slice(x);

    let gate = |w_h: &Range<usize>, w_x: &Range<usize>, b: &Range<usize>, out: &mut Vec<F>| {
        out.resize(n, F::zero());
        fill_bias(out, &p[b.clone()], sp);
        cell.conv_h.forward_acc(&p[w_h.clone()], h_prev, out);
        cell.conv_x.forward_acc(&p[w_x.clone()], x, out);
        for v in out.iter_mut() {
            *v = sigmoid(*v);
        }
    };
    gate(&cell.w_hz, &cell.w_xz, &cell.b_z, &mut cache.z);
    gate(&cell.w_hr, &cell.w_xr, &cell.b_r, &mut cache.r);

    cache.rh.clear();
    cache
        .rh
        .extend(cache.r.iter().zip(h_prev).map(|(&r, &h)| r * h));
    cache.cand.resize(n, F::zero());
    fill_bias(&mut cache.cand, &p[cell.b.clone()], sp);
    cell.conv_h
        .forward_acc(&p[cell.w_h.clone()], &cache.rh, &mut cache.cand);
    cell.conv_x
        .forward_acc(&p[cell.w_x.clone()], x, &mut cache.cand);
    for v in cache.cand.iter_mut() {
        *v = v.tanh();
    }

    cache.h.clear();
    cache.h.extend(
        cache
            .z
            .iter()
            .zip(h_prev)
            .zip(&cache.cand)
            .map(|((&z, &h), &c)| (F::one() - z) * h + z * c),
    );
}

/// Backpropagates `dh` through one step: accumulates weight gradients into `grad`
/// and writes the gradient with respect to `h_{t-1}` into `dh_prev` (overwritten).
pub fn cell_backward<F: Scalar>(
    cell: &CgruCell,
    p: &[F],
    cache: &CellCache<F>,
    dh: &[F],
    grad: &mut [F],
    dh_prev: &mut [F],
) {
    let n = cell.hidden_len();
    let sp = cell.height();
    let one = F::one();

    let mut dz = vec![F::zero(); n];
    let mut dcand_pre = vec![F::zero(); n];
    for i in 0..n {
        let (z, c, hp) = (cache.z[i], cache.cand[i], cache.h_prev[i]);
        dh_prev[i] = dh[i] * (one - z);
        dz[i] = dh[i] * (c - hp) * z * (one - z);
        dcand_pre[i] = dh[i] * z * (one - c * c);
    }

    bias_grad(&dcand_pre, &mut grad[cell.b.clone()], sp);
    cell.conv_x.backward(
        &p[cell.w_x.clone()],
        &cache.x,
        &dcand_pre,
        &mut grad[cell.w_x.clone()],
        None,
    );
    let mut drh = vec![F::zero(); n];
    cell.conv_h.backward(
        &p[cell.w_h.clone()],
        &cache.rh,
        &dcand_pre,
        &mut grad[cell.w_h.clone()],
        Some(&mut drh),
    );

    let mut dr = vec![F::zero(); n];
    for i in 0..n {
        let r = cache.r[i];
        dh_prev[i] += drh[i] * r;
        dr[i] = drh[i] * cache.h_prev[i] * r * (one - r);
    }

    bias_grad(&dz, &mut grad[cell.b_z.clone()], sp);
    cell.conv_x.backward(
        &p[cell.w_xz.clone()],
        &cache.x,
        &dz,
        &mut grad[cell.w_xz.clone()],
        None,
    );
    cell.conv_h.backward(
        &p[cell.w_hz.clone()],
        &cache.h_prev,
        &dz,
        &mut grad[cell.w_hz.clone()],
        Some(dh_prev),
    );

    bias_grad(&dr, &mut grad[cell.b_r.clone()], sp);
    cell.conv_x.backward(
        &p[cell.w_xr.clone()],
        &cache.x,
        &dr,
        &mut grad[cell.w_xr.clone()],
        None,
    );
    cell.conv_h.backward(
        &p[cell.w_hr.clone()],
        &cache.h_prev,
        &dr,
        &mut grad[cell.w_hr.clone()],
        Some(dh_prev),
    );
}

/// cGRU over the A-scan sequence followed by the residual regression head.
#[derive(Debug, Clone, PartialEq)]
pub struct CgruCnn {
    pub config: CgruConfig,
    pub cell: CgruCell,
    pub head: Head1d,
    pub layout: Layout,
}

pub struct CgruTape<F> {
    cells: Vec<CellCache<F>>,
    head: HeadCache<F>,
}

impl CgruCnn {
    pub fn new(config: CgruConfig) -> Self {
        let mut layout = Layout::default();
        let h = config.pooled_height();
        let cell = CgruCell::new(
            &mut layout,
            h,
            config.input_channels,
            config.channels,
            config.kernel,
        );
        let head = Head1d::new(&mut layout, config.channels, h, &config.head);
        Self {
            config,
            cell,
            head,
            layout,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.cell.input_len()
    }

    pub fn init<F: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        let mut p = vec![F::zero(); self.layout.len()];
        self.cell.init(&mut p, rng);
        self.head.init(&mut p, rng);
        p
    }

    fn check(&self, p_len: usize, seq_len: usize) -> Result<usize, NeuralError> {
        if p_len != self.layout.len() {
            return Err(NeuralError::ShapeMismatch(format!(
                "expected {} parameters, got {p_len}",
                self.layout.len()
            )));
        }
        let fl = self.frame_len();
        if seq_len == 0 || !seq_len.is_multiple_of(fl) {
            return Err(NeuralError::ShapeMismatch(format!(
                "sequence of {seq_len} values is not a whole number of {fl}-value frames"
            )));
        }
        Ok(seq_len / fl)
    }

    /// Runs the sequence (time-major, pooled frames) from a zero hidden state.
    pub fn forward<F: Scalar>(&self, p: &[F], seq: &[F]) -> Result<F, NeuralError> {
        Ok(self.forward_tape(p, seq)?.0)
    }

    pub fn forward_tape<F: Scalar>(
        &self,
        p: &[F],
        seq: &[F],
    ) -> Result<(F, CgruTape<F>), NeuralError> {
        let steps = self.check(p.len(), seq.len())?;
        let fl = self.frame_len();
        let mut cells: Vec<CellCache<F>> = Vec::with_capacity(steps);
        let zero = vec![F::zero(); self.cell.hidden_len()];
        for t in 0..steps {
            let mut cache = CellCache::default();
            let h_prev = if t == 0 { &zero } else { &cells[t - 1].h };
            cell_forward(
                &self.cell,
                p,
                &seq[t * fl..(t + 1) * fl],
                h_prev,
                &mut cache,
            );
            cells.push(cache);
        }
        let mut head = HeadCache::default();
        let out = self.head.forward(p, &cells[steps - 1].h, &mut head);
        Ok((out, CgruTape { cells, head }))
    }

    pub fn backward<F: Scalar>(&self, p: &[F], tape: &CgruTape<F>, dout: F, grad: &mut [F]) {
        let n = self.cell.hidden_len();
        let mut dh = vec![F::zero(); n];
        self.head.backward(p, &tape.head, dout, grad, &mut dh);
        let mut dh_prev = vec![F::zero(); n];
        for cache in tape.cells.iter().rev() {
            cell_backward(&self.cell, p, cache, &dh, grad, &mut dh_prev);
            std::mem::swap(&mut dh, &mut dh_prev);
        }
    }
}

/// Streaming inference state: the hidden map carried across frames.
#[derive(Debug, Clone)]
pub struct CgruStream<F> {
    hidden: Vec<F>,
    pooled: Vec<F>,
    cell: CellCache<F>,
    head: HeadCache<F>,
    pub frames_seen: usize,
}

impl<F: Scalar> CgruStream<F> {
    pub fn new(model: &CgruCnn) -> Self {
        Self {
            hidden: vec![F::zero(); model.cell.hidden_len()],
            pooled: vec![F::zero(); model.frame_len()],
            cell: CellCache::default(),
            head: HeadCache::default(),
            frames_seen: 0,
        }
    }

    pub fn reset(&mut self) {
        self.hidden.fill(F::zero());
        self.frames_seen = 0;
    }

    pub fn hidden(&self) -> &[F] {
        &self.hidden
    }

    /// Consumes one already pooled frame and returns the force estimate.
    pub fn step_pooled(&mut self, model: &CgruCnn, p: &[F], pooled: &[F]) -> F {
        cell_forward(&model.cell, p, pooled, &self.hidden, &mut self.cell);
        std::mem::swap(&mut self.hidden, &mut self.cell.h);
        self.frames_seen += 1;
        model.head.forward(p, &self.hidden, &mut self.head)
    }

    /// Consumes one raw A-scan.
    pub fn step(&mut self, model: &CgruCnn, p: &[F], raw: &[f32]) -> F {
        let mut pooled = std::mem::take(&mut self.pooled);
        pool_frame(raw, model.config.pool, &mut pooled);
        let out = self.step_pooled(model, p, &pooled);
        self.pooled = pooled;
        out
    }
}
