//! Layer primitives with hand-written backward passes.
//!
//! Tensors are flat, channel-major slices: a 1-D feature map of `c` channels and
//! length `n` is stored as `c * n` values, a 2-D map as `c * h * w`. Convolutions
//! use zero "same" padding of `k / 2` and produce `ceil(n / stride)` outputs.
//! Backward functions accumulate into their gradient buffers.

use super::Scalar;

/// Common interface of 1-D and 2-D convolutions so residual blocks can be shared.
pub trait ConvOp: Copy + Send + Sync {
    fn c_in(&self) -> usize;
    fn c_out(&self) -> usize;
    fn in_spatial(&self) -> usize;
    fn out_spatial(&self) -> usize;
    fn weight_len(&self) -> usize;
    fn weight_shape(&self) -> Vec<usize>;
    /// Adds the convolution of `x` to `y` (no bias).
    fn forward_acc<F: Scalar>(&self, w: &[F], x: &[F], y: &mut [F]);
    /// Accumulates weight and (optionally) input gradients.
    fn backward<F: Scalar>(&self, w: &[F], x: &[F], dy: &[F], dw: &mut [F], dx: Option<&mut [F]>);

    fn in_len(&self) -> usize {
        self.c_in() * self.in_spatial()
    }

    fn out_len(&self) -> usize {
        self.c_out() * self.out_spatial()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub len_in: usize,
}

impl Conv1d {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize, len_in: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel width must be odd");
        assert!(stride >= 1);
        Self {
            c_in,
            c_out,
            kernel,
            stride,
            len_in,
        }
    }

    pub fn len_out(&self) -> usize {
        self.len_in.div_ceil(self.stride)
    }

    /// Output index range `[lo, hi)` whose input tap `o * stride + off` is in bounds.
    fn valid(&self, off: isize) -> (usize, usize) {
        let s = self.stride as isize;
        let n_in = self.len_in as isize;
        let lo = if off < 0 { (-off + s - 1) / s } else { 0 };
        let hi = if n_in - off <= 0 {
            0
        } else {
            (n_in - off + s - 1) / s
        };
        let hi = hi.min(self.len_out() as isize);
        (lo as usize, hi.max(lo) as usize)
    }
}

impl ConvOp for Conv1d {
    fn c_in(&self) -> usize {
        self.c_in
    }

    fn c_out(&self) -> usize {
        self.c_out
    }

    fn in_spatial(&self) -> usize {
        self.len_in
    }

    fn out_spatial(&self) -> usize {
        self.len_out()
    }

    fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel
    }

    fn weight_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.c_in, self.kernel]
    }

    fn forward_acc<F: Scalar>(&self, w: &[F], x: &[F], y: &mut [F]) {
        let (n_in, n_out, k) = (self.len_in, self.len_out(), self.kernel);
        let pad = (k / 2) as isize;
        for co in 0..self.c_out {
            let yrow = &mut y[co * n_out..(co + 1) * n_out];
            for ci in 0..self.c_in {
                let xrow = &x[ci * n_in..(ci + 1) * n_in];
                let wrow = &w[(co * self.c_in + ci) * k..(co * self.c_in + ci + 1) * k];
                for (j, &wv) in wrow.iter().enumerate() {
                    let off = j as isize - pad;
                    let (lo, hi) = self.valid(off);
                    if lo >= hi {
                        continue;
                    }
                    if self.stride == 1 {
                        let start = (lo as isize + off) as usize;
                        for (yo, &xi) in yrow[lo..hi].iter_mut().zip(&xrow[start..start + hi - lo])
                        {
                            *yo += wv * xi;
                        }
                    } else {
                        for o in lo..hi {
                            yrow[o] +=
                                wv * xrow[(o as isize * self.stride as isize + off) as usize];
                        }
                    }
                }
            }
        }
    }

    fn backward<F: Scalar>(
        &self,
        w: &[F],
        x: &[F],
        dy: &[F],
        dw: &mut [F],
        mut dx: Option<&mut [F]>,
    ) {
        let (n_in, n_out, k) = (self.len_in, self.len_out(), self.kernel);
        let pad = (k / 2) as isize;
        let s = self.stride as isize;
        for co in 0..self.c_out {
            let dyrow = &dy[co * n_out..(co + 1) * n_out];
            for ci in 0..self.c_in {
                let xrow = &x[ci * n_in..(ci + 1) * n_in];
                let base = (co * self.c_in + ci) * k;
                for j in 0..k {
                    let off = j as isize - pad;
                    let (lo, hi) = self.valid(off);
                    if lo >= hi {
                        continue;
                    }
                    let wv = w[base + j];
                    if self.stride == 1 {
                        let start = (lo as isize + off) as usize;
                        let xs = &xrow[start..start + hi - lo];
                        let mut acc = F::zero();
                        for (&g, &xi) in dyrow[lo..hi].iter().zip(xs) {
                            acc += g * xi;
                        }
                        dw[base + j] += acc;
                        if let Some(dx) = dx.as_deref_mut() {
                            let dxrow = &mut dx[ci * n_in + start..ci * n_in + start + hi - lo];
                            for (d, &g) in dxrow.iter_mut().zip(&dyrow[lo..hi]) {
                                *d += wv * g;
                            }
                        }
                    } else {
                        let mut acc = F::zero();
                        for o in lo..hi {
                            let i = (o as isize * s + off) as usize;
                            acc += dyrow[o] * xrow[i];
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[ci * n_in + i] += wv * dyrow[o];
                            }
                        }
                        dw[base + j] += acc;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub h_in: usize,
    pub w_in: usize,
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        h_in: usize,
        w_in: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel width must be odd");
        assert!(stride >= 1);
        Self {
            c_in,
            c_out,
            kernel,
            stride,
            h_in,
            w_in,
        }
    }

    pub fn h_out(&self) -> usize {
        self.h_in.div_ceil(self.stride)
    }

    pub fn w_out(&self) -> usize {
        self.w_in.div_ceil(self.stride)
    }

    fn axis(&self, n_in: usize, n_out: usize, off: isize) -> (usize, usize) {
        Conv1d {
            c_in: 1,
            c_out: 1,
            kernel: self.kernel,
            stride: self.stride,
            len_in: n_in,
        }
        .valid(off)
        .clamp_to(n_out)
    }
}

trait ClampTo {
    fn clamp_to(self, n: usize) -> Self;
}

impl ClampTo for (usize, usize) {
    fn clamp_to(self, n: usize) -> Self {
        (self.0.min(n), self.1.min(n))
    }
}

impl ConvOp for Conv2d {
    fn c_in(&self) -> usize {
        self.c_in
    }

    fn c_out(&self) -> usize {
        self.c_out
    }

    fn in_spatial(&self) -> usize {
        self.h_in * self.w_in
    }

    fn out_spatial(&self) -> usize {
        self.h_out() * self.w_out()
    }

    fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel * self.kernel
    }

    fn weight_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.c_in, self.kernel, self.kernel]
    }

    fn forward_acc<F: Scalar>(&self, w: &[F], x: &[F], y: &mut [F]) {
        let (hi_n, wi_n, ho_n, wo_n, k, s) = (
            self.h_in,
            self.w_in,
            self.h_out(),
            self.w_out(),
            self.kernel,
            self.stride,
        );
        let pad = (k / 2) as isize;
        for co in 0..self.c_out {
            let ymap = &mut y[co * ho_n * wo_n..(co + 1) * ho_n * wo_n];
            for ci in 0..self.c_in {
                let xmap = &x[ci * hi_n * wi_n..(ci + 1) * hi_n * wi_n];
                for a in 0..k {
                    let off_h = a as isize - pad;
                    let (oh_lo, oh_hi) = self.axis(hi_n, ho_n, off_h);
                    for b in 0..k {
                        let wv = w[((co * self.c_in + ci) * k + a) * k + b];
                        let off_w = b as isize - pad;
                        let (ow_lo, ow_hi) = self.axis(wi_n, wo_n, off_w);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = (oh as isize * s as isize + off_h) as usize;
                            let yrow = &mut ymap[oh * wo_n..(oh + 1) * wo_n];
                            let xrow = &xmap[ih * wi_n..(ih + 1) * wi_n];
                            if s == 1 {
                                let start = (ow_lo as isize + off_w) as usize;
                                for (yo, &xi) in yrow[ow_lo..ow_hi]
                                    .iter_mut()
                                    .zip(&xrow[start..start + ow_hi - ow_lo])
                                {
                                    *yo += wv * xi;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    yrow[ow] +=
                                        wv * xrow[(ow as isize * s as isize + off_w) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward<F: Scalar>(
        &self,
        w: &[F],
        x: &[F],
        dy: &[F],
        dw: &mut [F],
        mut dx: Option<&mut [F]>,
    ) {
        let (hi_n, wi_n, ho_n, wo_n, k, s) = (
            self.h_in,
            self.w_in,
            self.h_out(),
            self.w_out(),
            self.kernel,
            self.stride,
        );
        let pad = (k / 2) as isize;
        for co in 0..self.c_out {
            let dymap = &dy[co * ho_n * wo_n..(co + 1) * ho_n * wo_n];
            for ci in 0..self.c_in {
                let xmap = &x[ci * hi_n * wi_n..(ci + 1) * hi_n * wi_n];
                for a in 0..k {
                    let off_h = a as isize - pad;
                    let (oh_lo, oh_hi) = self.axis(hi_n, ho_n, off_h);
                    for b in 0..k {
                        let widx = ((co * self.c_in + ci) * k + a) * k + b;
                        let wv = w[widx];
                        let off_w = b as isize - pad;
                        let (ow_lo, ow_hi) = self.axis(wi_n, wo_n, off_w);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let mut acc = F::zero();
                        for oh in oh_lo..oh_hi {
                            let ih = (oh as isize * s as isize + off_h) as usize;
                            let dyrow = &dymap[oh * wo_n..(oh + 1) * wo_n];
                            let xrow = &xmap[ih * wi_n..(ih + 1) * wi_n];
                            for ow in ow_lo..ow_hi {
                                let iw = (ow as isize * s as isize + off_w) as usize;
                                acc += dyrow[ow] * xrow[iw];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[(ci * hi_n + ih) * wi_n + iw] += wv * dyrow[ow];
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
}

/// Fills each channel of `y` with its bias.
pub fn fill_bias<F: Scalar>(y: &mut [F], b: &[F], spatial: usize) {
    for (row, &bv) in y.chunks_exact_mut(spatial).zip(b) {
        row.fill(bv);
    }
}

/// Accumulates the per-channel sum of `dy` into `db`.
pub fn bias_grad<F: Scalar>(dy: &[F], db: &mut [F], spatial: usize) {
    for (row, d) in dy.chunks_exact(spatial).zip(db.iter_mut()) {
        *d += row.iter().copied().sum::<F>();
    }
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub fn relu_inplace<F: Scalar>(x: &mut [F]) {
    for v in x {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// Zeroes gradient entries where the forward activation was clipped.
pub fn relu_backward_inplace<F: Scalar>(activated: &[F], d: &mut [F]) {
    for (g, &a) in d.iter_mut().zip(activated) {
        if a <= F::zero() {
            *g = F::zero();
        }
    }
}

/// Dense layer `y = W x + b` with `W` of shape `[out, in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn forward<F: Scalar>(&self, w: &[F], b: &[F], x: &[F], y: &mut [F]) {
        for (o, yo) in y.iter_mut().enumerate().take(self.n_out) {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = b[o];
            for (&wv, &xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            *yo = acc;
        }
    }

    pub fn backward<F: Scalar>(
        &self,
        w: &[F],
        x: &[F],
        dy: &[F],
        dw: &mut [F],
        db: &mut [F],
        mut dx: Option<&mut [F]>,
    ) {
        for o in 0..self.n_out {
            let g = dy[o];
            db[o] += g;
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            let drow = &mut dw[o * self.n_in..(o + 1) * self.n_in];
            for (d, &xv) in drow.iter_mut().zip(x) {
                *d += g * xv;
            }
            if let Some(dx) = dx.as_deref_mut() {
                for (d, &wv) in dx.iter_mut().zip(row) {
                    *d += g * wv;
                }
            }
        }
    }
}
