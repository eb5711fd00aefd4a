use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::block::{BlockCache, ResidualBlock};
use super::ops::{relu_backward_inplace, relu_inplace, Conv1d, Linear};
use super::params::{fill_normal, Layout};
use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Head1dConfig {
    /// Output channels of the two stride-2 residual blocks.
    pub channels: [usize; 2],
    pub kernel: usize,
    pub hidden: usize,
}

impl Default for Head1dConfig {
    fn default() -> Self {
        Self {
            channels: [8, 8],
            kernel: 3,
            hidden: 32,
        }
    }
}

/// Regression head: two downsampling residual blocks, flatten, two dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Head1d {
    pub blocks: [ResidualBlock<Conv1d>; 2],
    fc1: Linear,
    fc2: Linear,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct HeadCache<F> {
    blocks: [BlockCache<F>; 2],
    hidden: Vec<F>,
}

impl Head1d {
    pub fn new(layout: &mut Layout, c_in: usize, len_in: usize, cfg: &Head1dConfig) -> Self {
        let k = cfg.kernel;
        let mk = |layout: &mut Layout, name: &str, c_prev: usize, c: usize, len: usize| {
            let conv1 = Conv1d::new(c_prev, c, k, 2, len);
            let conv2 = Conv1d::new(c, c, k, 1, conv1.len_out());
            let skip = Conv1d::new(c_prev, c, 1, 2, len);
            ResidualBlock::new(layout, name, conv1, conv2, skip)
        };
        let b0 = mk(layout, "head.block0", c_in, cfg.channels[0], len_in);
        let len1 = b0.conv2.len_out();
        let b1 = mk(
            layout,
            "head.block1",
            cfg.channels[0],
            cfg.channels[1],
            len1,
        );
        let flat = b1.out_len();
        let fc1 = Linear {
            n_in: flat,
            n_out: cfg.hidden,
        };
        let fc2 = Linear {
            n_in: cfg.hidden,
            n_out: 1,
        };
        Self {
            w1: layout.push("head.fc1.w", vec![cfg.hidden, flat]),
            b1: layout.push("head.fc1.b", vec![cfg.hidden]),
            w2: layout.push("head.fc2.w", vec![1, cfg.hidden]),
            b2: layout.push("head.fc2.b", vec![1]),
            blocks: [b0, b1],
            fc1,
            fc2,
        }
    }

    pub fn init<F: Scalar, R: Rng + ?Sized>(&self, params: &mut [F], rng: &mut R) {
        for b in &self.blocks {
            b.init(params, rng);
        }
        fill_normal(
            &mut params[self.w1.clone()],
            (2.0 / self.fc1.n_in as f64).sqrt(),
            rng,
        );
        fill_normal(
            &mut params[self.w2.clone()],
            (1.0 / self.fc2.n_in as f64).sqrt(),
            rng,
        );
    }

    /// Index of the output bias inside the parameter vector.
    pub fn output_bias_index(&self) -> usize {
        self.b2.start
    }

    pub fn forward<F: Scalar>(&self, p: &[F], h: &[F], cache: &mut HeadCache<F>) -> F {
        let [c0, c1] = &mut cache.blocks;
        self.blocks[0].forward(p, h, c0);
        self.blocks[1].forward(p, &c0.out, c1);
        cache.hidden.resize(self.fc1.n_out, F::zero());
        self.fc1.forward(
            &p[self.w1.clone()],
            &p[self.b1.clone()],
            &c1.out,
            &mut cache.hidden,
        );
        relu_inplace(&mut cache.hidden);
        let mut y = [F::zero()];
        self.fc2.forward(
            &p[self.w2.clone()],
            &p[self.b2.clone()],
            &cache.hidden,
            &mut y,
        );
        y[0]
    }

    /// Backpropagates `dout` and accumulates the input gradient into `dh`.
    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        cache: &HeadCache<F>,
        dout: F,
        grad: &mut [F],
        dh: &mut [F],
    ) {
        let mut dhidden = vec![F::zero(); self.fc1.n_out];
        {
            let (dw, db) = split_two(grad, &self.w2, &self.b2);
            self.fc2.backward(
                &p[self.w2.clone()],
                &cache.hidden,
                &[dout],
                dw,
                db,
                Some(&mut dhidden),
            );
        }
        relu_backward_inplace(&cache.hidden, &mut dhidden);
        let mut dflat = vec![F::zero(); self.fc1.n_in];
        {
            let (dw, db) = split_two(grad, &self.w1, &self.b1);
            self.fc1.backward(
                &p[self.w1.clone()],
                &cache.blocks[1].out,
                &dhidden,
                dw,
                db,
                Some(&mut dflat),
            );
        }
        let mut dmid = vec![F::zero(); self.blocks[0].out_len()];
        self.blocks[1].backward(p, &cache.blocks[1], &dflat, grad, Some(&mut dmid));
        self.blocks[0].backward(p, &cache.blocks[0], &dmid, grad, Some(dh));
    }
}

/// Two disjoint mutable sub-slices of `buf`; `a` must lie before `b`.
pub(crate) fn split_two<'a, F>(
    buf: &'a mut [F],
    a: &Range<usize>,
    b: &Range<usize>,
) -> (&'a mut [F], &'a mut [F]) {
    assert!(a.end <= b.start, "ranges must be ordered and disjoint");
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}
