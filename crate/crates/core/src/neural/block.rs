use std::ops::Range;

use rand::Rng;

use super::ops::{bias_grad, fill_bias, relu_backward_inplace, relu_inplace, ConvOp};
use super::params::{fill_normal, Layout};
use super::Scalar;

/// `relu(conv2(relu(conv1(x))) + skip(x))` with a 1x1 projection on the skip path.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<C: ConvOp> {
    pub conv1: C,
    pub conv2: C,
    pub skip: C,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    ws: Range<usize>,
    bs: Range<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct BlockCache<F> {
    pub x: Vec<F>,
    pub u1: Vec<F>,
    pub out: Vec<F>,
}

impl<C: ConvOp> ResidualBlock<C> {
    pub fn new(layout: &mut Layout, prefix: &str, conv1: C, conv2: C, skip: C) -> Self {
        assert_eq!(conv1.out_len(), conv2.in_len());
        assert_eq!(conv1.out_len(), skip.out_len());
        Self {
            w1: layout.push(format!("{prefix}.conv1.w"), conv1.weight_shape()),
            b1: layout.push(format!("{prefix}.conv1.b"), vec![conv1.c_out()]),
            w2: layout.push(format!("{prefix}.conv2.w"), conv2.weight_shape()),
            b2: layout.push(format!("{prefix}.conv2.b"), vec![conv2.c_out()]),
            ws: layout.push(format!("{prefix}.skip.w"), skip.weight_shape()),
            bs: layout.push(format!("{prefix}.skip.b"), vec![skip.c_out()]),
            conv1,
            conv2,
            skip,
        }
    }

    pub fn out_len(&self) -> usize {
        self.conv2.out_len()
    }

    pub fn init<F: Scalar, R: Rng + ?Sized>(&self, params: &mut [F], rng: &mut R) {
        let fan1 = (self.conv1.weight_len() / self.conv1.c_out()) as f64;
        let fan2 = (self.conv2.weight_len() / self.conv2.c_out()) as f64;
        let fans = (self.skip.weight_len() / self.skip.c_out()) as f64;
        fill_normal(&mut params[self.w1.clone()], (2.0 / fan1).sqrt(), rng);
        fill_normal(&mut params[self.w2.clone()], 0.5 * (2.0 / fan2).sqrt(), rng);
        fill_normal(&mut params[self.ws.clone()], (1.0 / fans).sqrt(), rng);
    }

    pub fn forward<F: Scalar>(&self, p: &[F], x: &[F], cache: &mut BlockCache<F>) {
        let sp1 = self.conv1.out_spatial();
        cache.x.clear();
        cache.x.extend_from_slice(x);
        cache.u1.resize(self.conv1.out_len(), F::zero());
        fill_bias(&mut cache.u1, &p[self.b1.clone()], sp1);
        self.conv1
            .forward_acc(&p[self.w1.clone()], x, &mut cache.u1);
        relu_inplace(&mut cache.u1);

        let sp2 = self.conv2.out_spatial();
        cache.out.resize(self.conv2.out_len(), F::zero());
        fill_bias(&mut cache.out, &p[self.b2.clone()], sp2);
        self.conv2
            .forward_acc(&p[self.w2.clone()], &cache.u1, &mut cache.out);
        let mut skip = vec![F::zero(); self.skip.out_len()];
        fill_bias(&mut skip, &p[self.bs.clone()], sp2);
        self.skip.forward_acc(&p[self.ws.clone()], x, &mut skip);
        for (o, s) in cache.out.iter_mut().zip(&skip) {
            *o += *s;
        }
        relu_inplace(&mut cache.out);
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        cache: &BlockCache<F>,
        dout: &[F],
        grad: &mut [F],
        mut dx: Option<&mut [F]>,
    ) {
        let mut g = dout.to_vec();
        relu_backward_inplace(&cache.out, &mut g);
        let sp2 = self.conv2.out_spatial();

        bias_grad(&g, &mut grad[self.b2.clone()], sp2);
        let mut du1 = vec![F::zero(); self.conv1.out_len()];
        self.conv2.backward(
            &p[self.w2.clone()],
            &cache.u1,
            &g,
            &mut grad[self.w2.clone()],
            Some(&mut du1),
        );

        bias_grad(&g, &mut grad[self.bs.clone()], sp2);
        self.skip.backward(
            &p[self.ws.clone()],
            &cache.x,
            &g,
            &mut grad[self.ws.clone()],
            dx.as_deref_mut(),
        );

        relu_backward_inplace(&cache.u1, &mut du1);
        bias_grad(&du1, &mut grad[self.b1.clone()], self.conv1.out_spatial());
        self.conv1.backward(
            &p[self.w1.clone()],
            &cache.x,
            &du1,
            &mut grad[self.w1.clone()],
            dx,
        );
    }
}
