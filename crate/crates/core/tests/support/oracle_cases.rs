//! Forward passes checked against plain nested-loop references in f64.
//!
//! Shared by the core test suite and the acceptance runner; each check panics
//! on the first mismatch.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tipforce_core::neural::ops::{Conv1d, Conv2d, ConvOp};
use tipforce_core::neural::{
    BlockCache, CgruCell, CgruCnn, CgruConfig, Head1dConfig, Layout, ResNet2d, ResNetConfig,
    ResidualBlock,
};

const INSTANCES: u64 = 100;
const TOL: f64 = 1e-12;

fn rng(i: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x0ac1e + i)
}

fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn close(a: &[f64], b: &[f64], what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!(
            (x - y).abs() <= TOL * y.abs().max(1.0),
            "{what}[{i}]: {x} vs {y}"
        );
    }
}

fn range(layout: &Layout, name: &str) -> Range<usize> {
    layout
        .ranges()
        .into_iter()
        .find(|(n, _)| n == name)
        .unwrap_or_else(|| panic!("no tensor {name}"))
        .1
}

// ---- references ----

fn conv1d_ref(
    x: &[f64],
    c_in: usize,
    n: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    s: usize,
) -> Vec<f64> {
    let n_out = n.div_ceil(s);
    let pad = (k / 2) as isize;
    let mut y = vec![0.0; c_out * n_out];
    for co in 0..c_out {
        for o in 0..n_out {
            let mut acc = 0.0;
            for ci in 0..c_in {
                for j in 0..k {
                    let i = (o * s) as isize + j as isize - pad;
                    if i >= 0 && (i as usize) < n {
                        acc += w[(co * c_in + ci) * k + j] * x[ci * n + i as usize];
                    }
                }
            }
            y[co * n_out + o] = acc;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv2d_ref(
    x: &[f64],
    c_in: usize,
    h: usize,
    wd: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    s: usize,
) -> Vec<f64> {
    let (ho, wo) = (h.div_ceil(s), wd.div_ceil(s));
    let pad = (k / 2) as isize;
    let mut y = vec![0.0; c_out * ho * wo];
    for co in 0..c_out {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = 0.0;
                for ci in 0..c_in {
                    for a in 0..k {
                        for b in 0..k {
                            let ih = (oh * s) as isize + a as isize - pad;
                            let iw = (ow * s) as isize + b as isize - pad;
                            if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                                acc += w[((co * c_in + ci) * k + a) * k + b]
                                    * x[(ci * h + ih as usize) * wd + iw as usize];
                            }
                        }
                    }
                }
                y[(co * ho + oh) * wo + ow] = acc;
            }
        }
    }
    y
}

fn add_bias(y: &mut [f64], b: &[f64]) {
    let sp = y.len() / b.len();
    for (c, bv) in b.iter().enumerate() {
        for v in &mut y[c * sp..(c + 1) * sp] {
            *v += bv;
        }
    }
}

fn relu(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A convolution with explicit geometry, run through the reference.
#[derive(Clone, Copy)]
enum Geo {
    D1 { n: usize },
    D2 { h: usize, w: usize },
}

fn conv_ref(
    geo: Geo,
    x: &[f64],
    c_in: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    s: usize,
) -> (Vec<f64>, Geo) {
    match geo {
        Geo::D1 { n } => (
            conv1d_ref(x, c_in, n, w, c_out, k, s),
            Geo::D1 { n: n.div_ceil(s) },
        ),
        Geo::D2 { h, w: wd } => (
            conv2d_ref(x, c_in, h, wd, w, c_out, k, s),
            Geo::D2 {
                h: h.div_ceil(s),
                w: wd.div_ceil(s),
            },
        ),
    }
}

/// relu(conv2(relu(conv1 x + b1)) + b2 + skip x + bs), parameters by name.
#[allow(clippy::too_many_arguments)]
fn block_ref(
    p: &[f64],
    layout: &Layout,
    prefix: &str,
    x: &[f64],
    geo: Geo,
    c_in: usize,
    c: usize,
    k: usize,
    s: usize,
) -> (Vec<f64>, Geo) {
    let t = |n: &str| &p[range(layout, &format!("{prefix}.{n}"))];
    let (mut u, g1) = conv_ref(geo, x, c_in, t("conv1.w"), c, k, s);
    add_bias(&mut u, t("conv1.b"));
    relu(&mut u);
    let (mut y, g2) = conv_ref(g1, &u, c, t("conv2.w"), c, k, 1);
    add_bias(&mut y, t("conv2.b"));
    let (mut sk, _) = conv_ref(geo, x, c_in, t("skip.w"), c, 1, s);
    add_bias(&mut sk, t("skip.b"));
    for (a, b) in y.iter_mut().zip(&sk) {
        *a += b;
    }
    relu(&mut y);
    (y, g2)
}

fn linear_ref(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + (0..x.len()).map(|i| w[o * x.len() + i] * x[i]).sum::<f64>())
        .collect()
}

fn cell_ref(
    p: &[f64],
    layout: &Layout,
    x: &[f64],
    h: &[f64],
    n: usize,
    c_in: usize,
    c: usize,
    k: usize,
) -> Vec<f64> {
    let t = |name: &str| &p[range(layout, name)];
    let g = Geo::D1 { n };
    let gate = |wh: &str, wx: &str, b: &str, hin: &[f64]| {
        let (mut a, _) = conv_ref(g, hin, c, t(wh), c, k, 1);
        let (bx, _) = conv_ref(g, x, c_in, t(wx), c, k, 1);
        for (u, v) in a.iter_mut().zip(&bx) {
            *u += v;
        }
        add_bias(&mut a, t(b));
        a
    };
    let z: Vec<f64> = gate("cgru.w_hz", "cgru.w_xz", "cgru.b_z", h)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = gate("cgru.w_hr", "cgru.w_xr", "cgru.b_r", h)
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = gate("cgru.w_h", "cgru.w_x", "cgru.b", &rh)
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..h.len())
        .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
        .collect()
}

fn head_ref(
    p: &[f64],
    layout: &Layout,
    hmap: &[f64],
    c: usize,
    n: usize,
    cfg: &Head1dConfig,
) -> f64 {
    let (a, g) = block_ref(
        p,
        layout,
        "head.block0",
        hmap,
        Geo::D1 { n },
        c,
        cfg.channels[0],
        cfg.kernel,
        2,
    );
    let (b, _) = block_ref(
        p,
        layout,
        "head.block1",
        &a,
        g,
        cfg.channels[0],
        cfg.channels[1],
        cfg.kernel,
        2,
    );
    let t = |name: &str| &p[range(layout, name)];
    let mut hid = linear_ref(t("head.fc1.w"), t("head.fc1.b"), &b);
    relu(&mut hid);
    linear_ref(t("head.fc2.w"), t("head.fc2.b"), &hid)[0]
}

// ---- checks ----

pub fn conv1d_matches_reference() {
    for i in 0..INSTANCES {
        let mut r = rng(i);
        let (c_in, c_out) = (r.gen_range(1..4), r.gen_range(1..4));
        let k = [1, 3, 5, 7][r.gen_range(0..4)];
        let s = r.gen_range(1..4);
        let n = r.gen_range(1..24);
        let conv = Conv1d::new(c_in, c_out, k, s, n);
        let w = randv(&mut r, conv.weight_len());
        let x = randv(&mut r, conv.in_len());
        let mut y = vec![0.0; conv.out_len()];
        conv.forward_acc(&w, &x, &mut y);
        close(&y, &conv1d_ref(&x, c_in, n, &w, c_out, k, s), "conv1d");
    }
}

pub fn conv2d_matches_reference() {
    for i in 0..INSTANCES {
        let mut r = rng(1000 + i);
        let (c_in, c_out) = (r.gen_range(1..4), r.gen_range(1..4));
        let k = [1, 3, 5][r.gen_range(0..3)];
        let s = r.gen_range(1..4);
        let (h, w_) = (r.gen_range(1..14), r.gen_range(1..14));
        let conv = Conv2d::new(c_in, c_out, k, s, h, w_);
        let w = randv(&mut r, conv.weight_len());
        let x = randv(&mut r, conv.in_len());
        let mut y = vec![0.0; conv.out_len()];
        conv.forward_acc(&w, &x, &mut y);
        close(&y, &conv2d_ref(&x, c_in, h, w_, &w, c_out, k, s), "conv2d");
    }
}

pub fn residual_blocks_match_reference() {
    for i in 0..INSTANCES {
        let mut r = rng(2000 + i);
        let (c_in, c) = (r.gen_range(1..4), r.gen_range(1..4));
        let k = [1, 3, 5][r.gen_range(0..3)];
        let s = r.gen_range(1..3);
        let mut cache = BlockCache::default();
        if i % 2 == 0 {
            let n = r.gen_range(2..20);
            let c1 = Conv1d::new(c_in, c, k, s, n);
            let mut layout = Layout::default();
            let block = ResidualBlock::new(
                &mut layout,
                "b",
                c1,
                Conv1d::new(c, c, k, 1, c1.len_out()),
                Conv1d::new(c_in, c, 1, s, n),
            );
            let p = randv(&mut r, layout.len());
            let x = randv(&mut r, c_in * n);
            block.forward(&p, &x, &mut cache);
            let (want, _) = block_ref(&p, &layout, "b", &x, Geo::D1 { n }, c_in, c, k, s);
            close(&cache.out, &want, "block1d");
        } else {
            let (h, w) = (r.gen_range(2..10), r.gen_range(2..10));
            let c1 = Conv2d::new(c_in, c, k, s, h, w);
            let mut layout = Layout::default();
            let block = ResidualBlock::new(
                &mut layout,
                "b",
                c1,
                Conv2d::new(c, c, k, 1, c1.h_out(), c1.w_out()),
                Conv2d::new(c_in, c, 1, s, h, w),
            );
            let p = randv(&mut r, layout.len());
            let x = randv(&mut r, c_in * h * w);
            block.forward(&p, &x, &mut cache);
            let (want, _) = block_ref(&p, &layout, "b", &x, Geo::D2 { h, w }, c_in, c, k, s);
            close(&cache.out, &want, "block2d");
        }
    }
}

pub fn cgru_cell_matches_reference() {
    for i in 0..INSTANCES {
        let mut r = rng(3000 + i);
        let (n, c_in, c) = (r.gen_range(1..20), r.gen_range(1..3), r.gen_range(1..4));
        let k = [1, 3, 5, 7][r.gen_range(0..4)];
        let mut layout = Layout::default();
        let cell = CgruCell::new(&mut layout, n, c_in, c, k);
        let p = randv(&mut r, layout.len());
        let x = randv(&mut r, c_in * n);
        let h = randv(&mut r, c * n);
        let got = cell.step(&p, &x, &h).unwrap();
        close(&got, &cell_ref(&p, &layout, &x, &h, n, c_in, c, k), "cell");
    }
}

pub fn cgru_model_matches_reference() {
    for i in 0..INSTANCES {
        let mut r = rng(4000 + i);
        let cfg = CgruConfig {
            height: r.gen_range(4..24),
            pool: 1,
            input_channels: 1,
            channels: r.gen_range(1..4),
            kernel: [3, 5, 7][r.gen_range(0..3)],
            seq_len: r.gen_range(1..6),
            head: Head1dConfig {
                channels: [r.gen_range(1..4), r.gen_range(1..4)],
                kernel: 3,
                hidden: r.gen_range(1..6),
            },
        };
        let model = CgruCnn::new(cfg);
        let p = randv(&mut r, model.layout.len());
        let n = cfg.height;
        let seq = randv(&mut r, n * cfg.seq_len);
        let got = model.forward(&p, &seq).unwrap();
        let mut h = vec![0.0; cfg.channels * n];
        for t in 0..cfg.seq_len {
            h = cell_ref(
                &p,
                &model.layout,
                &seq[t * n..(t + 1) * n],
                &h,
                n,
                1,
                cfg.channels,
                cfg.kernel,
            );
        }
        let want = head_ref(&p, &model.layout, &h, cfg.channels, n, &cfg.head);
        close(&[got], &[want], "cgru");
    }
}

pub fn resnet_model_matches_reference() {
    for i in 0..INSTANCES {
        let mut r = rng(5000 + i);
        let cfg = ResNetConfig {
            height: r.gen_range(4..20),
            pool: 1,
            seq_len: r.gen_range(2..12),
            stem_channels: r.gen_range(1..4),
            stem_stride: r.gen_range(1..3),
            channels: [
                r.gen_range(1..4),
                r.gen_range(1..4),
                r.gen_range(1..4),
                r.gen_range(1..4),
            ],
            strides: [r.gen_range(1..3), r.gen_range(1..3), 1, r.gen_range(1..3)],
            kernel: [1, 3, 5][r.gen_range(0..3)],
        };
        let model = ResNet2d::new(cfg);
        let p = randv(&mut r, model.layout.len());
        let (h, t) = (cfg.height, cfg.seq_len);
        let seq = randv(&mut r, h * t);
        let got = model.forward(&p, &seq).unwrap();

        let mut x = vec![0.0; h * t];
        for ti in 0..t {
            for hi in 0..h {
                x[hi * t + ti] = seq[ti * h + hi];
            }
        }
        let l = &model.layout;
        let k = cfg.kernel;
        let (mut a, mut g) = conv_ref(
            Geo::D2 { h, w: t },
            &x,
            1,
            &p[range(l, "stem.w")],
            cfg.stem_channels,
            k,
            cfg.stem_stride,
        );
        add_bias(&mut a, &p[range(l, "stem.b")]);
        relu(&mut a);
        let mut c_prev = cfg.stem_channels;
        for b in 0..4 {
            (a, g) = block_ref(
                &p,
                l,
                &format!("block{b}"),
                &a,
                g,
                c_prev,
                cfg.channels[b],
                k,
                cfg.strides[b],
            );
            c_prev = cfg.channels[b];
        }
        let sp = match g {
            Geo::D2 { h, w } => h * w,
            Geo::D1 { .. } => unreachable!(),
        };
        let gap: Vec<f64> = a
            .chunks(sp)
            .map(|c| c.iter().sum::<f64>() / sp as f64)
            .collect();
        let want = linear_ref(&p[range(l, "fc.w")], &p[range(l, "fc.b")], &gap)[0];
        close(&[got], &[want], "resnet");
    }
}
