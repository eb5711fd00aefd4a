//! Analytic gradients against central finite differences at f64, shared by the
//! core test suite and the acceptance runner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tipforce_core::neural::{gradient_check, tiny_config, Arch, GradCheck, Model};

pub fn instance(arch: Arch, seed: u64) -> GradCheck {
    let model = Model::new(&tiny_config(arch));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<f64> = model.init(seed, 0.3);
    for v in &mut p {
        *v += rng.gen_range(-0.1..0.1);
    }
    // Positive biases keep the tiny ReLU stacks from dying at init, which
    // would make most of the comparison 0 against 0.
    for (name, r) in model.layout().ranges() {
        if name.ends_with(".b") {
            for v in &mut p[r] {
                *v += 0.2;
            }
        }
    }
    let seq: Vec<f64> = (0..model.frame_len() * model.seq_len())
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    gradient_check(&model, &p, &seq, 0.7, 1e-6).unwrap()
}

/// Every instance must agree and at least three must be mostly alive.
pub fn check(arch: Arch) {
    let mut alive = 0;
    for seed in 0..20 {
        let g = instance(arch, seed);
        assert!(g.max_rel_error < 1e-4, "{arch} seed {seed}: {g:?}");
        if g.live_fraction > 0.5 {
            alive += 1;
        }
        if alive == 3 {
            return;
        }
    }
    panic!("{arch}: fewer than three instances with live gradients");
}
