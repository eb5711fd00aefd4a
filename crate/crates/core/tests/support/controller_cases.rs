//! Closed-loop behaviour of the admittance controller inside full sessions,
//! shared by the core test suite and the acceptance runner.

use tipforce_core::control::{
    run_collaborative, ConstantForce, ControllerConfig, InsertionContext, InsertionTrace,
    Observation, Operator, OperatorCommand, PiController, ReactiveOperator, SessionConfig,
    StopReason,
};
use tipforce_core::estimator::TrueForce;
use tipforce_core::phantom::default_phantoms;
use tipforce_core::{Material, PhantomSpec, TissueLayer};

fn gelatin(depth: f64, cf: f64) -> PhantomSpec {
    PhantomSpec {
        name: "gel".into(),
        seed: 3,
        layers: vec![TissueLayer {
            material: Material::Gelatin,
            start_mm: 0.0,
            end_mm: depth,
            cutting_force_n: cf,
            stiffness_n_per_mm: 0.3,
            rupture_force_n: cf + 0.1,
            friction_slope_n_per_mm: [-0.35, 0.05],
        }],
    }
}

fn velocity(trace: &InsertionTrace, from: usize, to: usize) -> f64 {
    let a = &trace.samples[from];
    let b = &trace.samples[to];
    (b.depth_mm - a.depth_mm) / (b.t_s - a.t_s)
}

pub fn equilibrium_velocity_matches_the_integral_gain() {
    for (f_h, alpha, cf, k_i) in [
        (3.0, 1.0, 0.4, 2.0),
        (2.0, 2.0, 0.3, 2.0),
        (1.5, 0.5, 0.5, 3.0),
        (4.0, 1.0, 0.45, 1.0),
    ] {
        let cfg = SessionConfig {
            controller: ControllerConfig {
                alpha,
                k_i,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut op = ConstantForce { f_handle_n: f_h };
        let (trace, reason) =
            run_collaborative(&gelatin(80.0, cf), &mut op, Box::new(TrueForce), &cfg, 0).unwrap();
        assert_eq!(reason, StopReason::DepthReached);
        let n = trace.len();
        let v = velocity(&trace, n - 201, n - 1);
        let expected = k_i * (f_h - alpha * cf);
        assert!(
            (v - expected).abs() / expected < 0.02,
            "F_H {f_h}, alpha {alpha}: v {v}, expected {expected}"
        );
    }
}

/// Pushes hard, then eases off below the felt resistance at `release_mm`.
struct EaseOff {
    release_mm: f64,
    released_at: Option<f64>,
}

impl Operator for EaseOff {
    fn name(&self) -> String {
        "ease-off".into()
    }

    fn reset(&mut self, _: &InsertionContext) {
        self.released_at = None;
    }

    fn step(&mut self, obs: &Observation) -> OperatorCommand {
        if obs.depth_mm >= self.release_mm && self.released_at.is_none() {
            self.released_at = Some(obs.t_s);
        }
        let f_handle_n = if self.released_at.is_some() { 0.5 } else { 3.0 };
        OperatorCommand {
            f_handle_n,
            trigger: false,
            stop: self.released_at.is_some_and(|t| obs.t_s > t + 2.0),
        }
    }
}

pub fn clamped_error_halts_the_needle_within_a_second() {
    for plant_tau_s in [0.0, 0.02] {
        let cfg = SessionConfig {
            controller: ControllerConfig {
                alpha: 2.0,
                plant_tau_s,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut op = EaseOff {
            release_mm: 20.0,
            released_at: None,
        };
        let (trace, reason) =
            run_collaborative(&gelatin(80.0, 0.4), &mut op, Box::new(TrueForce), &cfg, 0).unwrap();
        assert_eq!(reason, StopReason::OperatorStop);
        let t0 = op.released_at.unwrap();
        let i = trace
            .samples
            .iter()
            .position(|s| s.t_s >= t0 + 1.0)
            .unwrap();
        let clamp = &trace.samples[i];
        assert!(2.0 * clamp.f_tip_true_n >= clamp.f_handle_n);
        let v = velocity(&trace, i, trace.len() - 1);
        assert!(v < 0.01, "tau {plant_tau_s}: v {v}");
        assert!(trace.samples[i..].iter().all(|s| s.e_f_n == 0.0));
    }
}

pub fn pi_law_stops_when_feedback_exceeds_handle_force() {
    for plant_tau_s in [0.0, 0.02] {
        let mut pi = PiController::new(ControllerConfig {
            plant_tau_s,
            ..Default::default()
        });
        for _ in 0..400 {
            pi.step(2.0, 0.0);
        }
        let mut moved_late = 0.0;
        for k in 0..400 {
            let dx = pi.step(2.0, 2.5).dx_mm;
            if k >= 200 {
                moved_late += dx;
            }
        }
        // Average velocity over the second second after the clamp engages.
        assert!(moved_late < 0.01, "tau {plant_tau_s}: {moved_late} mm");
    }
}

pub fn randomized_collaborative_ticks_never_retract() {
    let mut ticks = 0;
    for (k, p) in default_phantoms(21).iter().enumerate() {
        for alpha in [0.5, 2.0] {
            let cfg = SessionConfig {
                controller: ControllerConfig {
                    alpha,
                    ..Default::default()
                },
                seed: 21,
                ..Default::default()
            };
            let mut op = ReactiveOperator::persona(21, k as u64);
            let (trace, _) =
                run_collaborative(p, &mut op, Box::new(TrueForce), &cfg, k as u64).unwrap();
            for w in trace.samples.windows(2) {
                assert!(w[1].depth_mm >= w[0].depth_mm);
            }
            ticks += trace.len();
        }
    }
    assert!(ticks >= 10_000, "only {ticks} ticks");
}
