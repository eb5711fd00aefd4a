use serde::{Deserialize, Serialize};

use super::operator::Operator;
use super::session::{run_collaborative, SessionConfig, StopReason};
use super::trace::InsertionTrace;
use super::ControlError;
use crate::estimator::TipForceEstimator;
use crate::phantom::{MaterialGroup, PhantomSpec};

pub const CANDIDATE_GAINS: [f64; 3] = [0.5, 1.0, 2.0];

/// Floor on the felt-force spread, standing in for perception noise.
const PERCEPTION_FLOOR_N: f64 = 0.05;
/// Samples this close to the top of a layer are transitional and skipped.
const SETTLE_MM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainTrial {
    pub alpha: f64,
    pub snr: f64,
    pub stalled: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainChoice {
    pub alpha: f64,
    pub trials: Vec<GainTrial>,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    Some(v[v.len() / 2])
}

/// Felt contrast between settled tissue and gelatin samples over the spread
/// of the gelatin samples.
pub fn trigger_snr(trace: &InsertionTrace, phantom: &PhantomSpec, alpha: f64) -> f64 {
    let mut tissue = Vec::new();
    let mut gel = Vec::new();
    for s in &trace.samples {
        let layer = phantom.layer_at(s.depth_mm);
        if s.depth_mm - layer.start_mm < SETTLE_MM {
            continue;
        }
        match layer.material.group() {
            MaterialGroup::Tissue => tissue.push(alpha * s.f_tip_est_n),
            MaterialGroup::Gelatin => gel.push(alpha * s.f_tip_est_n),
            MaterialGroup::Skin => {}
        }
    }
    let n = gel.len() as f64;
    let (Some(t), Some(g)) = (median(&mut tissue), median(&mut gel.clone())) else {
        return 0.0;
    };
    let mean = gel.iter().sum::<f64>() / n;
    let var = gel.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (t - g) / (var + PERCEPTION_FLOOR_N * PERCEPTION_FLOOR_N).sqrt()
}

/// Three practice insertions, one per candidate gain; the best non-stalling
/// trigger SNR wins and ties go to the smaller gain. Operators with their own
/// preference (remote humans) skip the practice.
pub fn choose_gain(
    phantom: &PhantomSpec,
    operator: &mut dyn Operator,
    make_estimator: &dyn Fn() -> Box<dyn TipForceEstimator>,
    config: &SessionConfig,
    first_insertion: u64,
) -> Result<GainChoice, ControlError> {
    if let Some(alpha) = operator.preferred_alpha() {
        return Ok(GainChoice {
            alpha,
            trials: Vec::new(),
        });
    }
    let mut trials = Vec::with_capacity(CANDIDATE_GAINS.len());
    for (k, &alpha) in CANDIDATE_GAINS.iter().enumerate() {
        let mut cfg = *config;
        cfg.controller.alpha = alpha;
        let (trace, reason) = run_collaborative(
            phantom,
            operator,
            make_estimator(),
            &cfg,
            first_insertion + k as u64,
        )?;
        let stalled = reason != StopReason::DepthReached;
        let snr = trigger_snr(&trace, phantom, alpha);
        trials.push(GainTrial {
            alpha,
            snr,
            stalled,
            score: if stalled { 0.0 } else { snr.max(0.0) },
        });
    }
    let mut best = trials[0];
    for t in &trials[1..] {
        if t.score > best.score {
            best = *t;
        }
    }
    Ok(GainChoice {
        alpha: best.alpha,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{ConstantForce, RemoteLink, RemoteOperator};
    use crate::estimator::TrueForce;
    use crate::phantom::default_phantoms;

    #[test]
    fn remote_operator_keeps_its_own_gain() {
        let link = RemoteLink::new();
        link.set_alpha(2.0);
        let mut op = RemoteOperator::new(link);
        let p = &default_phantoms(1)[0];
        let choice = choose_gain(
            p,
            &mut op,
            &|| Box::new(TrueForce),
            &SessionConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(choice.alpha, 2.0);
        assert!(choice.trials.is_empty());
    }

    #[test]
    fn constant_force_operator_picks_a_gain_that_keeps_moving() {
        let p = &default_phantoms(3)[1];
        let mut op = ConstantForce { f_handle_n: 3.5 };
        let cfg = SessionConfig {
            stall_timeout_s: 3.0,
            ..Default::default()
        };
        let choice = choose_gain(p, &mut op, &|| Box::new(TrueForce), &cfg, 100).unwrap();
        let max_cf = p
            .layers
            .iter()
            .filter(|l| l.material.is_tissue())
            .map(|l| l.cutting_force_n)
            .fold(0.0, f64::max);
        assert!(choice.alpha * max_cf < 3.5, "{choice:?}");
        let again = choose_gain(p, &mut op, &|| Box::new(TrueForce), &cfg, 100).unwrap();
        assert_eq!(again, choice);
    }
}
