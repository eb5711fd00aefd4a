use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::{Recording, WindowSet};
use super::model::{Arch, Model};
use super::NeuralError;

/// Per-frame streaming output over a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPredictions {
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
    /// True for predictions made before `seq_len` frames have been seen.
    pub warmup: Vec<bool>,
    pub step_ms: Vec<f64>,
}

impl StreamPredictions {
    /// Prediction/label pairs outside the warm-up period.
    pub fn scored(&self) -> (Vec<f64>, Vec<f64>) {
        self.pred
            .iter()
            .zip(&self.truth)
            .zip(&self.warmup)
            .filter(|(_, &w)| !w)
            .map(|((&p, &t), _)| (p, t))
            .unzip()
    }
}

/// Feeds every frame of `rec` through a fresh stream of `model`.
pub fn stream_predictions(model: &Model, params: &[f32], rec: &Recording) -> StreamPredictions {
    let mut stream = model.stream::<f32>();
    let n = rec.len();
    let mut out = StreamPredictions {
        pred: Vec::with_capacity(n),
        truth: Vec::with_capacity(n),
        warmup: Vec::with_capacity(n),
        step_ms: Vec::with_capacity(n),
    };
    for i in 0..n {
        let t0 = Instant::now();
        let y = stream.step(model, params, rec.frame(i));
        out.step_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        out.pred.push(y as f64);
        out.truth.push(rec.force_n[i] as f64);
        out.warmup.push(i + 1 < model.seq_len());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub arch: Arch,
    pub n_frames: usize,
    pub n_scored: usize,
    pub mae: f64,
    /// `None` when either series has zero variance.
    pub pcc: Option<f64>,
    /// Median single-frame streaming inference time.
    pub it_ms: f64,
    /// Median forward plus backward time per training window.
    pub tt_ms: f64,
}

pub fn mean_abs_error(pred: &[f64], truth: &[f64]) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n
}

/// Pearson correlation; `None` if either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median forward plus backward time over up to `n` windows of `data`.
pub fn time_train_step(
    model: &Model,
    params: &[f32],
    data: &WindowSet,
    n: usize,
) -> Result<f64, NeuralError> {
    let n = n.min(data.len()).max(1);
    let stride = (data.len() / n).max(1);
    let mut grad = vec![0.0f32; model.n_params()];
    let mut times = Vec::with_capacity(n);
    for k in 0..n {
        let i = (k * stride).min(data.len() - 1);
        let t0 = Instant::now();
        model.sample_grad(params, data.window(i), data.label(i), &mut grad)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(&times))
}

/// Streams the held-out recording and reports accuracy and timing.
pub fn evaluate(
    model: &Model,
    params: &[f32],
    rec: &Recording,
) -> Result<(EvalReport, StreamPredictions), NeuralError> {
    if rec.height != model.height() {
        return Err(NeuralError::ShapeMismatch(format!(
            "recording height {} does not match model input {}",
            rec.height,
            model.height()
        )));
    }
    if params.len() != model.n_params() {
        return Err(NeuralError::ShapeMismatch(format!(
            "expected {} parameters, got {}",
            model.n_params(),
            params.len()
        )));
    }
    let preds = stream_predictions(model, params, rec);
    let (p, t) = preds.scored();
    let windows = WindowSet::new(
        &rec.truncated(rec.len().min(2000)),
        model.pool(),
        model.seq_len(),
    )?;
    let report = EvalReport {
        arch: model.arch(),
        n_frames: rec.len(),
        n_scored: p.len(),
        mae: mean_abs_error(&p, &t),
        pcc: pearson(&p, &t),
        it_ms: median(&preds.step_ms),
        tt_ms: time_train_step(model, params, &windows, 64)?,
    };
    Ok((report, preds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_anticorrelated_predictors() {
        let y: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(mean_abs_error(&y, &y), 0.0);
        assert!((pearson(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pearson(&neg, &y).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_truth_has_no_correlation() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]), None);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
