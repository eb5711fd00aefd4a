use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::dataset::WindowSet;
use super::model::{Arch, Model};
use super::NeuralError;
use crate::exec::Exec;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub val_fraction: f64,
    /// Training windows drawn (without replacement) per epoch; 0 uses all.
    pub windows_per_epoch: usize,
    /// Evenly spaced validation windows scored per epoch; 0 uses all.
    pub val_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 128,
            adam: AdamConfig::default(),
            seed: 0,
            val_fraction: 0.1,
            windows_per_epoch: 4096,
            val_windows: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let ok = self.epochs > 0
            && self.batch > 0
            && self.adam.lr > 0.0
            && self.adam.eps > 0.0
            && (0.0..1.0).contains(&self.adam.beta1)
            && (0.0..1.0).contains(&self.adam.beta2)
            && self.val_fraction > 0.0
            && self.val_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(NeuralError::Dataset(format!(
                "invalid training configuration: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub arch: Arch,
    pub params: Vec<f32>,
    pub history: Vec<EpochStats>,
    pub train_windows: usize,
    pub val_windows: usize,
}

impl TrainOutcome {
    pub fn final_val_mae(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |s| s.val_mae)
    }

    pub fn final_train_mse(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |s| s.train_mse)
    }
}

fn spaced(range: std::ops::Range<usize>, max: usize) -> Vec<usize> {
    let n = range.len();
    if max == 0 || n <= max {
        return range.collect();
    }
    (0..max).map(|k| range.start + k * n / max).collect()
}

/// Mean squared and mean absolute error of `model` over the given windows.
pub fn score(
    model: &Model,
    params: &[f32],
    data: &WindowSet,
    idx: &[usize],
    exec: Exec,
) -> Result<(f64, f64), NeuralError> {
    let errs = exec.map(idx, |&i| {
        model
            .forward(params, data.window(i))
            .map(|y| y as f64 - data.label(i) as f64)
    });
    let mut se = 0.0;
    let mut ae = 0.0;
    for e in errs {
        let e = e?;
        se += e * e;
        ae += e.abs();
    }
    let n = idx.len().max(1) as f64;
    Ok((se / n, ae / n))
}

/// Mini-batch Adam on the MSE loss. Per-sample gradients may be computed in
/// parallel; they are always summed in index order so results do not depend
/// on the executor.
pub fn train(
    model: &Model,
    data: &WindowSet,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome, NeuralError> {
    cfg.validate()?;
    if data.frame_len != model.frame_len() || data.seq_len != model.seq_len() {
        return Err(NeuralError::ShapeMismatch(format!(
            "dataset windows are {}x{}, model expects {}x{}",
            data.seq_len,
            data.frame_len,
            model.seq_len(),
            model.frame_len()
        )));
    }
    let (tr, va) = data.split(cfg.val_fraction);
    if tr.is_empty() || va.is_empty() {
        return Err(NeuralError::Dataset(
            "split leaves an empty training or validation set".into(),
        ));
    }
    let n_params = model.n_params();
    let mut params: Vec<f32> = model.init(cfg.seed, data.label_mean(tr.clone()));
    let mut opt = Adam::new(cfg.adam, n_params);
    let val_idx = spaced(va.clone(), cfg.val_windows);
    let mut order: Vec<usize> = tr.clone().collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0f64; n_params];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, epoch as u64));
        let take = if cfg.windows_per_epoch == 0 {
            order.len()
        } else {
            cfg.windows_per_epoch.min(order.len())
        };
        let mut loss_sum = 0.0;
        for (b, batch) in order[..take].chunks(cfg.batch).enumerate() {
            let per_sample = exec.map(batch, |&i| {
                let mut g = vec![0.0f32; n_params];
                model
                    .sample_grad(&params, data.window(i), data.label(i), &mut g)
                    .map(|l| (l as f64, g))
            });
            grad.fill(0.0);
            let mut batch_loss = 0.0;
            for r in per_sample {
                let (l, g) = r?;
                batch_loss += l;
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += *v as f64;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            batch_loss *= inv;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(NeuralError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            for g in grad.iter_mut() {
                *g *= inv;
            }
            opt.step(&mut params, &grad);
            loss_sum += batch_loss * batch.len() as f64;
        }
        let (val_mse, val_mae) = score(model, &params, data, &val_idx, exec)?;
        let stats = EpochStats {
            epoch,
            train_mse: loss_sum / take as f64,
            val_mse,
            val_mae,
        };
        log::debug!(
            "{} epoch {epoch}: train mse {:.5}, val mae {:.4}",
            model.arch(),
            stats.train_mse,
            stats.val_mae
        );
        history.push(stats);
    }
    Ok(TrainOutcome {
        arch: model.arch(),
        params,
        history,
        train_windows: tr.len(),
        val_windows: val_idx.len(),
    })
}

/// Picks the architecture with the lowest validation MAE; ties keep the earlier entry.
pub fn select_best(candidates: &[(Arch, f64)]) -> Option<Arch> {
    candidates
        .iter()
        .filter(|(_, mae)| mae.is_finite())
        .fold(None, |best: Option<(Arch, f64)>, &(a, m)| match best {
            Some((_, bm)) if bm <= m => best,
            _ => Some((a, m)),
        })
        .map(|(a, _)| a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_prefers_lower_mae() {
        assert_eq!(
            select_best(&[(Arch::Resnet, 0.2), (Arch::Cgru, 0.1)]),
            Some(Arch::Cgru)
        );
        assert_eq!(
            select_best(&[(Arch::Resnet, 0.1), (Arch::Cgru, 0.1)]),
            Some(Arch::Resnet)
        );
        assert_eq!(
            select_best(&[(Arch::Resnet, f64::NAN), (Arch::Cgru, 3.0)]),
            Some(Arch::Cgru)
        );
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn spaced_indices_cover_range() {
        assert_eq!(spaced(10..15, 0), vec![10, 11, 12, 13, 14]);
        assert_eq!(spaced(0..100, 4), vec![0, 25, 50, 75]);
    }
}
