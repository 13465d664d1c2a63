//! Mini-batched Adam training with validation-based early stopping.

use std::time::Instant;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, backward, forward, forward_cached, init_params, AdamConfig, AdamState,
    ModelConfig, Params};
use crate::dsp::{apply_mask, MagnitudeSpectrogram};
use crate::error::{Error, Result};
use crate::loss::{emphasized_loss, mask_gradient, LossConfig};
use crate::preemphasis::EmphasisWeights;

/// One training utterance: normalized log-magnitude features plus the noisy
/// and clean magnitude spectra the loss is computed from.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub features: Array2<f64>,
    pub noisy_mag: MagnitudeSpectrogram,
    pub clean_mag: MagnitudeSpectrogram,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            max_epochs: 200,
            patience: 15,
            adam: AdamConfig::default(),
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience < 1 || self.max_epochs < 1 {
            return Err(Error::Config("patience and max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_so_far: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-indexed epoch whose validation loss was lowest.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

/// Patience counter: stop once `patience` consecutive epochs fail to
/// strictly improve on the best validation loss.
#[derive(Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    streak: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            streak: 0,
        }
    }

    /// Returns (is_new_best, should_stop) for the 1-indexed epoch.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.streak = 0;
            (true, false)
        } else {
            self.streak += 1;
            (false, self.streak >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Loss (and optionally gradients) of one utterance under the configured
/// loss variant.
fn utterance_loss(
    params: &Params,
    mcfg: &ModelConfig,
    example: &TrainExample,
    lcfg: &LossConfig,
    weights: Option<&EmphasisWeights>,
    with_grads: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if with_grads {
        let (mask, cache) = forward_cached(&example.features, params, mcfg)?;
        let est = apply_mask(&mask, &example.noisy_mag)?;
        let loss = emphasized_loss(&est, &example.clean_mag, weights, lcfg)?;
        let mg = mask_gradient(&loss.gradient, &example.noisy_mag)?;
        let grads = backward(&cache, params, mcfg, &mg)?;
        Ok((loss.value, Some(grads)))
    } else {
        let mask = forward(&example.features, params, mcfg)?;
        let est = apply_mask(&mask, &example.noisy_mag)?;
        let loss = emphasized_loss(&est, &example.clean_mag, weights, lcfg)?;
        Ok((loss.value, None))
    }
}

fn mean_set_loss(
    params: &Params,
    mcfg: &ModelConfig,
    set: &[TrainExample],
    lcfg: &LossConfig,
    weights: Option<&EmphasisWeights>,
) -> Result<f64> {
    let mut acc = 0.0;
    for ex in set {
        acc += utterance_loss(params, mcfg, ex, lcfg, weights, false)?.0;
    }
    Ok(acc / set.len() as f64)
}

/// Train the mask estimator, returning the parameters from the best
/// validation epoch and the per-epoch history.
pub fn train(
    train_set: &[TrainExample],
    val_set: &[TrainExample],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    lcfg: &LossConfig,
    weights: Option<&EmphasisWeights>,
) -> Result<(Params, TrainHistory)> {
    tcfg.validate()?;
    lcfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    for ex in train_set.iter().chain(val_set) {
        if ex.features.nrows() != mcfg.num_bins {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bins", mcfg.num_bins),
                got: format!("{} bins", ex.features.nrows()),
            });
        }
    }

    let mut params = init_params(mcfg)?;
    let mut adam = AdamState::zeros(params.data.len());
    let mut step = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.shuffle_seed);
    let mut stopper = EarlyStopping::new(tcfg.patience);
    let mut best_params = params.clone();
    let mut history = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=tcfg.max_epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut train_acc = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let mut grad_acc = vec![0.0f64; params.data.len()];
            // Fixed reduction order over the batch keeps runs reproducible.
            for &idx in batch {
                let (loss, grads) =
                    utterance_loss(&params, mcfg, &train_set[idx], lcfg, weights, true)?;
                train_acc += loss;
                let grads = grads.unwrap();
                for (a, g) in grad_acc.iter_mut().zip(grads.iter()) {
                    *a += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grad_acc.iter_mut() {
                *g *= scale;
            }
            step += 1;
            let (new_params, new_state) =
                adam_step(&params.data, &grad_acc, &adam, step, &tcfg.adam)?;
            params.data = new_params;
            adam = new_state;
        }
        let train_loss = train_acc / train_set.len() as f64;
        let val_loss = mean_set_loss(&params, mcfg, val_set, lcfg, weights)?;
        let (is_best, should_stop) = stopper.observe(epoch, val_loss);
        if is_best {
            best_params = params.clone();
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            best_so_far: is_best,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if should_stop {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    Ok((
        best_params,
        TrainHistory {
            epochs: history,
            best_epoch: stopper.best_epoch(),
            best_val_loss: stopper.best(),
            stop_reason,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patience_machine_on_plateau() {
        // Losses 5,4,4,4,...: epoch 2 is the best; with patience 2 the run
        // halts after the second consecutive non-improving epoch.
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(1, 5.0), (true, false));
        assert_eq!(s.observe(2, 4.0), (true, false));
        assert_eq!(s.observe(3, 4.0), (false, false));
        assert_eq!(s.observe(4, 4.0), (false, true));
        assert_eq!(s.best_epoch(), 2);
    }

    #[test]
    fn patience_resets_on_improvement() {
        let mut s = EarlyStopping::new(3);
        s.observe(1, 10.0);
        s.observe(2, 11.0);
        s.observe(3, 12.0);
        assert_eq!(s.observe(4, 9.0), (true, false));
        s.observe(5, 9.5);
        s.observe(6, 9.5);
        assert_eq!(s.observe(7, 9.5), (false, true));
        assert_eq!(s.best_epoch(), 4);
    }

    fn tiny_example(seed: u64, k: usize, t: usize) -> TrainExample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = StftConfig {
            window_len: (k - 1) * 2,
            hop: k - 1,
            num_bins: k,
        };
        let clean = Array2::from_shape_fn((k, t), |_| rng.random_range(0.1..1.0));
        let noise = Array2::from_shape_fn((k, t), |_| rng.random_range(0.1..0.6));
        let noisy = &clean + &noise;
        let logmag = noisy.mapv(|v: f64| v.max(1e-10).ln());
        let (features, _) =
            crate::dsp::recursive_mean_normalize(&logmag, 0.995, None).unwrap();
        TrainExample {
            features,
            noisy_mag: MagnitudeSpectrogram {
                mags: noisy,
                config: cfg.clone(),
            },
            clean_mag: MagnitudeSpectrogram {
                mags: clean,
                config: cfg,
            },
        }
    }

    fn tiny_model(seed: u64) -> ModelConfig {
        ModelConfig {
            num_bins: 9,
            enc_layers: 2,
            base_channels: 2,
            kernel_freq: 3,
            stride_freq: 2,
            recurrent_layers: 1,
            recurrent_hidden: 8,
            seed,
        }
    }

    #[test]
    fn training_reduces_validation_loss() {
        let train_set: Vec<_> = (0..6).map(|i| tiny_example(i, 9, 12)).collect();
        let val_set: Vec<_> = (100..102).map(|i| tiny_example(i, 9, 12)).collect();
        let mcfg = tiny_model(1);
        let tcfg = TrainConfig {
            batch_size: 3,
            max_epochs: 40,
            patience: 39,
            shuffle_seed: 7,
            ..Default::default()
        };
        let lcfg = LossConfig::default();
        let (_, hist) = train(&train_set, &val_set, &mcfg, &tcfg, &lcfg, None).unwrap();
        let first = hist.epochs[0].val_loss;
        let best = hist.best_val_loss;
        assert!(best < first, "val loss {best} did not improve on {first}");
        assert_eq!(
            hist.best_val_loss,
            hist.epochs
                .iter()
                .map(|e| e.val_loss)
                .fold(f64::INFINITY, f64::min)
        );
    }

    #[test]
    fn training_is_deterministic() {
        let train_set: Vec<_> = (0..4).map(|i| tiny_example(i, 9, 8)).collect();
        let val_set: Vec<_> = vec![tiny_example(50, 9, 8)];
        let mcfg = tiny_model(2);
        let tcfg = TrainConfig {
            batch_size: 2,
            max_epochs: 4,
            patience: 3,
            shuffle_seed: 9,
            ..Default::default()
        };
        let lcfg = LossConfig::default();
        let (p1, h1) = train(&train_set, &val_set, &mcfg, &tcfg, &lcfg, None).unwrap();
        let (p2, h2) = train(&train_set, &val_set, &mcfg, &tcfg, &lcfg, None).unwrap();
        assert_eq!(p1.data, p2.data);
        for (a, b) in h1.epochs.iter().zip(h2.epochs.iter()) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.val_loss, b.val_loss);
        }
    }

    #[test]
    fn empty_sets_rejected() {
        let mcfg = tiny_model(3);
        let tcfg = TrainConfig::default();
        let lcfg = LossConfig::default();
        assert!(train(&[], &[tiny_example(1, 9, 4)], &mcfg, &tcfg, &lcfg, None).is_err());
        assert!(train(&[tiny_example(1, 9, 4)], &[], &mcfg, &tcfg, &lcfg, None).is_err());
    }
}
