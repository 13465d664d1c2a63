//! Spectral MSE loss and its perceptually weighted variants, with
//! closed-form gradients with respect to the estimated magnitudes and,
//! through the masking identity, the mask itself.

use ndarray::Array2;

use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};
use crate::preemphasis::{EmphasisKind, EmphasisWeights, SpConfig};

/// Which emphasis curve the loss weights the spectrum with.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum EmphasisMode {
    None,
    Sp(SpConfig),
    Elp,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub emphasis: EmphasisMode,
    pub i2l: bool,
    /// Floor on the compression input; keeps the (.)^{2/3} derivative finite.
    pub grad_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            emphasis: EmphasisMode::None,
            i2l: false,
            grad_floor: 1e-8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grad_floor <= 0.0 {
            return Err(Error::invalid("grad_floor must be > 0"));
        }
        if let EmphasisMode::Sp(sp) = self.emphasis {
            sp.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    /// dL/d|X_hat(k,t)|.
    pub gradient: Array2<f64>,
}

fn check_shapes(a: &MagnitudeSpectrogram, b: &MagnitudeSpectrogram) -> Result<()> {
    if a.mags.dim() != b.mags.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", b.mags.dim()),
            got: format!("{:?}", a.mags.dim()),
        });
    }
    Ok(())
}

/// Mean squared error over all K*T cells, with its gradient.
pub fn mse_loss(est: &MagnitudeSpectrogram, clean: &MagnitudeSpectrogram) -> Result<LossValue> {
    check_shapes(est, clean)?;
    let (k, t) = est.mags.dim();
    let n = (k * t) as f64;
    let diff = &est.mags - &clean.mags;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let gradient = diff.mapv(|d| 2.0 * d / n);
    Ok(LossValue { value, gradient })
}

/// Weighted loss: MSE between g(w . est) and g(w . clean) where g is the
/// identity or the cubic-root compression per the config. The gradient is
/// the chain rule through g and the per-bin weight.
pub fn emphasized_loss(
    est: &MagnitudeSpectrogram,
    clean: &MagnitudeSpectrogram,
    weights: Option<&EmphasisWeights>,
    cfg: &LossConfig,
) -> Result<LossValue> {
    cfg.validate()?;
    check_shapes(est, clean)?;
    match (cfg.emphasis, weights) {
        (EmphasisMode::None, None) => {}
        (EmphasisMode::None, Some(_)) => {
            return Err(Error::Config(
                "weights supplied but emphasis mode is none".into(),
            ))
        }
        (_, None) => {
            return Err(Error::Config(
                "emphasis mode requires a weight vector".into(),
            ))
        }
        (EmphasisMode::Sp(sp), Some(w)) => match w.kind {
            EmphasisKind::Sp(a) if a == sp.alpha => {}
            _ => {
                return Err(Error::Config(format!(
                    "weight kind {:?} does not match configured SP(alpha={})",
                    w.kind, sp.alpha
                )))
            }
        },
        (EmphasisMode::Elp, Some(w)) => {
            if w.kind != EmphasisKind::Elp {
                return Err(Error::Config(format!(
                    "weight kind {:?} does not match configured ELP",
                    w.kind
                )));
            }
        }
    }
    if let Some(w) = weights {
        if w.weights.len() != est.num_bins() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} weights", est.num_bins()),
                got: format!("{} weights", w.weights.len()),
            });
        }
    }

    let (num_bins, num_frames) = est.mags.dim();
    let n = (num_bins * num_frames) as f64;
    let floor = cfg.grad_floor;
    let mut value = 0.0;
    let mut gradient = Array2::zeros((num_bins, num_frames));
    for k in 0..num_bins {
        let wk = weights.map(|w| w.weights[k]).unwrap_or(1.0);
        for t in 0..num_frames {
            let u_est = wk * est.mags[(k, t)];
            let u_ref = wk * clean.mags[(k, t)];
            let (g_est, g_ref, gprime) = if cfg.i2l {
                let ue = u_est.max(floor);
                let ur = u_ref.max(floor);
                (
                    ue.powf(2.0 / 3.0),
                    ur.powf(2.0 / 3.0),
                    (2.0 / 3.0) * ue.powf(-1.0 / 3.0),
                )
            } else {
                (u_est, u_ref, 1.0)
            };
            let diff = g_est - g_ref;
            value += diff * diff;
            gradient[(k, t)] = 2.0 * diff * gprime * wk / n;
        }
    }
    Ok(LossValue {
        value: value / n,
        gradient,
    })
}

/// Chain rule through the masking identity X_hat = M . Y:
/// dL/dM(k,t) = dL/d|X_hat(k,t)| * |Y(k,t)|.
pub fn mask_gradient(loss_grad: &Array2<f64>, noisy: &MagnitudeSpectrogram) -> Result<Array2<f64>> {
    if loss_grad.dim() != noisy.mags.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", noisy.mags.dim()),
            got: format!("{:?}", loss_grad.dim()),
        });
    }
    Ok(loss_grad * &noisy.mags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{apply_mask, Mask, StftConfig};
    use crate::preemphasis::{elp_response, sp_response};
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn mag(values: Array2<f64>) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            mags: values,
            config: StftConfig::default(),
        }
    }

    fn random_mag(k: usize, t: usize, seed: u64) -> MagnitudeSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        mag(Array2::from_shape_fn((k, t), |_| rng.random_range(0.05..3.0)))
    }

    /// Central finite differences of the loss value w.r.t. each estimate cell.
    fn fd_gradient(
        est: &MagnitudeSpectrogram,
        clean: &MagnitudeSpectrogram,
        weights: Option<&EmphasisWeights>,
        cfg: &LossConfig,
        h: f64,
    ) -> Array2<f64> {
        let mut grad = Array2::zeros(est.mags.dim());
        for idx in 0..est.mags.len() {
            let (k, t) = (idx / est.mags.ncols(), idx % est.mags.ncols());
            let mut plus = est.clone();
            plus.mags[(k, t)] += h;
            let mut minus = est.clone();
            minus.mags[(k, t)] -= h;
            let fp = emphasized_loss(&plus, clean, weights, cfg).unwrap().value;
            let fm = emphasized_loss(&minus, clean, weights, cfg).unwrap().value;
            grad[(k, t)] = (fp - fm) / (2.0 * h);
        }
        grad
    }

    fn max_rel_err(analytic: &Array2<f64>, fd: &Array2<f64>) -> f64 {
        analytic
            .iter()
            .zip(fd.iter())
            .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-8))
            .fold(0.0f64, f64::max)
    }

    #[test]
    fn mse_zero_for_equal_inputs() {
        let x = random_mag(4, 3, 1);
        let l = mse_loss(&x, &x).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_constant_offset() {
        let x = random_mag(4, 3, 2);
        let c = 0.7;
        let shifted = mag(&x.mags + c);
        let l = mse_loss(&shifted, &x).unwrap();
        assert!((l.value - c * c).abs() < 1e-12);
        for g in l.gradient.iter() {
            assert!((g - 2.0 * c / 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_matches_brute_force_loop() {
        let a = random_mag(4, 3, 3);
        let b = random_mag(4, 3, 4);
        let l = mse_loss(&a, &b).unwrap();
        let mut acc = 0.0;
        for k in 0..4 {
            for t in 0..3 {
                let d = a.mags[(k, t)] - b.mags[(k, t)];
                acc += d * d;
            }
        }
        assert!((l.value - acc / 12.0).abs() < 1e-12);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        assert!(mse_loss(&random_mag(4, 3, 5), &random_mag(4, 4, 5)).is_err());
    }

    #[test]
    fn none_path_reduces_to_mse() {
        let a = random_mag(6, 4, 6);
        let b = random_mag(6, 4, 7);
        let cfg = LossConfig::default();
        let l = emphasized_loss(&a, &b, None, &cfg).unwrap();
        let m = mse_loss(&a, &b).unwrap();
        assert_eq!(l.value, m.value);
        assert_eq!(l.gradient, m.gradient);
    }

    #[test]
    fn all_ones_weights_equal_mse() {
        let a = random_mag(6, 4, 8);
        let b = random_mag(6, 4, 9);
        let w = EmphasisWeights {
            weights: ndarray::Array1::ones(6),
            kind: EmphasisKind::Elp,
            sample_rate: 16_000.0,
        };
        let cfg = LossConfig {
            emphasis: EmphasisMode::Elp,
            ..Default::default()
        };
        let l = emphasized_loss(&a, &b, Some(&w), &cfg).unwrap();
        let m = mse_loss(&a, &b).unwrap();
        assert_eq!(l.value, m.value);
    }

    #[test]
    fn gradients_match_finite_differences_across_configs() {
        let est = random_mag(12, 5, 10);
        let clean = random_mag(12, 5, 11);
        let configs: Vec<(EmphasisMode, Option<EmphasisWeights>)> = vec![
            (EmphasisMode::None, None),
            (
                EmphasisMode::Sp(SpConfig { alpha: 0.3 }),
                Some(sp_response(&SpConfig { alpha: 0.3 }, 16_000.0, 12).unwrap()),
            ),
            (
                EmphasisMode::Sp(SpConfig { alpha: 0.6 }),
                Some(sp_response(&SpConfig { alpha: 0.6 }, 16_000.0, 12).unwrap()),
            ),
            (
                EmphasisMode::Sp(SpConfig { alpha: 0.9 }),
                Some(sp_response(&SpConfig { alpha: 0.9 }, 16_000.0, 12).unwrap()),
            ),
            (EmphasisMode::Elp, Some(elp_response(16_000.0, 12).unwrap())),
        ];
        for (mode, weights) in &configs {
            for i2l in [false, true] {
                let cfg = LossConfig {
                    emphasis: *mode,
                    i2l,
                    grad_floor: 1e-8,
                };
                let l = emphasized_loss(&est, &clean, weights.as_ref(), &cfg).unwrap();
                let fd = fd_gradient(&est, &clean, weights.as_ref(), &cfg, 1e-6);
                let err = max_rel_err(&l.gradient, &fd);
                assert!(err < 1e-5, "mode {mode:?} i2l {i2l}: rel err {err}");
            }
        }
    }

    #[test]
    fn sp_i2l_matches_explicit_construction() {
        // Independent route: explicitly form g(w.x) matrices and call mse_loss.
        let est = random_mag(5, 4, 12);
        let clean = random_mag(5, 4, 13);
        let w = sp_response(&SpConfig { alpha: 0.6 }, 16_000.0, 5).unwrap();
        let cfg = LossConfig {
            emphasis: EmphasisMode::Sp(SpConfig { alpha: 0.6 }),
            i2l: true,
            grad_floor: 1e-8,
        };
        let l = emphasized_loss(&est, &clean, Some(&w), &cfg).unwrap();
        let transform = |x: &MagnitudeSpectrogram| {
            let weighted = crate::preemphasis::apply_emphasis(&w, x).unwrap();
            crate::preemphasis::i2l(&weighted).unwrap()
        };
        let expect = mse_loss(&transform(&est), &transform(&clean)).unwrap();
        assert!((l.value - expect.value).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_bins_are_loss_invisible() {
        let est = random_mag(8, 4, 14);
        let clean = random_mag(8, 4, 15);
        let w = elp_response(16_000.0, 8).unwrap();
        assert_eq!(w.weights[0], 0.0);
        let cfg = LossConfig {
            emphasis: EmphasisMode::Elp,
            ..Default::default()
        };
        let l0 = emphasized_loss(&est, &clean, Some(&w), &cfg).unwrap();
        let mut perturbed = est.clone();
        for t in 0..4 {
            perturbed.mags[(0, t)] += 5.0;
        }
        let l1 = emphasized_loss(&perturbed, &clean, Some(&w), &cfg).unwrap();
        assert_eq!(l0.value, l1.value);
        for t in 0..4 {
            assert_eq!(l0.gradient[(0, t)], 0.0);
        }
    }

    #[test]
    fn loss_symmetric_in_value() {
        let a = random_mag(6, 3, 16);
        let b = random_mag(6, 3, 17);
        let w = sp_response(&SpConfig::default(), 16_000.0, 6).unwrap();
        let cfg = LossConfig {
            emphasis: EmphasisMode::Sp(SpConfig::default()),
            i2l: true,
            grad_floor: 1e-8,
        };
        let ab = emphasized_loss(&a, &b, Some(&w), &cfg).unwrap();
        let ba = emphasized_loss(&b, &a, Some(&w), &cfg).unwrap();
        assert!((ab.value - ba.value).abs() < 1e-15);
    }

    #[test]
    fn tiny_alpha_approaches_scaled_plain_mse() {
        let a = random_mag(16, 5, 18);
        let b = random_mag(16, 5, 19);
        let alpha = 1e-6;
        let w = sp_response(&SpConfig { alpha }, 16_000.0, 16).unwrap();
        let cfg = LossConfig {
            emphasis: EmphasisMode::Sp(SpConfig { alpha }),
            ..Default::default()
        };
        let l = emphasized_loss(&a, &b, Some(&w), &cfg).unwrap();
        let scale = w.weights[0] * w.weights[0];
        let m = mse_loss(&a, &b).unwrap();
        let rel = (l.value - scale * m.value).abs() / (scale * m.value);
        assert!(rel < 1e-4, "rel err {rel}");
    }

    #[test]
    fn kind_mismatch_rejected() {
        let a = random_mag(6, 3, 20);
        let w = elp_response(16_000.0, 6).unwrap();
        let cfg = LossConfig {
            emphasis: EmphasisMode::Sp(SpConfig::default()),
            ..Default::default()
        };
        assert!(emphasized_loss(&a, &a, Some(&w), &cfg).is_err());
    }

    #[test]
    fn mask_gradient_identity_and_zero() {
        let y = random_mag(4, 3, 21);
        let ones = mag(Array2::ones((4, 3)));
        let g = Array2::from_shape_fn((4, 3), |(k, t)| (k + t) as f64);
        assert_eq!(mask_gradient(&g, &ones).unwrap(), g);
        let zeros = Array2::zeros((4, 3));
        assert!(mask_gradient(&zeros, &y).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_gradient_matches_finite_differences() {
        let noisy = random_mag(6, 4, 22);
        let clean = random_mag(6, 4, 23);
        let w = sp_response(&SpConfig::default(), 16_000.0, 6).unwrap();
        let cfg = LossConfig {
            emphasis: EmphasisMode::Sp(SpConfig::default()),
            i2l: true,
            grad_floor: 1e-8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mask_values = Array2::from_shape_fn((6, 4), |_| rng.random_range(0.1..0.9));

        let loss_of_mask = |mv: &Array2<f64>| {
            let m = Mask::new(mv.clone()).unwrap();
            let est = apply_mask(&m, &noisy).unwrap();
            emphasized_loss(&est, &clean, Some(&w), &cfg).unwrap()
        };
        let base = loss_of_mask(&mask_values);
        let analytic = mask_gradient(&base.gradient, &noisy).unwrap();

        let h = 1e-6;
        for k in 0..6 {
            for t in 0..4 {
                let mut plus = mask_values.clone();
                plus[(k, t)] += h;
                let mut minus = mask_values.clone();
                minus[(k, t)] -= h;
                let fd = (loss_of_mask(&plus).value - loss_of_mask(&minus).value) / (2.0 * h);
                let rel = (analytic[(k, t)] - fd).abs() / analytic[(k, t)].abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-5, "({k},{t}) rel err {rel}");
            }
        }
    }
}
