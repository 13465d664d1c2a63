//! Per-bin emphasis weight vectors: standard first-order FIR pre-emphasis,
//! equal-loudness pre-emphasis, and cubic-root intensity-to-loudness
//! compression of magnitude spectra.

use ndarray::Array1;

use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};

/// Which emphasis curve a weight vector was built from.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum EmphasisKind {
    /// First-order high-pass FIR response with the given alpha.
    Sp(f64),
    /// Equal-loudness response.
    Elp,
}

/// Length-K normalized weight vector; max weight is exactly 1.
#[derive(Debug, Clone)]
pub struct EmphasisWeights {
    pub weights: Array1<f64>,
    pub kind: EmphasisKind,
    pub sample_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpConfig {
    pub alpha: f64,
}

impl Default for SpConfig {
    fn default() -> Self {
        SpConfig { alpha: 0.6 }
    }
}

impl SpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "pre-emphasis alpha must satisfy 0<alpha<1, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Equal-loudness rational-response constants.
pub mod elp_constants {
    pub const BETA1: f64 = 1.44e6;
    pub const BETA2: f64 = 1.6e5;
    pub const BETA3: f64 = 9.61e6;
    pub const BETA4: f64 = 9.58e26;
}

/// Frequency of bin k on a uniform grid over [0, fs/2].
pub fn bin_freq(k: usize, fs: f64, num_bins: usize) -> f64 {
    k as f64 * fs / (2.0 * (num_bins as f64 - 1.0))
}

/// Raw first-order high-pass FIR magnitude response |1 - alpha e^{-j2pi f/fs}|.
pub fn sp_raw(alpha: f64, f: f64, fs: f64) -> f64 {
    let c = (2.0 * std::f64::consts::PI * f / fs).cos();
    (alpha * alpha - 2.0 * alpha * c + 1.0).sqrt()
}

/// Raw equal-loudness magnitude response at about the 40 dB level.
pub fn elp_raw(f: f64) -> f64 {
    use elp_constants::*;
    let f2 = f * f;
    let w = 2.0 * std::f64::consts::PI * f;
    let num = (f2 + BETA1) * f2 * f2;
    let den = (f2 + BETA2).powi(2) * (f2 + BETA3) * (w.powi(6) + BETA4);
    (num / den).sqrt()
}

fn validate_grid(fs: f64, num_bins: usize) -> Result<()> {
    if fs <= 0.0 {
        return Err(Error::invalid("sample rate must be > 0"));
    }
    if num_bins < 2 {
        return Err(Error::invalid("need at least 2 frequency bins"));
    }
    Ok(())
}

/// Standard pre-emphasis weights sampled at the K bin centers and normalized
/// to a maximum of 1. The maximum sits at Nyquist, so the normalizer is the
/// closed-form 1 + alpha.
pub fn sp_response(cfg: &SpConfig, fs: f64, num_bins: usize) -> Result<EmphasisWeights> {
    cfg.validate()?;
    validate_grid(fs, num_bins)?;
    // The high-pass response peaks at Nyquist; dividing by the sampled
    // maximum makes the top weight exactly 1.
    let raw = Array1::from_shape_fn(num_bins, |k| {
        sp_raw(cfg.alpha, bin_freq(k, fs, num_bins), fs)
    });
    let max = raw.iter().cloned().fold(0.0f64, f64::max);
    let weights = raw.mapv(|v| v / max);
    Ok(EmphasisWeights {
        weights,
        kind: EmphasisKind::Sp(cfg.alpha),
        sample_rate: fs,
    })
}

/// Equal-loudness weights sampled at the K bin centers. The normalizing
/// maximum is taken over a dense 1 Hz grid on [0, fs/2] so the weights are
/// invariant to K.
pub fn elp_response(fs: f64, num_bins: usize) -> Result<EmphasisWeights> {
    validate_grid(fs, num_bins)?;
    let max = elp_grid_max(fs);
    let weights = Array1::from_shape_fn(num_bins, |k| elp_raw(bin_freq(k, fs, num_bins)) / max);
    Ok(EmphasisWeights {
        weights,
        kind: EmphasisKind::Elp,
        sample_rate: fs,
    })
}

/// Maximum of the raw equal-loudness response over a 1 Hz grid on [0, fs/2].
pub fn elp_grid_max(fs: f64) -> f64 {
    let nyquist = (fs / 2.0).floor() as usize;
    (0..=nyquist)
        .map(|f| elp_raw(f as f64))
        .fold(0.0f64, f64::max)
}

/// Weight each bin's magnitudes: out(k,t) = weights[k] * x(k,t).
pub fn apply_emphasis(
    w: &EmphasisWeights,
    x: &MagnitudeSpectrogram,
) -> Result<MagnitudeSpectrogram> {
    if w.weights.len() != x.num_bins() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} weights", x.num_bins()),
            got: format!("{} weights", w.weights.len()),
        });
    }
    let mut mags = x.mags.clone();
    for (mut row, &wk) in mags.rows_mut().into_iter().zip(w.weights.iter()) {
        row.mapv_inplace(|v| v * wk);
    }
    Ok(MagnitudeSpectrogram {
        mags,
        config: x.config.clone(),
    })
}

/// Cubic-root amplitude compression: x^(2/3) element-wise.
pub fn i2l(x: &MagnitudeSpectrogram) -> Result<MagnitudeSpectrogram> {
    if x.mags.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid(
            "intensity-to-loudness input must be non-negative",
        ));
    }
    Ok(MagnitudeSpectrogram {
        mags: x.mags.mapv(|v| v.powf(2.0 / 3.0)),
        config: x.config.clone(),
    })
}
