//! STFT analysis/synthesis, spectral masking, and log-magnitude feature
//! normalization. All computation is double precision.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Mono time-domain signal.
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample_rate must be > 0"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("waveform contains non-finite samples"));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Framing parameters for STFT analysis and synthesis.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub num_bins: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        // 32 ms window / 16 ms shift at 16 kHz.
        StftConfig {
            window_len: 512,
            hop: 256,
            num_bins: 257,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bins != self.window_len / 2 + 1 {
            return Err(Error::Config(format!(
                "num_bins must be window_len/2 + 1 ({} for window_len {}), got {}",
                self.window_len / 2 + 1,
                self.window_len,
                self.num_bins
            )));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "hop must be in (0, window_len]; got hop {} window_len {}",
                self.hop, self.window_len
            )));
        }
        Ok(())
    }

    /// Periodic Hann window of length `window_len`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len as f64;
        (0..self.window_len)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n).cos()))
            .collect()
    }
}

/// K x T STFT coefficients. Row k corresponds to frequency k*fs/window_len.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub coeffs: Array2<Complex64>,
    pub config: StftConfig,
    /// Original waveform length, when the spectrogram came from `stft`.
    pub orig_len: Option<usize>,
}

impl ComplexSpectrogram {
    pub fn num_bins(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.coeffs.ncols()
    }
}

/// K x T non-negative magnitudes.
#[derive(Debug, Clone)]
pub struct MagnitudeSpectrogram {
    pub mags: Array2<f64>,
    pub config: StftConfig,
}

impl MagnitudeSpectrogram {
    pub fn num_bins(&self) -> usize {
        self.mags.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.mags.ncols()
    }

    /// Debug dump: rows = bins, columns = frames, `%.9e` formatting.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for row in self.mags.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Time-frequency mask with entries in [0, 1].
#[derive(Debug, Clone)]
pub struct Mask {
    values: Array2<f64>,
}

impl Mask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("mask entries must lie in [0, 1]"));
        }
        Ok(Mask { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Running per-bin mean of log-magnitude features, for streaming use.
#[derive(Debug, Clone)]
pub struct NormState {
    pub mean: Array1<f64>,
    pub lambda: f64,
}

fn fft_pair(window_len: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(window_len);
    let inv = planner.plan_fft_inverse(window_len);
    (fwd, inv)
}

/// Analysis STFT. Frames start every `hop` samples; the tail frame is
/// zero-padded so T = ceil(len / hop).
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if w.is_empty() {
        return Err(Error::invalid("cannot compute STFT of an empty waveform"));
    }
    let len = w.len();
    let num_frames = len.div_ceil(cfg.hop);
    let window = cfg.window();
    let (fwd, _) = fft_pair(cfg.window_len);

    let mut coeffs = Array2::zeros((cfg.num_bins, num_frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.window_len];
    for t in 0..num_frames {
        let start = t * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let s = w.samples.get(start + i).copied().unwrap_or(0.0);
            *slot = Complex64::new(s * window[i], 0.0);
        }
        fwd.process(&mut buf);
        for k in 0..cfg.num_bins {
            coeffs[(k, t)] = buf[k];
        }
    }
    Ok(ComplexSpectrogram {
        coeffs,
        config: cfg.clone(),
        orig_len: Some(len),
    })
}

/// Synthesis via weighted overlap-add with window-sum normalization.
/// Output is truncated to the original length when known.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let cfg = &s.config;
    cfg.validate()?;
    let num_frames = s.num_frames();
    if num_frames == 0 {
        return Err(Error::invalid("cannot invert a spectrogram with no frames"));
    }
    if s.num_bins() != cfg.num_bins {
        return Err(Error::ShapeMismatch {
            expected: format!("{} bins", cfg.num_bins),
            got: format!("{} bins", s.num_bins()),
        });
    }
    let window = cfg.window();
    let (_, inv) = fft_pair(cfg.window_len);
    let full_len = (num_frames - 1) * cfg.hop + cfg.window_len;
    let mut acc = vec![0.0f64; full_len];
    let mut wsum = vec![0.0f64; full_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.window_len];
    let scale = 1.0 / cfg.window_len as f64;

    for t in 0..num_frames {
        // Rebuild the full spectrum by conjugate symmetry.
        for k in 0..cfg.num_bins {
            buf[k] = s.coeffs[(k, t)];
        }
        for k in cfg.num_bins..cfg.window_len {
            buf[k] = s.coeffs[(cfg.window_len - k, t)].conj();
        }
        inv.process(&mut buf);
        let start = t * cfg.hop;
        for i in 0..cfg.window_len {
            acc[start + i] += buf[i].re * scale;
            wsum[start + i] += window[i];
        }
    }
    let mut out: Vec<f64> = acc
        .iter()
        .zip(wsum.iter())
        .map(|(&a, &w)| if w > 1e-12 { a / w } else { 0.0 })
        .collect();
    if let Some(len) = s.orig_len {
        out.truncate(len);
    }
    Waveform::new(out, 16_000)
}

/// Element-wise complex modulus.
pub fn magnitude(s: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    MagnitudeSpectrogram {
        mags: s.coeffs.mapv(|c| (c.re * c.re + c.im * c.im).sqrt()),
        config: s.config.clone(),
    }
}

/// Point-wise multiplication of the mask into a magnitude spectrogram.
pub fn apply_mask(m: &Mask, y: &MagnitudeSpectrogram) -> Result<MagnitudeSpectrogram> {
    if m.values().dim() != y.mags.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", y.mags.dim()),
            got: format!("{:?}", m.values().dim()),
        });
    }
    Ok(MagnitudeSpectrogram {
        mags: m.values() * &y.mags,
        config: y.config.clone(),
    })
}

/// Combine estimated magnitudes with the noisy signal's phases, then invert.
pub fn reconstruct_with_noisy_phase(
    est_mag: &MagnitudeSpectrogram,
    noisy: &ComplexSpectrogram,
) -> Result<Waveform> {
    if est_mag.mags.dim() != noisy.coeffs.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", noisy.coeffs.dim()),
            got: format!("{:?}", est_mag.mags.dim()),
        });
    }
    let coeffs = ndarray::Zip::from(&est_mag.mags)
        .and(&noisy.coeffs)
        .map_collect(|&m, &c| {
            let norm = c.norm();
            if norm > 0.0 {
                c / norm * m
            } else {
                Complex64::new(m, 0.0)
            }
        });
    istft(&ComplexSpectrogram {
        coeffs,
        config: noisy.config.clone(),
        orig_len: noisy.orig_len,
    })
}

/// Zero-pad both ends by window_len - hop so every original sample sits
/// where the analysis windows overlap to a full sum. Synthesis from a
/// modified (masked) spectrogram then never divides real samples by a
/// near-zero window sum; the blow-up-prone region lands in the padding.
pub fn edge_pad(w: &Waveform, cfg: &StftConfig) -> Result<Waveform> {
    cfg.validate()?;
    let pad = cfg.window_len - cfg.hop;
    let mut samples = vec![0.0; pad];
    samples.extend_from_slice(&w.samples);
    samples.extend(std::iter::repeat(0.0).take(pad));
    Waveform::new(samples, w.sample_rate)
}

/// Undo `edge_pad` on a synthesized waveform, recovering `orig_len` samples.
pub fn edge_trim(w: &Waveform, cfg: &StftConfig, orig_len: usize) -> Result<Waveform> {
    cfg.validate()?;
    let pad = cfg.window_len - cfg.hop;
    if w.len() < pad + orig_len {
        return Err(Error::invalid(format!(
            "cannot trim {orig_len} samples with pad {pad} from length {}",
            w.len()
        )));
    }
    Waveform::new(w.samples[pad..pad + orig_len].to_vec(), w.sample_rate)
}

pub const DEFAULT_LOG_FLOOR: f64 = 1e-10;

/// Natural log of max(entry, floor).
pub fn log_magnitude(y: &MagnitudeSpectrogram, floor: f64) -> Result<Array2<f64>> {
    if floor <= 0.0 {
        return Err(Error::invalid("log floor must be > 0"));
    }
    Ok(y.mags.mapv(|m| m.max(floor).ln()))
}

pub const DEFAULT_NORM_LAMBDA: f64 = 0.995;

/// Time-recursive mean normalization of log-magnitude features.
///
/// mu(k,t) = lambda*mu(k,t-1) + (1-lambda)*L(k,t), initialized to the first
/// frame of a fresh stream; output is L - mu. The returned state lets a
/// caller continue the recursion over subsequent chunks.
pub fn recursive_mean_normalize(
    logmag: &Array2<f64>,
    lambda: f64,
    state: Option<NormState>,
) -> Result<(Array2<f64>, NormState)> {
    if !(0.0 < lambda && lambda < 1.0) {
        return Err(Error::invalid(format!(
            "normalization lambda must lie in (0, 1), got {lambda}"
        )));
    }
    let (num_bins, num_frames) = logmag.dim();
    if let Some(s) = &state {
        if s.mean.len() != num_bins {
            return Err(Error::ShapeMismatch {
                expected: format!("{num_bins} bins"),
                got: format!("{} bins", s.mean.len()),
            });
        }
    }
    let mut mean = state.map(|s| s.mean);
    let mut out = Array2::zeros((num_bins, num_frames));
    for t in 0..num_frames {
        let frame = logmag.column(t);
        match mean.as_mut() {
            None => {
                mean = Some(frame.to_owned());
            }
            Some(mu) => {
                for (m, &l) in mu.iter_mut().zip(frame.iter()) {
                    *m = lambda * *m + (1.0 - lambda) * l;
                }
            }
        }
        let mu = mean.as_ref().unwrap();
        for k in 0..num_bins {
            out[(k, t)] = frame[k] - mu[k];
        }
    }
    let mean = mean.unwrap_or_else(|| Array1::zeros(num_bins));
    Ok((out, NormState { mean, lambda }))
}
