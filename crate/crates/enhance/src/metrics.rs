//! Objective evaluation: SI-SDR, segmental SNR, and log-spectral distance,
//! with per-utterance rows aggregated into per-(condition, SNR) cells.

use std::io::Write;

use crate::dataset::NoiseCondition;
use crate::dsp::{magnitude, stft, StftConfig, Waveform};
use crate::error::{Error, Result};

/// SI-SDR values above this residual-energy floor are capped at +100 dB.
pub const SI_SDR_CAP_DB: f64 = 100.0;

fn check_lengths(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} samples", reference.len()),
            got: format!("{} samples", estimate.len()),
        });
    }
    Ok(())
}

/// Scale-invariant signal-to-distortion ratio in dB: project the estimate
/// onto the reference and compare projected energy to residual energy.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let dot: f64 = reference
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(r, e)| r * e)
        .sum();
    let ref_energy: f64 = reference.samples.iter().map(|r| r * r).sum();
    if ref_energy <= 0.0 {
        return Err(Error::invalid("SI-SDR reference must be non-zero"));
    }
    let a = dot / ref_energy;
    let target_energy = a * a * ref_energy;
    let residual: f64 = reference
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(r, e)| {
            let d = e - a * r;
            d * d
        })
        .sum();
    if residual < 1e-20 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target_energy / residual).log10()).min(SI_SDR_CAP_DB))
}

pub const SEG_SNR_FLOOR_DB: f64 = -10.0;
pub const SEG_SNR_CEIL_DB: f64 = 35.0;

/// Frame-wise SNR of reference vs (estimate - reference), clamped per frame
/// to [-10, 35] dB and averaged over frames with audible reference energy.
pub fn seg_snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    seg_snr_with(reference, estimate, 256, 128, SEG_SNR_FLOOR_DB, SEG_SNR_CEIL_DB)
}

pub fn seg_snr_with(
    reference: &Waveform,
    estimate: &Waveform,
    frame: usize,
    hop: usize,
    floor_db: f64,
    ceil_db: f64,
) -> Result<f64> {
    check_lengths(reference, estimate)?;
    if frame == 0 || hop == 0 {
        return Err(Error::invalid("frame and hop must be positive"));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start + frame <= reference.len() {
        let r = &reference.samples[start..start + frame];
        let e = &estimate.samples[start..start + frame];
        let ref_energy: f64 = r.iter().map(|v| v * v).sum();
        if ref_energy > 1e-10 {
            let err_energy: f64 = r.iter().zip(e).map(|(rv, ev)| (ev - rv).powi(2)).sum();
            let snr = if err_energy <= 0.0 {
                ceil_db
            } else {
                (10.0 * (ref_energy / err_energy).log10()).clamp(floor_db, ceil_db)
            };
            acc += snr;
            count += 1;
        }
        start += hop;
    }
    if count == 0 {
        return Err(Error::UndefinedMetric(
            "segmental SNR undefined: every reference frame is silent".into(),
        ));
    }
    Ok(acc / count as f64)
}

/// Mean over frames of the RMS (over bins) difference of log magnitude
/// spectra, in dB.
pub fn log_spectral_distance(
    reference: &Waveform,
    estimate: &Waveform,
    cfg: &StftConfig,
) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let eps = 1e-10;
    let r = magnitude(&stft(reference, cfg)?);
    let e = magnitude(&stft(estimate, cfg)?);
    let (k, t) = r.mags.dim();
    let mut acc = 0.0;
    for ti in 0..t {
        let mut frame_acc = 0.0;
        for ki in 0..k {
            let lr = 20.0 * (r.mags[(ki, ti)] + eps).log10();
            let le = 20.0 * (e.mags[(ki, ti)] + eps).log10();
            frame_acc += (lr - le) * (lr - le);
        }
        acc += (frame_acc / k as f64).sqrt();
    }
    Ok(acc / t as f64)
}

/// One evaluated utterance.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MetricRow {
    pub utt: String,
    pub condition: NoiseCondition,
    pub snr_db: f64,
    pub si_sdr: f64,
    pub seg_snr: f64,
    pub lsd: f64,
}

/// Mean metrics for one (condition, SNR) cell.
#[derive(Debug, Clone)]
pub struct MetricCell {
    pub condition: NoiseCondition,
    pub snr_db: f64,
    pub count: usize,
    pub si_sdr: f64,
    pub seg_snr: f64,
    pub lsd: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    /// Cell means in (condition, snr) order, recomputable from the rows.
    pub fn aggregate(&self) -> Vec<MetricCell> {
        let mut keys: Vec<(NoiseCondition, i64)> = self
            .rows
            .iter()
            .map(|r| (r.condition, (r.snr_db * 1000.0).round() as i64))
            .collect();
        keys.sort_by_key(|&(c, s)| (c == NoiseCondition::Unseen, s));
        keys.dedup();
        keys.iter()
            .map(|&(cond, key)| {
                let members: Vec<&MetricRow> = self
                    .rows
                    .iter()
                    .filter(|r| {
                        r.condition == cond && ((r.snr_db * 1000.0).round() as i64) == key
                    })
                    .collect();
                let n = members.len() as f64;
                MetricCell {
                    condition: cond,
                    snr_db: key as f64 / 1000.0,
                    count: members.len(),
                    si_sdr: members.iter().map(|r| r.si_sdr).sum::<f64>() / n,
                    seg_snr: members.iter().map(|r| r.seg_snr).sum::<f64>() / n,
                    lsd: members.iter().map(|r| r.lsd).sum::<f64>() / n,
                }
            })
            .collect()
    }

    /// Per-utterance CSV. Externally computed scores (e.g. intrusive
    /// perceptual metrics) can be joined on the utterance id column.
    pub fn write_rows_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "utt,condition,snr_db,si_sdr,seg_snr,lsd")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.utt,
                condition_name(r.condition),
                r.snr_db,
                r.si_sdr,
                r.seg_snr,
                r.lsd
            )?;
        }
        Ok(())
    }

    pub fn write_cells_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "condition,snr_db,count,si_sdr,seg_snr,lsd")?;
        for c in self.aggregate() {
            writeln!(
                w,
                "{},{},{},{:.6},{:.6},{:.6}",
                condition_name(c.condition),
                c.snr_db,
                c.count,
                c.si_sdr,
                c.seg_snr,
                c.lsd
            )?;
        }
        Ok(())
    }
}

fn condition_name(c: NoiseCondition) -> &'static str {
    match c {
        NoiseCondition::Seen => "seen",
        NoiseCondition::Unseen => "unseen",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SAMPLE_RATE;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, len: usize) -> Waveform {
        Waveform::new(
            (0..len)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
                .collect(),
            SAMPLE_RATE,
        )
        .unwrap()
    }

    fn randn(len: usize, scale: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn si_sdr_identical_hits_cap() {
        let r = sine(440.0, 8000);
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn si_sdr_scale_invariant() {
        let r = sine(440.0, 8000);
        let doubled = Waveform::new(r.samples.iter().map(|s| 2.0 * s).collect(), SAMPLE_RATE)
            .unwrap();
        assert_eq!(si_sdr(&r, &doubled).unwrap(), SI_SDR_CAP_DB);

        let mut est = r.clone();
        for (i, s) in est.samples.iter_mut().enumerate() {
            *s += 0.05 * ((i % 17) as f64 - 8.0);
        }
        let base = si_sdr(&r, &est).unwrap();
        for c in [0.5, 3.0] {
            let scaled = Waveform::new(
                est.samples.iter().map(|s| c * s).collect(),
                SAMPLE_RATE,
            )
            .unwrap();
            assert!((si_sdr(&r, &scaled).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn si_sdr_equal_power_orthogonal_noise_near_zero_db() {
        // Sine plus a sine at double frequency (orthogonal over full periods)
        // with equal power.
        let len = 16_000;
        let r = sine(500.0, len);
        let n = sine(1000.0, len);
        let est = Waveform::new(
            r.samples.iter().zip(&n.samples).map(|(a, b)| a + b).collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        let v = si_sdr(&r, &est).unwrap();
        // Brute-force projection oracle.
        let dot: f64 = r.samples.iter().zip(&est.samples).map(|(a, b)| a * b).sum();
        let rr: f64 = r.samples.iter().map(|a| a * a).sum();
        let a = dot / rr;
        let resid: f64 = r
            .samples
            .iter()
            .zip(&est.samples)
            .map(|(rv, ev)| (ev - a * rv).powi(2))
            .sum();
        let oracle = 10.0 * (a * a * rr / resid).log10();
        assert!((v - oracle).abs() < 1e-12);
        assert!(v.abs() < 0.1, "expected ~0 dB, got {v}");
    }

    #[test]
    fn si_sdr_zero_reference_rejected() {
        let z = Waveform::new(vec![0.0; 100], SAMPLE_RATE).unwrap();
        let e = sine(100.0, 100);
        assert!(si_sdr(&z, &e).is_err());
    }

    #[test]
    fn seg_snr_identical_clamps_to_ceiling() {
        let r = sine(300.0, 4000);
        assert_eq!(seg_snr(&r, &r).unwrap(), SEG_SNR_CEIL_DB);
    }

    #[test]
    fn seg_snr_equal_power_noise_near_zero() {
        let len = 16_000;
        let r = Waveform::new(randn(len, 0.5, 1), SAMPLE_RATE).unwrap();
        let noise = randn(len, 0.5, 2);
        // Scale noise to exactly equal power.
        let pr: f64 = r.samples.iter().map(|v| v * v).sum();
        let pn: f64 = noise.iter().map(|v| v * v).sum();
        let scale = (pr / pn).sqrt();
        let est = Waveform::new(
            r.samples.iter().zip(&noise).map(|(a, b)| a + scale * b).collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        let v = seg_snr(&r, &est).unwrap();
        assert!(v.abs() < 1.0, "expected ~0 dB, got {v}");

        // Matches an independent frame loop.
        let mut acc = 0.0;
        let mut count = 0;
        let mut start = 0;
        while start + 256 <= len {
            let re: f64 = r.samples[start..start + 256].iter().map(|v| v * v).sum();
            if re > 1e-10 {
                let ee: f64 = (start..start + 256)
                    .map(|i| (est.samples[i] - r.samples[i]).powi(2))
                    .sum();
                acc += (10.0 * (re / ee).log10()).clamp(-10.0, 35.0);
                count += 1;
            }
            start += 128;
        }
        assert!((v - acc / count as f64).abs() < 1e-12);
    }

    #[test]
    fn seg_snr_silent_reference_errors() {
        let z = Waveform::new(vec![0.0; 4000], SAMPLE_RATE).unwrap();
        let e = sine(100.0, 4000);
        assert!(seg_snr(&z, &e).is_err());
    }

    #[test]
    fn lsd_zero_for_identical() {
        let r = sine(700.0, 8000);
        let v = log_spectral_distance(&r, &r, &StftConfig::default()).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn lsd_constant_scale_offset() {
        let r = Waveform::new(randn(16_000, 0.4, 3), SAMPLE_RATE).unwrap();
        let doubled = Waveform::new(r.samples.iter().map(|s| 2.0 * s).collect(), SAMPLE_RATE)
            .unwrap();
        let v = log_spectral_distance(&r, &doubled, &StftConfig::default()).unwrap();
        // All bins shift by 20*log10(2); eps perturbs only near-silent bins.
        assert!((v - 20.0 * 2f64.log10()).abs() < 0.05, "got {v}");
    }

    #[test]
    fn aggregate_matches_brute_force() {
        let mut report = MetricReport::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..30 {
            report.push(MetricRow {
                utt: format!("u{i}"),
                condition: if i % 2 == 0 {
                    NoiseCondition::Seen
                } else {
                    NoiseCondition::Unseen
                },
                snr_db: [-5.0, 0.0, 5.0][i % 3],
                si_sdr: rng.random_range(-5.0..20.0),
                seg_snr: rng.random_range(-10.0..35.0),
                lsd: rng.random_range(0.0..10.0),
            });
        }
        for cell in report.aggregate() {
            let members: Vec<&MetricRow> = report
                .rows
                .iter()
                .filter(|r| r.condition == cell.condition && r.snr_db == cell.snr_db)
                .collect();
            assert_eq!(members.len(), cell.count);
            let mean: f64 =
                members.iter().map(|r| r.si_sdr).sum::<f64>() / members.len() as f64;
            assert!((mean - cell.si_sdr).abs() < 1e-12);
        }
    }
}
