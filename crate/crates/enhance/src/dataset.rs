//! Corpus handling: 16 kHz mono PCM16 WAV I/O, SNR-controlled additive
//! mixing, and split manifests that keep clean speakers and noise
//! realizations disjoint across train/validation/test.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// The SNR grid used throughout: {-5, 0, 5, 10, 15, 20} dB.
pub const DEFAULT_SNR_GRID: [f64; 6] = [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0];

// ---------------------------------------------------------------------------
// WAV I/O

fn read_exact_or(path: &Path, r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Io {
        context: format!("reading {what} from {path:?}"),
        source: e,
    })
}

fn u32le(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn u16le(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

/// Read a mono 16-bit PCM 16 kHz RIFF file; samples scale to [-1, 1] by
/// 1/32768. Anything else is rejected with a format error.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let file = File::open(path).map_err(|e| Error::io(format!("open {path:?}"), e))?;
    let mut r = BufReader::new(file);
    let mut hdr = [0u8; 12];
    read_exact_or(path, &mut r, &mut hdr, "RIFF header")?;
    if &hdr[0..4] != b"RIFF" || &hdr[8..12] != b"WAVE" {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: "not a RIFF/WAVE file".into(),
        });
    }
    let mut fmt_ok = false;
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut chunk_hdr = [0u8; 8];
        match r.read_exact(&mut chunk_hdr) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(Error::io(format!("read chunk header in {path:?}"), e)),
        }
        let id = &chunk_hdr[0..4];
        let size = u32le(&chunk_hdr[4..8]) as usize;
        if id == b"fmt " {
            let mut body = vec![0u8; size];
            read_exact_or(path, &mut r, &mut body, "fmt chunk")?;
            let audio_format = u16le(&body[0..2]);
            let channels = u16le(&body[2..4]);
            let sample_rate = u32le(&body[4..8]);
            let bits = u16le(&body[14..16]);
            if audio_format != 1 {
                return Err(Error::UnsupportedFormat {
                    path: path.into(),
                    reason: format!("audio format {audio_format}, only PCM (1) supported"),
                });
            }
            if channels != 1 {
                return Err(Error::UnsupportedFormat {
                    path: path.into(),
                    reason: format!("{channels} channels, only mono supported"),
                });
            }
            if sample_rate != SAMPLE_RATE {
                return Err(Error::UnsupportedFormat {
                    path: path.into(),
                    reason: format!("{sample_rate} Hz, only 16000 Hz supported"),
                });
            }
            if bits != 16 {
                return Err(Error::UnsupportedFormat {
                    path: path.into(),
                    reason: format!("{bits}-bit samples, only 16-bit supported"),
                });
            }
            fmt_ok = true;
        } else if id == b"data" {
            let mut body = vec![0u8; size];
            read_exact_or(path, &mut r, &mut body, "data chunk")?;
            data = Some(body);
        } else {
            // Skip unknown chunks (word aligned).
            let skip = size + (size & 1);
            std::io::copy(&mut r.by_ref().take(skip as u64), &mut std::io::sink())
                .map_err(|e| Error::io(format!("skip chunk in {path:?}"), e))?;
            continue;
        }
        if size & 1 == 1 {
            let mut pad = [0u8; 1];
            let _ = r.read_exact(&mut pad);
        }
    }
    if !fmt_ok {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: "missing fmt chunk".into(),
        });
    }
    let data = data.ok_or_else(|| Error::UnsupportedFormat {
        path: path.into(),
        reason: "missing data chunk".into(),
    })?;
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Waveform::new(samples, SAMPLE_RATE)
}

/// Write a waveform as mono PCM16 at 16 kHz. Quantization rounds half away
/// from zero; out-of-range samples are clipped and counted.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<usize> {
    let file = File::create(path).map_err(|e| Error::io(format!("create {path:?}"), e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(format!("write {path:?}"), e);
    let data_len = (w.len() * 2) as u32;
    out.write_all(b"RIFF").map_err(io_err)?;
    out.write_all(&(36 + data_len).to_le_bytes()).map_err(io_err)?;
    out.write_all(b"WAVE").map_err(io_err)?;
    out.write_all(b"fmt ").map_err(io_err)?;
    out.write_all(&16u32.to_le_bytes()).map_err(io_err)?;
    out.write_all(&1u16.to_le_bytes()).map_err(io_err)?; // PCM
    out.write_all(&1u16.to_le_bytes()).map_err(io_err)?; // mono
    out.write_all(&SAMPLE_RATE.to_le_bytes()).map_err(io_err)?;
    out.write_all(&(SAMPLE_RATE * 2).to_le_bytes()).map_err(io_err)?; // byte rate
    out.write_all(&2u16.to_le_bytes()).map_err(io_err)?; // block align
    out.write_all(&16u16.to_le_bytes()).map_err(io_err)?;
    out.write_all(b"data").map_err(io_err)?;
    out.write_all(&data_len.to_le_bytes()).map_err(io_err)?;
    let mut clipped = 0usize;
    for &s in &w.samples {
        let scaled = s * 32768.0;
        // Round half away from zero.
        let rounded = if scaled >= 0.0 {
            (scaled + 0.5).floor()
        } else {
            (scaled - 0.5).ceil()
        };
        let q = if rounded > i16::MAX as f64 {
            clipped += 1;
            i16::MAX
        } else if rounded < i16::MIN as f64 {
            clipped += 1;
            i16::MIN
        } else {
            rounded as i16
        };
        out.write_all(&q.to_le_bytes()).map_err(io_err)?;
    }
    Ok(clipped)
}

// ---------------------------------------------------------------------------
// SNR mixing

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MixSpec {
    pub clean_id: String,
    pub noise_id: String,
    pub snr_db: f64,
    pub noise_offset: usize,
}

pub struct MixOutput {
    pub noisy: Waveform,
    /// Clean reference after peak protection (identical to the input clean
    /// when no rescaling was needed).
    pub clean: Waveform,
    pub gain: f64,
    pub peak_scale: f64,
}

fn power(samples: &[f64]) -> f64 {
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

/// Additive mixing at an exact SNR: y = x + g*noise_segment with
/// g = sqrt(P_x / (P_n * 10^(snr/10))), powers measured over the full
/// utterance. If the mix would exceed [-1, 1], clean and scaled noise are
/// jointly rescaled to 0.95 peak; the SNR is unaffected.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, spec: &MixSpec) -> Result<MixOutput> {
    let n = clean.len();
    if noise.len() < spec.noise_offset + n {
        return Err(Error::invalid(format!(
            "noise segment too short: need {} samples at offset {}, have {}",
            n,
            spec.noise_offset,
            noise.len()
        )));
    }
    let seg = &noise.samples[spec.noise_offset..spec.noise_offset + n];
    let p_clean = power(&clean.samples);
    let p_noise = power(seg);
    if p_clean <= 0.0 || p_noise <= 0.0 {
        return Err(Error::invalid("zero-power clean or noise signal"));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(spec.snr_db / 10.0))).sqrt();
    let mixed: Vec<f64> = clean
        .samples
        .iter()
        .zip(seg.iter())
        .map(|(&x, &v)| x + gain * v)
        .collect();
    let peak = mixed.iter().fold(0.0f64, |a, &s| a.max(s.abs()));
    let peak_scale = if peak > 1.0 { 0.95 / peak } else { 1.0 };
    let noisy = Waveform::new(mixed.iter().map(|s| s * peak_scale).collect(), SAMPLE_RATE)?;
    let clean_out = Waveform::new(
        clean.samples.iter().map(|s| s * peak_scale).collect(),
        SAMPLE_RATE,
    )?;
    Ok(MixOutput {
        noisy,
        clean: clean_out,
        gain,
        peak_scale,
    })
}

/// Re-measure the SNR of an additive mixture given its parts.
pub fn measured_snr_db(clean: &[f64], scaled_noise: &[f64]) -> f64 {
    10.0 * (power(clean) / power(scaled_noise)).log10()
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseCondition {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub clean: String,
    pub noise: String,
    pub snr_db: f64,
    pub offset: usize,
    pub gain: f64,
    pub peak_scale: f64,
    pub condition: NoiseCondition,
    pub noisy: String,
}

impl ManifestEntry {
    /// Stable output filename for the mixture.
    pub fn noisy_name(clean: &str, noise: &str, snr_db: f64) -> String {
        let stem = |p: &str| {
            Path::new(p)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.to_string())
        };
        format!("{}__{}__snr{:+}.wav", stem(clean), stem(noise), snr_db)
    }
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// JSON-lines, one entry per record, stable field order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(format!("create {path:?}"), e))?;
        let mut w = BufWriter::new(file);
        for entry in &self.entries {
            let line = serde_json::to_string(entry).map_err(|e| Error::Json {
                context: "serialize manifest entry".into(),
                source: e,
            })?;
            writeln!(w, "{line}").map_err(|e| Error::io(format!("write {path:?}"), e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("read {path:?}"), e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Json {
                context: format!("{path:?} line {}", i + 1),
                source: e,
            })?;
            entries.push(entry);
        }
        let split = entries.first().map(|e| e.split).unwrap_or(Split::Test);
        Ok(Manifest { split, entries })
    }
}

/// One source file and its length in samples.
#[derive(Debug, Clone)]
pub struct SourceFile {
    pub path: String,
    pub len: usize,
}

/// Deterministic three-way split plan following the enumeration protocol:
/// train/val pair every split-clean file with every seen noise and SNR;
/// test additionally crosses the unseen noises. Noise offsets are allocated
/// from per-split regions of each noise file so realizations never overlap
/// across splits.
pub fn plan_manifests(
    clean: &[SourceFile],
    noises: &[SourceFile],
    ratios: (usize, usize, usize),
    snr_grid: &[f64],
    seed: u64,
) -> Result<[Manifest; 3]> {
    if noises.len() < 2 {
        return Err(Error::InsufficientMaterial(
            "need at least 2 noise files to designate seen and unseen noises".into(),
        ));
    }
    if snr_grid.is_empty() {
        return Err(Error::InsufficientMaterial("empty SNR grid".into()));
    }
    let (r_train, r_val, r_test) = ratios;
    let r_sum = r_train + r_val + r_test;
    if r_sum == 0 || r_val == 0 || r_test == 0 || r_train == 0 {
        return Err(Error::Config("split ratios must all be positive".into()));
    }
    if clean.len() < 3 {
        return Err(Error::InsufficientMaterial(format!(
            "need at least 3 clean files for a three-way split, got {}",
            clean.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clean_order: Vec<usize> = (0..clean.len()).collect();
    clean_order.shuffle(&mut rng);
    let mut noise_order: Vec<usize> = (0..noises.len()).collect();
    noise_order.shuffle(&mut rng);

    // Largest-remainder apportionment of clean files, ties to train first.
    let n = clean.len();
    let exact = [
        n * r_train, // numerators over r_sum
        n * r_val,
        n * r_test,
    ];
    let mut counts = [exact[0] / r_sum, exact[1] / r_sum, exact[2] / r_sum];
    let mut assigned: usize = counts.iter().sum();
    let mut rema: Vec<(usize, usize)> = (0..3).map(|i| (exact[i] % r_sum, i)).collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut ri = 0;
    while assigned < n {
        counts[rema[ri % 3].1] += 1;
        assigned += 1;
        ri += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::InsufficientMaterial(format!(
            "split {counts:?} leaves an empty set for {n} clean files"
        )));
    }
    let train_clean: Vec<usize> = clean_order[..counts[0]].to_vec();
    let val_clean: Vec<usize> = clean_order[counts[0]..counts[0] + counts[1]].to_vec();
    let test_clean: Vec<usize> = clean_order[counts[0] + counts[1]..].to_vec();

    let n_seen = noises.len().div_ceil(2);
    let seen: Vec<usize> = noise_order[..n_seen].to_vec();
    let unseen: Vec<usize> = noise_order[n_seen..].to_vec();

    // Per-noise regions: [0, train_need) for train, then val, then test.
    let need = |ids: &[usize]| -> usize { ids.iter().map(|&i| clean[i].len).sum() };
    let needs = [need(&train_clean), need(&val_clean), need(&test_clean)];
    for &ni in seen.iter().chain(unseen.iter()) {
        let uses_all = seen.contains(&ni);
        let total = if uses_all {
            needs[0] + needs[1] + needs[2]
        } else {
            needs[2]
        };
        if noises[ni].len < total {
            return Err(Error::InsufficientMaterial(format!(
                "noise {} is {} samples but {} are needed for disjoint realizations",
                noises[ni].path, noises[ni].len, total
            )));
        }
    }

    let mut cursors = vec![[0usize; 3]; noises.len()];
    let region_start = |split: usize, seen_noise: bool| -> usize {
        if !seen_noise {
            // Unseen noises only ever serve the test split.
            return 0;
        }
        match split {
            0 => 0,
            1 => needs[0],
            _ => needs[0] + needs[1],
        }
    };

    let mut build = |split: Split,
                     split_idx: usize,
                     clean_ids: &[usize],
                     noise_ids: &[(usize, NoiseCondition)]|
     -> Manifest {
        let mut entries = Vec::new();
        let mut sorted_clean = clean_ids.to_vec();
        sorted_clean.sort();
        for &ci in &sorted_clean {
            for &(ni, cond) in noise_ids {
                let seen_noise = cond == NoiseCondition::Seen;
                let base = region_start(split_idx, seen_noise);
                let offset = base + cursors[ni][split_idx];
                cursors[ni][split_idx] += clean[ci].len;
                for &snr in snr_grid {
                    entries.push(ManifestEntry {
                        split,
                        clean: clean[ci].path.clone(),
                        noise: noises[ni].path.clone(),
                        snr_db: snr,
                        offset,
                        gain: 0.0,
                        peak_scale: 1.0,
                        condition: cond,
                        noisy: ManifestEntry::noisy_name(
                            &clean[ci].path,
                            &noises[ni].path,
                            snr,
                        ),
                    });
                }
            }
        }
        Manifest { split, entries }
    };

    let seen_list: Vec<(usize, NoiseCondition)> =
        seen.iter().map(|&i| (i, NoiseCondition::Seen)).collect();
    let mut test_list = seen_list.clone();
    test_list.extend(unseen.iter().map(|&i| (i, NoiseCondition::Unseen)));

    let train = build(Split::Train, 0, &train_clean, &seen_list);
    let val = build(Split::Val, 1, &val_clean, &seen_list);
    let test = build(Split::Test, 2, &test_clean, &test_list);
    Ok([train, val, test])
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(format!("read dir {dir:?}"), e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

/// Scan the clean and noise directories and plan the three manifests.
pub fn build_manifests(
    clean_dir: &Path,
    noise_dir: &Path,
    ratios: (usize, usize, usize),
    snr_grid: &[f64],
    seed: u64,
) -> Result<[Manifest; 3]> {
    let scan = |dir: &Path, what: &str| -> Result<Vec<SourceFile>> {
        let files = list_wavs(dir)?;
        if files.is_empty() {
            return Err(Error::InsufficientMaterial(format!(
                "no {what} WAV files in {dir:?}"
            )));
        }
        files
            .iter()
            .map(|p| {
                let w = read_wav(p)?;
                Ok(SourceFile {
                    path: p.to_string_lossy().into_owned(),
                    len: w.len(),
                })
            })
            .collect()
    };
    let clean = scan(clean_dir, "clean")?;
    let noises = scan(noise_dir, "noise")?;
    plan_manifests(&clean, &noises, ratios, snr_grid, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn noise_wave(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new(
            (0..len).map(|_| rng.random_range(-0.4..0.4)).collect(),
            SAMPLE_RATE,
        )
        .unwrap()
    }

    #[test]
    fn wav_scaling_rule() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.5, -0.25, 0.0], SAMPLE_RATE).unwrap();
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples[0], 16384.0 / 32768.0);
        assert_eq!(back.samples[1], -8192.0 / 32768.0);
        assert_eq!(back.samples[2], 0.0);
    }

    #[test]
    fn wav_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path1 = dir.path().join("a.wav");
        let path2 = dir.path().join("b.wav");
        let w = noise_wave(1000, 1);
        assert_eq!(write_wav(&path1, &w).unwrap(), 0);
        let back = read_wav(&path1).unwrap();
        write_wav(&path2, &back).unwrap();
        let b1 = std::fs::read(&path1).unwrap();
        let b2 = std::fs::read(&path2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn wav_clipping_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let w = Waveform::new(vec![1.5, -2.0, 0.1], SAMPLE_RATE).unwrap();
        assert_eq!(write_wav(&path, &w).unwrap(), 2);
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        // Minimal stereo header.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&40u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes()); // 2 channels
        bytes.extend_from_slice(&16_000u32.to_le_bytes());
        bytes.extend_from_slice(&64_000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, bytes).unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
    }

    #[test]
    fn equal_power_zero_db_gain_is_one() {
        let clean = noise_wave(4000, 2);
        let mut noise = clean.clone();
        noise.samples.rotate_left(123); // same power, different signal
        let spec = MixSpec {
            clean_id: "c".into(),
            noise_id: "n".into(),
            snr_db: 0.0,
            noise_offset: 0,
        };
        let out = mix_at_snr(&clean, &noise, &spec).unwrap();
        assert!((out.gain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn twenty_db_gain_is_tenth() {
        let clean = noise_wave(4000, 3);
        let mut noise = clean.clone();
        noise.samples.reverse();
        let spec = MixSpec {
            clean_id: "c".into(),
            noise_id: "n".into(),
            snr_db: 20.0,
            noise_offset: 0,
        };
        let out = mix_at_snr(&clean, &noise, &spec).unwrap();
        assert!((out.gain - 0.1).abs() < 1e-12);
    }

    #[test]
    fn remeasured_snr_matches_spec() {
        let clean = noise_wave(8000, 4);
        let noise = noise_wave(16_000, 5);
        for snr in DEFAULT_SNR_GRID {
            let spec = MixSpec {
                clean_id: "c".into(),
                noise_id: "n".into(),
                snr_db: snr,
                noise_offset: 100,
            };
            let out = mix_at_snr(&clean, &noise, &spec).unwrap();
            let scaled_noise: Vec<f64> = noise.samples[100..100 + 8000]
                .iter()
                .map(|v| v * out.gain * out.peak_scale)
                .collect();
            let measured = measured_snr_db(&out.clean.samples, &scaled_noise);
            assert!((measured - snr).abs() < 1e-9, "snr {snr}: {measured}");
            // Exact additivity before quantization.
            for i in 0..8000 {
                let resid = out.noisy.samples[i] - scaled_noise[i] - out.clean.samples[i];
                assert!(resid.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_power_rejected() {
        let silent = Waveform::new(vec![0.0; 100], SAMPLE_RATE).unwrap();
        let noise = noise_wave(200, 6);
        let spec = MixSpec {
            clean_id: "c".into(),
            noise_id: "n".into(),
            snr_db: 0.0,
            noise_offset: 0,
        };
        assert!(mix_at_snr(&silent, &noise, &spec).is_err());
        assert!(mix_at_snr(&noise_wave(100, 7), &silent, &spec).is_err());
    }

    fn fabricated(prefix: &str, n: usize, len: usize) -> Vec<SourceFile> {
        (0..n)
            .map(|i| SourceFile {
                path: format!("{prefix}{i}.wav"),
                len,
            })
            .collect()
    }

    #[test]
    fn miniature_counting_rule() {
        // 6 clean, 2 seen + 2 unseen noises, 6 SNRs, ratio 4:1:1.
        let clean = fabricated("clean", 6, 1000);
        let noises = fabricated("noise", 4, 1_000_000);
        let [train, val, test] =
            plan_manifests(&clean, &noises, (4, 1, 1), &DEFAULT_SNR_GRID, 1).unwrap();
        assert_eq!(train.entries.len(), 4 * 2 * 6);
        assert_eq!(val.entries.len(), 2 * 6);
        assert_eq!(test.entries.len(), 4 * 6);
    }

    #[test]
    fn paper_scale_counts() {
        // 300 clean files and 8 noises: 4800 / 1200 / 2400 entries.
        let clean = fabricated("clean", 300, 100);
        let noises = fabricated("noise", 8, 100_000_000);
        let [train, val, test] =
            plan_manifests(&clean, &noises, (4, 1, 1), &DEFAULT_SNR_GRID, 2).unwrap();
        assert_eq!(train.entries.len(), 4800);
        assert_eq!(val.entries.len(), 1200);
        assert_eq!(test.entries.len(), 2400);
    }

    #[test]
    fn splits_disjoint_in_clean_and_noise_ranges() {
        let clean = fabricated("clean", 9, 500);
        let noises = fabricated("noise", 4, 1_000_000);
        let [train, val, test] =
            plan_manifests(&clean, &noises, (4, 1, 1), &DEFAULT_SNR_GRID, 3).unwrap();
        let ids = |m: &Manifest| -> std::collections::HashSet<String> {
            m.entries.iter().map(|e| e.clean.clone()).collect()
        };
        let (a, b, c) = (ids(&train), ids(&val), ids(&test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));

        // Noise sample ranges disjoint across splits per noise file.
        let mut ranges: std::collections::HashMap<(String, Split), Vec<(usize, usize)>> =
            Default::default();
        for m in [&train, &val, &test] {
            for e in &m.entries {
                ranges
                    .entry((e.noise.clone(), e.split))
                    .or_default()
                    .push((e.offset, e.offset + 500));
            }
        }
        for ((noise, split), rs) in &ranges {
            for ((noise2, split2), rs2) in &ranges {
                if noise != noise2 || split == split2 {
                    continue;
                }
                for &(s1, e1) in rs {
                    for &(s2, e2) in rs2 {
                        assert!(e1 <= s2 || e2 <= s1, "{noise} {split:?}/{split2:?} overlap");
                    }
                }
            }
        }
    }

    #[test]
    fn manifests_deterministic_for_seed() {
        let clean = fabricated("clean", 7, 700);
        let noises = fabricated("noise", 4, 1_000_000);
        let a = plan_manifests(&clean, &noises, (4, 1, 1), &DEFAULT_SNR_GRID, 9).unwrap();
        let b = plan_manifests(&clean, &noises, (4, 1, 1), &DEFAULT_SNR_GRID, 9).unwrap();
        for (ma, mb) in a.iter().zip(b.iter()) {
            assert_eq!(ma.entries.len(), mb.entries.len());
            for (x, y) in ma.entries.iter().zip(mb.entries.iter()) {
                assert_eq!(serde_json::to_string(x).unwrap(), serde_json::to_string(y).unwrap());
            }
        }
    }

    #[test]
    fn insufficient_material_detected() {
        let clean = fabricated("clean", 6, 1000);
        assert!(plan_manifests(
            &clean,
            &fabricated("noise", 1, 1_000_000),
            (4, 1, 1),
            &DEFAULT_SNR_GRID,
            1
        )
        .is_err());
        // Noise too short for disjoint realizations.
        assert!(plan_manifests(
            &clean,
            &fabricated("noise", 4, 2000),
            (4, 1, 1),
            &DEFAULT_SNR_GRID,
            1
        )
        .is_err());
    }

    #[test]
    fn manifest_json_round_trip() {
        let clean = fabricated("clean", 6, 300);
        let noises = fabricated("noise", 4, 1_000_000);
        let [train, _, _] =
            plan_manifests(&clean, &noises, (4, 1, 1), &DEFAULT_SNR_GRID, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        train.save(&path).unwrap();
        let loaded = Manifest::load(&path).unwrap();
        assert_eq!(loaded.entries.len(), train.entries.len());
        assert_eq!(loaded.split, Split::Train);
    }
}
