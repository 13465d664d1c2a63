//! Operator surface: corpus mixing, training, enhancement, evaluation, and
//! filter-response export behind one binary with subcommands.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use crate::dataset::{
    build_manifests, mix_at_snr, read_wav, write_wav, Manifest, MixSpec, DEFAULT_SNR_GRID,
};
use crate::dsp::{
    apply_mask, edge_pad, edge_trim, log_magnitude, magnitude, recursive_mean_normalize,
    reconstruct_with_noisy_phase, stft, StftConfig, Waveform, DEFAULT_LOG_FLOOR,
    DEFAULT_NORM_LAMBDA,
};
use crate::error::{Error, Result};
use crate::loss::{EmphasisMode, LossConfig};
use crate::metrics::{log_spectral_distance, seg_snr, si_sdr, MetricReport, MetricRow};
use crate::model::{
    forward, load_checkpoint, save_checkpoint, train, ModelConfig, Params, TrainConfig,
    TrainExample,
};
use crate::preemphasis::{bin_freq, elp_response, sp_response, EmphasisWeights, SpConfig};

#[derive(Parser, Debug)]
#[command(name = "enhance", about = "Spectral-masking speech enhancement toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmphasisFlag {
    None,
    Sp,
    Elp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleFlag {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResponseKind {
    Sp,
    Elp,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build split manifests and write SNR-controlled mixtures.
    Mix {
        #[arg(long)]
        clean_dir: PathBuf,
        #[arg(long)]
        noise_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated SNR grid in dB.
        #[arg(long)]
        snrs: Option<String>,
        /// Split ratio as train:val:test.
        #[arg(long, default_value = "4:1:1")]
        ratio: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
        /// Optional key=value config file; flags win on conflict.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the mask estimator on mixed manifests.
    Train {
        #[arg(long)]
        train_manifest: PathBuf,
        #[arg(long)]
        val_manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = EmphasisFlag::None)]
        emphasis: EmphasisFlag,
        /// Sharpness of the standard pre-emphasis response, 0 < alpha < 1.
        #[arg(long)]
        alpha: Option<f64>,
        /// Apply cubic-root intensity-to-loudness compression in the loss.
        #[arg(long, default_value_t = false)]
        i2l: bool,
        #[arg(long, value_enum, default_value_t = ScaleFlag::Desk)]
        scale: ScaleFlag,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Smoothing factor of the recursive feature normalization.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a trained model over noisy audio.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A noisy WAV file or a manifest (.jsonl) of mixtures.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score enhanced files against the manifest's clean references.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        enhanced_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Export an emphasis weight curve as CSV (bin, freq_hz, weight).
    Response {
        #[arg(long, value_enum)]
        kind: ResponseKind,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 16_000.0)]
        fs: f64,
        #[arg(long, default_value_t = 257)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Process exit codes: 0 success, 1 usage error, 2 data error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) | Error::Config(_) => 1,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mix {
            clean_dir,
            noise_dir,
            out_dir,
            snrs,
            ratio,
            seed,
            jobs,
            config,
        } => cmd_mix(&clean_dir, &noise_dir, &out_dir, snrs, &ratio, seed, jobs, config),
        Command::Train {
            train_manifest,
            val_manifest,
            out_dir,
            emphasis,
            alpha,
            i2l,
            scale,
            epochs,
            patience,
            batch_size,
            seed,
            lambda,
            config,
        } => cmd_train(TrainArgs {
            train_manifest,
            val_manifest,
            out_dir,
            emphasis,
            alpha,
            i2l,
            scale,
            epochs,
            patience,
            batch_size,
            seed,
            lambda,
            config,
        }),
        Command::Enhance {
            checkpoint,
            input,
            out_dir,
            lambda,
            jobs,
            config,
        } => cmd_enhance(&checkpoint, &input, &out_dir, lambda, jobs, config),
        Command::Eval {
            manifest,
            enhanced_dir,
            out_dir,
            jobs,
        } => cmd_eval(&manifest, &enhanced_dir, &out_dir, jobs),
        Command::Response {
            kind,
            alpha,
            fs,
            bins,
            out,
        } => cmd_response(kind, alpha, fs, bins, &out),
    }
}

// ---------------------------------------------------------------------------
// Config-file merging

fn load_config_file(path: Option<&Path>) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    let Some(path) = path else { return Ok(map) };
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(format!("read {path:?}"), e))?;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{path:?} line {}: expected key = value",
                i + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn resolve<T: std::str::FromStr>(
    flag: Option<T>,
    file: &HashMap<String, String>,
    key: &str,
    default: T,
) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(raw) => raw
            .parse()
            .map_err(|_| Error::Config(format!("config key {key}: cannot parse {raw:?}"))),
        None => Ok(default),
    }
}

fn default_jobs() -> usize {
    std::env::var("ENHANCE_JOBS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&j| j >= 1)
        .unwrap_or(1)
}

/// Deterministically ordered parallel map over an item list.
fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<Result<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots_mutex = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if idx >= items.len() {
                    break;
                }
                let r = f(&items[idx]);
                slots_mutex.lock().unwrap()[idx] = Some(r);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

fn write_snapshot<S: serde::Serialize>(out_dir: &Path, name: &str, snapshot: &S) -> Result<()> {
    let path = out_dir.join(name);
    let json = serde_json::to_string_pretty(snapshot).map_err(|e| Error::Json {
        context: "serialize run config".into(),
        source: e,
    })?;
    std::fs::write(&path, json).map_err(|e| Error::io(format!("write {path:?}"), e))
}

// ---------------------------------------------------------------------------
// Pipeline helpers shared by train/enhance and the test suites

/// Framing derived from the model's bin count (window 2(K-1), 50% overlap).
pub fn stft_config_for_bins(num_bins: usize) -> StftConfig {
    StftConfig {
        window_len: 2 * (num_bins - 1),
        hop: num_bins - 1,
        num_bins,
    }
}

/// Build the training example for one mixture: normalized log-magnitude
/// features plus noisy and clean magnitude spectra.
pub fn make_example(
    noisy: &Waveform,
    clean: &Waveform,
    cfg: &StftConfig,
    lambda: f64,
) -> Result<TrainExample> {
    // Edge-padded framing matches the inference path exactly.
    let noisy_spec = stft(&edge_pad(noisy, cfg)?, cfg)?;
    let noisy_mag = magnitude(&noisy_spec);
    let logmag = log_magnitude(&noisy_mag, DEFAULT_LOG_FLOOR)?;
    let (features, _) = recursive_mean_normalize(&logmag, lambda, None)?;
    let clean_mag = magnitude(&stft(&edge_pad(clean, cfg)?, cfg)?);
    Ok(TrainExample {
        features,
        noisy_mag,
        clean_mag,
    })
}

/// Full inference path: STFT, features, mask, masking, noisy-phase
/// resynthesis. The signal is edge-padded around analysis/synthesis so the
/// window-sum division stays well-conditioned; output length equals input
/// length.
pub fn enhance_waveform(
    noisy: &Waveform,
    params: &Params,
    mcfg: &ModelConfig,
    lambda: f64,
) -> Result<Waveform> {
    let cfg = stft_config_for_bins(mcfg.num_bins);
    let noisy_spec = stft(&edge_pad(noisy, &cfg)?, &cfg)?;
    let noisy_mag = magnitude(&noisy_spec);
    let logmag = log_magnitude(&noisy_mag, DEFAULT_LOG_FLOOR)?;
    let (features, _) = recursive_mean_normalize(&logmag, lambda, None)?;
    let mask = forward(&features, params, mcfg)?;
    let est = apply_mask(&mask, &noisy_mag)?;
    let out = reconstruct_with_noisy_phase(&est, &noisy_spec)?;
    edge_trim(&out, &cfg, noisy.len())
}

/// Build the per-bin weight vector for a loss configuration, if any.
pub fn weights_for(lcfg: &LossConfig, fs: f64, num_bins: usize) -> Result<Option<EmphasisWeights>> {
    match lcfg.emphasis {
        EmphasisMode::None => Ok(None),
        EmphasisMode::Sp(sp) => Ok(Some(sp_response(&sp, fs, num_bins)?)),
        EmphasisMode::Elp => Ok(Some(elp_response(fs, num_bins)?)),
    }
}

// ---------------------------------------------------------------------------
// mix

fn parse_ratio(ratio: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = ratio.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "ratio must look like 4:1:1, got {ratio:?}"
        )));
    }
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("ratio must be three integers, got {ratio:?}")))?;
    Ok((nums[0], nums[1], nums[2]))
}

fn parse_snrs(raw: Option<&str>) -> Result<Vec<f64>> {
    match raw {
        None => Ok(DEFAULT_SNR_GRID.to_vec()),
        Some(s) => s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad SNR value {p:?}")))
            })
            .collect(),
    }
}

#[derive(serde::Serialize)]
struct MixSnapshot {
    clean_dir: String,
    noise_dir: String,
    snr_grid: Vec<f64>,
    ratio: (usize, usize, usize),
    seed: u64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_mix(
    clean_dir: &Path,
    noise_dir: &Path,
    out_dir: &Path,
    snrs: Option<String>,
    ratio: &str,
    seed: u64,
    jobs: Option<usize>,
    config: Option<PathBuf>,
) -> Result<()> {
    let file_cfg = load_config_file(config.as_deref())?;
    let snrs = parse_snrs(
        snrs.as_deref()
            .or_else(|| file_cfg.get("snrs").map(String::as_str)),
    )?;
    let ratio = parse_ratio(
        file_cfg
            .get("ratio")
            .map(String::as_str)
            .filter(|_| ratio == "4:1:1")
            .unwrap_or(ratio),
    )?;
    let jobs = resolve(jobs, &file_cfg, "jobs", default_jobs())?;
    if !noise_dir.is_dir() {
        return Err(Error::InsufficientMaterial(format!(
            "noise directory {noise_dir:?} does not exist"
        )));
    }
    if !clean_dir.is_dir() {
        return Err(Error::InsufficientMaterial(format!(
            "clean directory {clean_dir:?} does not exist"
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("create {out_dir:?}"), e))?;

    let mut manifests = build_manifests(clean_dir, noise_dir, ratio, &snrs, seed)?;
    for manifest in manifests.iter_mut() {
        let split_dir = out_dir.join(manifest.split.name());
        std::fs::create_dir_all(&split_dir)
            .map_err(|e| Error::io(format!("create {split_dir:?}"), e))?;

        let results = par_map(jobs, &manifest.entries, |entry| {
            let clean = read_wav(Path::new(&entry.clean))?;
            let noise = read_wav(Path::new(&entry.noise))?;
            let spec = MixSpec {
                clean_id: entry.clean.clone(),
                noise_id: entry.noise.clone(),
                snr_db: entry.snr_db,
                noise_offset: entry.offset,
            };
            let mixed = mix_at_snr(&clean, &noise, &spec)?;
            let rel = format!("{}/{}", manifest.split.name(), entry.noisy);
            write_wav(&out_dir.join(&rel), &mixed.noisy)?;
            Ok((mixed.gain, mixed.peak_scale, rel))
        });
        for (entry, result) in manifest.entries.iter_mut().zip(results) {
            let (gain, peak_scale, rel) = result.map_err(|e| {
                Error::InsufficientMaterial(format!("mixing {}: {e}", entry.noisy))
            })?;
            entry.gain = gain;
            entry.peak_scale = peak_scale;
            entry.noisy = rel;
        }
        manifest.save(&out_dir.join(format!("{}.jsonl", manifest.split.name())))?;
    }
    write_snapshot(
        out_dir,
        "mix_config.json",
        &MixSnapshot {
            clean_dir: clean_dir.to_string_lossy().into_owned(),
            noise_dir: noise_dir.to_string_lossy().into_owned(),
            snr_grid: snrs,
            ratio,
            seed,
        },
    )?;
    println!(
        "train {} / val {} / test {}",
        manifests[0].entries.len(),
        manifests[1].entries.len(),
        manifests[2].entries.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

pub struct TrainArgs {
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub out_dir: PathBuf,
    pub emphasis: EmphasisFlag,
    pub alpha: Option<f64>,
    pub i2l: bool,
    pub scale: ScaleFlag,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub config: Option<PathBuf>,
}

/// Resolve the loss configuration from flags; --alpha is only meaningful
/// with standard pre-emphasis.
pub fn loss_config_from_flags(
    emphasis: EmphasisFlag,
    alpha: Option<f64>,
    i2l: bool,
) -> Result<LossConfig> {
    let mode = match emphasis {
        EmphasisFlag::None => {
            if alpha.is_some() {
                return Err(Error::Config(
                    "--alpha requires --emphasis sp".into(),
                ));
            }
            EmphasisMode::None
        }
        EmphasisFlag::Elp => {
            if alpha.is_some() {
                return Err(Error::Config(
                    "--alpha cannot be combined with --emphasis elp".into(),
                ));
            }
            EmphasisMode::Elp
        }
        EmphasisFlag::Sp => {
            let sp = SpConfig {
                alpha: alpha.unwrap_or(SpConfig::default().alpha),
            };
            sp.validate()?;
            EmphasisMode::Sp(sp)
        }
    };
    Ok(LossConfig {
        emphasis: mode,
        i2l,
        ..Default::default()
    })
}

fn load_examples(manifest: &Manifest, base: &Path, cfg: &StftConfig, lambda: f64) -> Result<Vec<TrainExample>> {
    manifest
        .entries
        .iter()
        .map(|entry| {
            let noisy = read_wav(&base.join(&entry.noisy))?;
            let clean_raw = read_wav(Path::new(&entry.clean))?;
            let clean = Waveform::new(
                clean_raw.samples.iter().map(|s| s * entry.peak_scale).collect(),
                clean_raw.sample_rate,
            )?;
            make_example(&noisy, &clean, cfg, lambda)
        })
        .collect()
}

#[derive(serde::Serialize)]
struct TrainSnapshot {
    model: ModelConfig,
    train: TrainConfig,
    loss: LossConfig,
    stft: StftConfig,
    lambda: f64,
    train_manifest: String,
    val_manifest: String,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file_cfg = load_config_file(args.config.as_deref())?;
    let lcfg = loss_config_from_flags(args.emphasis, args.alpha, args.i2l)?;
    let lambda = resolve(args.lambda, &file_cfg, "lambda", DEFAULT_NORM_LAMBDA)?;
    let mcfg = match args.scale {
        ScaleFlag::Desk => ModelConfig::desk(257, args.seed),
        ScaleFlag::Paper => ModelConfig::paper(257, args.seed),
    };
    let tcfg = TrainConfig {
        batch_size: resolve(args.batch_size, &file_cfg, "batch_size", 8)?,
        max_epochs: resolve(args.epochs, &file_cfg, "epochs", 200)?,
        patience: resolve(args.patience, &file_cfg, "patience", 15)?,
        shuffle_seed: args.seed,
        ..Default::default()
    };
    tcfg.validate()?;

    let stft_cfg = stft_config_for_bins(mcfg.num_bins);
    let train_manifest = Manifest::load(&args.train_manifest)?;
    let val_manifest = Manifest::load(&args.val_manifest)?;
    let train_base = args.train_manifest.parent().unwrap_or(Path::new("."));
    let val_base = args.val_manifest.parent().unwrap_or(Path::new("."));
    let train_set = load_examples(&train_manifest, train_base, &stft_cfg, lambda)?;
    let val_set = load_examples(&val_manifest, val_base, &stft_cfg, lambda)?;

    let weights = weights_for(&lcfg, 16_000.0, mcfg.num_bins)?;
    let (params, history) = train(&train_set, &val_set, &mcfg, &tcfg, &lcfg, weights.as_ref())?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::io(format!("create {:?}", args.out_dir), e))?;
    save_checkpoint(&args.out_dir.join("model.ckpt"), &params, &mcfg)?;
    let log_path = args.out_dir.join("train_log.jsonl");
    let log = File::create(&log_path).map_err(|e| Error::io(format!("create {log_path:?}"), e))?;
    let mut log = BufWriter::new(log);
    for record in &history.epochs {
        let line = serde_json::to_string(record).map_err(|e| Error::Json {
            context: "serialize epoch record".into(),
            source: e,
        })?;
        writeln!(log, "{line}").map_err(|e| Error::io(format!("write {log_path:?}"), e))?;
    }
    write_snapshot(
        &args.out_dir,
        "train_config.json",
        &TrainSnapshot {
            model: mcfg,
            train: tcfg,
            loss: lcfg,
            stft: stft_cfg,
            lambda,
            train_manifest: args.train_manifest.to_string_lossy().into_owned(),
            val_manifest: args.val_manifest.to_string_lossy().into_owned(),
        },
    )?;
    println!(
        "best epoch {} (val loss {:.6}), stopped: {:?}",
        history.best_epoch, history.best_val_loss, history.stop_reason
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// enhance

#[derive(serde::Serialize)]
struct EnhanceSnapshot {
    checkpoint: String,
    input: String,
    lambda: f64,
    model: ModelConfig,
}

fn cmd_enhance(
    checkpoint: &Path,
    input: &Path,
    out_dir: &Path,
    lambda: Option<f64>,
    jobs: Option<usize>,
    config: Option<PathBuf>,
) -> Result<()> {
    let file_cfg = load_config_file(config.as_deref())?;
    let lambda = resolve(lambda, &file_cfg, "lambda", DEFAULT_NORM_LAMBDA)?;
    let jobs = resolve(jobs, &file_cfg, "jobs", default_jobs())?;
    let (params, mcfg) = load_checkpoint(checkpoint)?;
    // A config file may pin the expected framing; the checkpoint must agree.
    let num_bins = resolve(None, &file_cfg, "num_bins", mcfg.num_bins)?;
    if num_bins != mcfg.num_bins {
        return Err(Error::Config(format!(
            "checkpoint has {} frequency bins but the config expects {num_bins}",
            mcfg.num_bins
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("create {out_dir:?}"), e))?;

    let inputs: Vec<(PathBuf, String)> = if input.extension().is_some_and(|e| e == "jsonl") {
        let manifest = Manifest::load(input)?;
        let base = input.parent().unwrap_or(Path::new("."));
        manifest
            .entries
            .iter()
            .map(|e| {
                let name = Path::new(&e.noisy)
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| e.noisy.clone());
                (base.join(&e.noisy), name)
            })
            .collect()
    } else {
        let name = input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "enhanced.wav".into());
        vec![(input.to_path_buf(), name)]
    };

    let results = par_map(jobs, &inputs, |(path, name)| {
        let noisy = read_wav(path)?;
        let enhanced = if noisy.samples.iter().all(|&s| s == 0.0) {
            // Silence in, silence out; the mask has nothing to scale.
            noisy.clone()
        } else {
            enhance_waveform(&noisy, &params, &mcfg, lambda)?
        };
        debug_assert_eq!(enhanced.len(), noisy.len());
        write_wav(&out_dir.join(name), &enhanced)?;
        Ok(())
    });
    for ((path, _), r) in inputs.iter().zip(results) {
        r.map_err(|e| Error::InsufficientMaterial(format!("enhancing {path:?}: {e}")))?;
    }
    write_snapshot(
        out_dir,
        "enhance_config.json",
        &EnhanceSnapshot {
            checkpoint: checkpoint.to_string_lossy().into_owned(),
            input: input.to_string_lossy().into_owned(),
            lambda,
            model: mcfg,
        },
    )?;
    println!("enhanced {} file(s)", inputs.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(manifest_path: &Path, enhanced_dir: &Path, out_dir: &Path, jobs: Option<usize>) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.entries.is_empty() {
        return Err(Error::Config(format!("manifest {manifest_path:?} is empty")));
    }
    let jobs = jobs.unwrap_or_else(default_jobs);
    let missing: Vec<String> = manifest
        .entries
        .iter()
        .filter_map(|e| {
            let name = Path::new(&e.noisy).file_name()?;
            let p = enhanced_dir.join(name);
            (!p.is_file()).then(|| p.to_string_lossy().into_owned())
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::InsufficientMaterial(format!(
            "missing enhanced files: {}",
            missing.join(", ")
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("create {out_dir:?}"), e))?;

    let stft_cfg = StftConfig::default();
    let rows = par_map(jobs, &manifest.entries, |entry| {
        let clean_raw = read_wav(Path::new(&entry.clean))?;
        let reference = Waveform::new(
            clean_raw.samples.iter().map(|s| s * entry.peak_scale).collect(),
            clean_raw.sample_rate,
        )?;
        let name = Path::new(&entry.noisy).file_name().unwrap();
        let estimate = read_wav(&enhanced_dir.join(name))?;
        let utt = Path::new(&entry.noisy)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| entry.noisy.clone());
        Ok(MetricRow {
            utt,
            condition: entry.condition,
            snr_db: entry.snr_db,
            si_sdr: si_sdr(&reference, &estimate)?,
            seg_snr: seg_snr(&reference, &estimate)?,
            lsd: log_spectral_distance(&reference, &estimate, &stft_cfg)?,
        })
    });
    let mut report = MetricReport::default();
    for (entry, row) in manifest.entries.iter().zip(rows) {
        report.push(row.map_err(|e| {
            Error::InsufficientMaterial(format!("evaluating {}: {e}", entry.noisy))
        })?);
    }
    let rows_path = out_dir.join("metrics_utt.csv");
    let cells_path = out_dir.join("metrics_cells.csv");
    report
        .write_rows_csv(File::create(&rows_path).map_err(|e| Error::io(format!("create {rows_path:?}"), e))?)
        .map_err(|e| Error::io(format!("write {rows_path:?}"), e))?;
    report
        .write_cells_csv(File::create(&cells_path).map_err(|e| Error::io(format!("create {cells_path:?}"), e))?)
        .map_err(|e| Error::io(format!("write {cells_path:?}"), e))?;
    println!("evaluated {} utterances", report.rows.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// response

fn cmd_response(
    kind: ResponseKind,
    alpha: Option<f64>,
    fs: f64,
    bins: usize,
    out: &Path,
) -> Result<()> {
    let weights = match kind {
        ResponseKind::Sp => {
            let sp = SpConfig {
                alpha: alpha.unwrap_or(SpConfig::default().alpha),
            };
            sp_response(&sp, fs, bins)?
        }
        ResponseKind::Elp => {
            if alpha.is_some() {
                return Err(Error::Config(
                    "--alpha cannot be combined with --kind elp".into(),
                ));
            }
            elp_response(fs, bins)?
        }
    };
    let file = File::create(out).map_err(|e| Error::io(format!("create {out:?}"), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(format!("write {out:?}"), e);
    writeln!(w, "bin,freq_hz,weight").map_err(io_err)?;
    for (k, &weight) in weights.weights.iter().enumerate() {
        writeln!(w, "{k},{:.9e},{weight:.9e}", bin_freq(k, fs, bins)).map_err(io_err)?;
    }
    Ok(())
}

/// Ideal amplitude mask min(|X|/|Y|, 1): the oracle upper-bound reference.
pub fn ideal_amplitude_mask(
    clean_mag: &Array2<f64>,
    noisy_mag: &Array2<f64>,
) -> Result<crate::dsp::Mask> {
    if clean_mag.dim() != noisy_mag.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", noisy_mag.dim()),
            got: format!("{:?}", clean_mag.dim()),
        });
    }
    let values = ndarray::Zip::from(clean_mag)
        .and(noisy_mag)
        .map_collect(|&x, &y| if y > 0.0 { (x / y).min(1.0) } else { 0.0 });
    crate::dsp::Mask::new(values)
}
