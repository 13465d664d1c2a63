//! Mask-estimating network: a convolutional encoder, LSTM bottleneck, and
//! deconvolutional decoder with skip connections, plus Adam optimization and
//! the early-stopped training loop. Forward and backward passes are written
//! out for this fixed architecture family; a finite-difference check guards
//! the gradients.

mod adam;
mod checkpoint;
mod net;
mod params;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use net::{backward, forward, forward_cached, forward_streaming, ForwardCache, StreamState};
pub use params::{init_params, Layout, Params, TensorSpec};
pub use train::{
    train, EarlyStopping, EpochRecord, StopReason, TrainConfig, TrainExample, TrainHistory,
};

use crate::error::{Error, Result};

/// Architecture hyperparameters. Paper scale is (base_channels 8,
/// recurrent_hidden 1024); the desk default keeps the same shape at a size
/// trainable on one core.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub num_bins: usize,
    pub enc_layers: usize,
    pub base_channels: usize,
    pub kernel_freq: usize,
    pub stride_freq: usize,
    pub recurrent_layers: usize,
    pub recurrent_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk(257, 0)
    }
}

impl ModelConfig {
    pub fn desk(num_bins: usize, seed: u64) -> Self {
        ModelConfig {
            num_bins,
            enc_layers: 5,
            base_channels: 4,
            kernel_freq: 3,
            stride_freq: 2,
            recurrent_layers: 2,
            recurrent_hidden: 64,
            seed,
        }
    }

    pub fn paper(num_bins: usize, seed: u64) -> Self {
        ModelConfig {
            base_channels: 8,
            recurrent_hidden: 1024,
            ..ModelConfig::desk(num_bins, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_layers < 1 {
            return Err(Error::Config("need at least one encoder layer".into()));
        }
        if self.num_bins < 2 || self.base_channels < 1 || self.recurrent_layers < 1 {
            return Err(Error::Config("degenerate model configuration".into()));
        }
        if self.kernel_freq < 1 || self.stride_freq < 1 {
            return Err(Error::Config("kernel and stride must be >= 1".into()));
        }
        let g = Geometry::new(self);
        if *g.freq_sizes.last().unwrap() < 1 {
            return Err(Error::Config("encoder collapses the frequency axis".into()));
        }
        Ok(())
    }

    /// Encoder output channels of layer i (1-based).
    pub fn enc_channels(&self, i: usize) -> usize {
        self.base_channels << (i - 1)
    }
}

/// Per-layer shape bookkeeping derived from a `ModelConfig`.
///
/// Strided convolutions use ceil semantics: out = ceil(in / stride), with
/// the required zero padding split left/right (one-sided when odd). The
/// decoder replays these sizes in reverse so the skip concatenations line
/// up and the final output restores `num_bins` exactly.
#[derive(Debug, Clone)]
pub struct Geometry {
    /// freq_sizes[0] = K, freq_sizes[i] = output size of encoder layer i.
    pub freq_sizes: Vec<usize>,
    pub pad_left: Vec<usize>,
    pub pad_total: Vec<usize>,
    pub enc_in_ch: Vec<usize>,
    pub enc_out_ch: Vec<usize>,
    /// Flattened bottleneck feature dimension: C_L * F_L.
    pub feat_dim: usize,
    /// LSTM input size per recurrent layer.
    pub lstm_in: Vec<usize>,
    /// Decoder layers in processing order (deconv_L first, deconv_1 last).
    pub dec_in_ch: Vec<usize>,
    pub dec_out_ch: Vec<usize>,
}

impl Geometry {
    pub fn new(cfg: &ModelConfig) -> Self {
        let l = cfg.enc_layers;
        let mut freq_sizes = vec![cfg.num_bins];
        let mut pad_left = Vec::with_capacity(l);
        let mut pad_total = Vec::with_capacity(l);
        let mut enc_in_ch = Vec::with_capacity(l);
        let mut enc_out_ch = Vec::with_capacity(l);
        for i in 1..=l {
            let fin = *freq_sizes.last().unwrap();
            let fout = fin.div_ceil(cfg.stride_freq);
            let need = ((fout - 1) * cfg.stride_freq + cfg.kernel_freq).saturating_sub(fin);
            pad_left.push(need / 2);
            pad_total.push(need);
            freq_sizes.push(fout);
            enc_in_ch.push(if i == 1 { 1 } else { cfg.enc_channels(i - 1) });
            enc_out_ch.push(cfg.enc_channels(i));
        }
        let feat_dim = cfg.enc_channels(l) * freq_sizes[l];
        let mut lstm_in = Vec::with_capacity(cfg.recurrent_layers);
        for j in 0..cfg.recurrent_layers {
            lstm_in.push(if j == 0 { feat_dim } else { cfg.recurrent_hidden });
        }
        // Deconv_i consumes the concatenation of the previous decoder output
        // (C_i channels) and the encoder layer-i output (C_i channels).
        let mut dec_in_ch = Vec::with_capacity(l);
        let mut dec_out_ch = Vec::with_capacity(l);
        for i in (1..=l).rev() {
            dec_in_ch.push(2 * cfg.enc_channels(i));
            dec_out_ch.push(if i == 1 { 1 } else { cfg.enc_channels(i - 1) });
        }
        Geometry {
            freq_sizes,
            pad_left,
            pad_total,
            enc_in_ch,
            enc_out_ch,
            feat_dim,
            lstm_in,
            dec_in_ch,
            dec_out_ch,
        }
    }
}
