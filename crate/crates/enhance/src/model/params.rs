//! Flat parameter storage with a named-tensor layout. Keeping every tensor
//! in one contiguous vector makes the optimizer, checkpointing, and
//! finite-difference checks operate on a single address space.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{Geometry, ModelConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let g = Geometry::new(cfg);
        let mut tensors = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            tensors.push(TensorSpec {
                name,
                shape,
                offset,
                len,
            });
            offset += len;
        };
        for i in 1..=cfg.enc_layers {
            push(
                format!("enc{i}.weight"),
                vec![g.enc_out_ch[i - 1], g.enc_in_ch[i - 1], cfg.kernel_freq],
            );
            push(format!("enc{i}.bias"), vec![g.enc_out_ch[i - 1]]);
        }
        let h = cfg.recurrent_hidden;
        for j in 1..=cfg.recurrent_layers {
            let d = g.lstm_in[j - 1];
            push(format!("lstm{j}.w_ih"), vec![4 * h, d]);
            push(format!("lstm{j}.w_hh"), vec![4 * h, h]);
            push(format!("lstm{j}.bias"), vec![4 * h]);
        }
        push("proj.weight".into(), vec![g.feat_dim, h]);
        push("proj.bias".into(), vec![g.feat_dim]);
        // Decoder tensors in processing order (deconv_L .. deconv_1);
        // transposed-conv weights are stored [in_ch, out_ch, kernel].
        for (idx, i) in (1..=cfg.enc_layers).rev().enumerate() {
            push(
                format!("dec{i}.weight"),
                vec![g.dec_in_ch[idx], g.dec_out_ch[idx], cfg.kernel_freq],
            );
            push(format!("dec{i}.bias"), vec![g.dec_out_ch[idx]]);
        }
        Layout {
            tensors,
            total: offset,
        }
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// The learnable parameter set.
#[derive(Debug, Clone)]
pub struct Params {
    pub data: Vec<f64>,
    pub layout: Layout,
}

impl Params {
    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        let spec = self
            .layout
            .find(name)
            .ok_or_else(|| Error::Config(format!("unknown tensor {name}")))?;
        Ok(&self.data[spec.offset..spec.offset + spec.len])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let spec = self
            .layout
            .find(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown tensor {name}")))?;
        Ok(&mut self.data[spec.offset..spec.offset + spec.len])
    }
}

/// Deterministic initialization: fan-in-scaled uniform for convolutional
/// and linear weights, uniform +-1/sqrt(H) for recurrent matrices, zero
/// biases except the LSTM forget gate at 1.
pub fn init_params(cfg: &ModelConfig) -> Result<Params> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut data = vec![0.0f64; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = cfg.recurrent_hidden;
    for spec in &layout.tensors {
        let slice = &mut data[spec.offset..spec.offset + spec.len];
        if spec.name.ends_with(".bias") {
            if spec.name.starts_with("lstm") {
                // Gate order [i; f; g; o]: forget-gate bias starts at H.
                for v in slice[h..2 * h].iter_mut() {
                    *v = 1.0;
                }
            }
            continue;
        }
        let fan_in: usize = match spec.shape.len() {
            3 => spec.shape[1] * spec.shape[2],
            2 => spec.shape[1],
            _ => spec.shape.iter().product(),
        };
        let bound = (1.0 / fan_in as f64).sqrt();
        for v in slice.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(Params { data, layout })
}
