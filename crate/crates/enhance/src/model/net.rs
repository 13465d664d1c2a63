//! Forward and backward passes of the mask estimator.
//!
//! Activations are stored as [channels, freq, time] with time contiguous;
//! convolutions run over the frequency axis only (3x1 kernels), so the
//! network is causal in time apart from the forward-only recurrence.

use ndarray::{s, Array1, Array2, Array3, ArrayView2};

use super::{Geometry, ModelConfig, Params};
use crate::dsp::Mask;
use crate::error::{Error, Result};

/// Carried recurrent state, one (h, c) pair per LSTM layer.
#[derive(Debug, Clone)]
pub struct StreamState {
    pub layers: Vec<(Array1<f64>, Array1<f64>)>,
}

impl StreamState {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let h = cfg.recurrent_hidden;
        StreamState {
            layers: (0..cfg.recurrent_layers)
                .map(|_| (Array1::zeros(h), Array1::zeros(h)))
                .collect(),
        }
    }
}

/// Everything the backward pass needs from a forward evaluation.
pub struct ForwardCache {
    pub(crate) enc_pad_inputs: Vec<Array3<f64>>,
    pub(crate) enc_outputs: Vec<Array3<f64>>,
    pub(crate) lstm_inputs: Vec<Array2<f64>>,
    pub(crate) lstm_gates: Vec<Array2<f64>>,
    pub(crate) lstm_c: Vec<Array2<f64>>,
    pub(crate) lstm_tanh_c: Vec<Array2<f64>>,
    pub(crate) lstm_h: Vec<Array2<f64>>,
    pub(crate) lstm_h0: Vec<Array1<f64>>,
    pub(crate) lstm_c0: Vec<Array1<f64>>,
    pub(crate) proj_out: Array2<f64>,
    pub(crate) dec_inputs: Vec<Array3<f64>>,
    pub(crate) dec_outputs: Vec<Array3<f64>>,
    pub(crate) mask: Array2<f64>,
}

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp() - 1.0
    }
}

/// ELU derivative recovered from the activation output.
fn elu_grad_from_out(out: f64) -> f64 {
    if out > 0.0 {
        1.0
    } else {
        out + 1.0
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn pad_freq(x: &Array3<f64>, pad_left: usize, pad_total: usize) -> Array3<f64> {
    if pad_total == 0 {
        return x.clone();
    }
    let (c, f, t) = x.dim();
    let mut out = Array3::zeros((c, f + pad_total, t));
    out.slice_mut(s![.., pad_left..pad_left + f, ..]).assign(x);
    out
}

/// Unfold the padded input into a [C*kernel, out_f*T] matrix so the strided
/// convolution becomes one matrix product.
fn im2col(x_pad: &Array3<f64>, kernel: usize, stride: usize, out_f: usize) -> Array2<f64> {
    let (c, _, t) = x_pad.dim();
    let mut cols = Array2::zeros((c * kernel, out_f * t));
    for ci in 0..c {
        for k in 0..kernel {
            for j in 0..out_f {
                let src = x_pad.slice(s![ci, j * stride + k, ..]);
                cols.slice_mut(s![ci * kernel + k, j * t..(j + 1) * t])
                    .assign(&src);
            }
        }
    }
    cols
}

/// Scatter-add inverse of `im2col`.
fn col2im(
    cols: &Array2<f64>,
    c: usize,
    f_pad: usize,
    t: usize,
    kernel: usize,
    stride: usize,
    out_f: usize,
) -> Array3<f64> {
    let mut out = Array3::zeros((c, f_pad, t));
    for ci in 0..c {
        for k in 0..kernel {
            for j in 0..out_f {
                let src = cols.slice(s![ci * kernel + k, j * t..(j + 1) * t]);
                let mut dst = out.slice_mut(s![ci, j * stride + k, ..]);
                dst += &src;
            }
        }
    }
    out
}

fn weight_mat<'a>(p: &'a Params, name: &str, rows: usize, cols: usize) -> Result<ArrayView2<'a, f64>> {
    let slice = p.tensor(name)?;
    ArrayView2::from_shape((rows, cols), slice)
        .map_err(|e| Error::Config(format!("tensor {name}: {e}")))
}

struct LstmStep {
    gates: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    h: Array2<f64>,
}

fn lstm_forward(
    x: &Array2<f64>,
    w_ih: ArrayView2<f64>,
    w_hh: ArrayView2<f64>,
    bias: &[f64],
    h0: &Array1<f64>,
    c0: &Array1<f64>,
) -> LstmStep {
    let hdim = h0.len();
    let t_len = x.ncols();
    let mut pre = w_ih.dot(x);
    for (mut col, _) in pre.columns_mut().into_iter().zip(0..) {
        for (v, b) in col.iter_mut().zip(bias.iter()) {
            *v += b;
        }
    }
    let mut gates = Array2::zeros((4 * hdim, t_len));
    let mut c_all = Array2::zeros((hdim, t_len));
    let mut tanh_all = Array2::zeros((hdim, t_len));
    let mut h_all = Array2::zeros((hdim, t_len));
    let mut h_prev = h0.clone();
    let mut c_prev = c0.clone();
    for t in 0..t_len {
        let rec = w_hh.dot(&h_prev);
        for j in 0..hdim {
            let zi = pre[(j, t)] + rec[j];
            let zf = pre[(hdim + j, t)] + rec[hdim + j];
            let zg = pre[(2 * hdim + j, t)] + rec[2 * hdim + j];
            let zo = pre[(3 * hdim + j, t)] + rec[3 * hdim + j];
            let gi = sigmoid(zi);
            let gf = sigmoid(zf);
            let gg = zg.tanh();
            let go = sigmoid(zo);
            let c = gf * c_prev[j] + gi * gg;
            let tc = c.tanh();
            gates[(j, t)] = gi;
            gates[(hdim + j, t)] = gf;
            gates[(2 * hdim + j, t)] = gg;
            gates[(3 * hdim + j, t)] = go;
            c_all[(j, t)] = c;
            tanh_all[(j, t)] = tc;
            h_all[(j, t)] = go * tc;
        }
        h_prev = h_all.column(t).to_owned();
        c_prev = c_all.column(t).to_owned();
    }
    LstmStep {
        gates,
        c: c_all,
        tanh_c: tanh_all,
        h: h_all,
    }
}

fn run_forward(
    input: &Array2<f64>,
    p: &Params,
    cfg: &ModelConfig,
    state: &mut StreamState,
    want_cache: bool,
) -> Result<(Array2<f64>, Option<ForwardCache>)> {
    cfg.validate()?;
    let g = Geometry::new(cfg);
    let (k_in, t_len) = input.dim();
    if k_in != cfg.num_bins {
        return Err(Error::ShapeMismatch {
            expected: format!("{} bins", cfg.num_bins),
            got: format!("{k_in} bins"),
        });
    }
    if state.layers.len() != cfg.recurrent_layers
        || state.layers[0].0.len() != cfg.recurrent_hidden
    {
        return Err(Error::Config("recurrent state does not match config".into()));
    }
    let kernel = cfg.kernel_freq;
    let stride = cfg.stride_freq;

    // Encoder.
    let mut enc_pad_inputs = Vec::new();
    let mut enc_outputs: Vec<Array3<f64>> = Vec::new();
    let mut cur = input
        .clone()
        .into_shape_with_order((1, cfg.num_bins, t_len))
        .expect("input reshape");
    for i in 0..cfg.enc_layers {
        let out_f = g.freq_sizes[i + 1];
        let x_pad = pad_freq(&cur, g.pad_left[i], g.pad_total[i]);
        let w = weight_mat(
            p,
            &format!("enc{}.weight", i + 1),
            g.enc_out_ch[i],
            g.enc_in_ch[i] * kernel,
        )?;
        let bias = p.tensor(&format!("enc{}.bias", i + 1))?;
        let cols = im2col(&x_pad, kernel, stride, out_f);
        let mut y = w.dot(&cols);
        for (o, mut row) in y.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| elu(v + bias[o]));
        }
        let y3 = y
            .into_shape_with_order((g.enc_out_ch[i], out_f, t_len))
            .expect("conv reshape");
        if want_cache {
            enc_pad_inputs.push(x_pad);
        }
        enc_outputs.push(y3.clone());
        cur = y3;
    }

    // Bottleneck: flatten (channels x freq) and run the recurrence.
    let feat = cur
        .into_shape_with_order((g.feat_dim, t_len))
        .expect("flatten");
    let h = cfg.recurrent_hidden;
    let mut lstm_inputs = Vec::new();
    let mut lstm_gates = Vec::new();
    let mut lstm_c = Vec::new();
    let mut lstm_tanh_c = Vec::new();
    let mut lstm_h = Vec::new();
    let mut lstm_h0 = Vec::new();
    let mut lstm_c0 = Vec::new();
    let mut layer_in = feat;
    for j in 0..cfg.recurrent_layers {
        let w_ih = weight_mat(p, &format!("lstm{}.w_ih", j + 1), 4 * h, g.lstm_in[j])?;
        let w_hh = weight_mat(p, &format!("lstm{}.w_hh", j + 1), 4 * h, h)?;
        let bias = p.tensor(&format!("lstm{}.bias", j + 1))?;
        let (h0, c0) = state.layers[j].clone();
        let step = lstm_forward(&layer_in, w_ih, w_hh, bias, &h0, &c0);
        state.layers[j] = (
            step.h.column(t_len - 1).to_owned(),
            step.c.column(t_len - 1).to_owned(),
        );
        let out = step.h.clone();
        if want_cache {
            lstm_inputs.push(layer_in);
            lstm_gates.push(step.gates);
            lstm_c.push(step.c);
            lstm_tanh_c.push(step.tanh_c);
            lstm_h.push(step.h);
            lstm_h0.push(h0);
            lstm_c0.push(c0);
        }
        layer_in = out;
    }

    // Project back to the bottleneck shape.
    let w_proj = weight_mat(p, "proj.weight", g.feat_dim, h)?;
    let b_proj = p.tensor("proj.bias")?;
    let mut proj = w_proj.dot(&layer_in);
    for (o, mut row) in proj.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|v| elu(v + b_proj[o]));
    }
    let proj_out = proj;

    // Decoder with skip concatenations, deconv_L first.
    let mut dec_inputs = Vec::new();
    let mut dec_outputs: Vec<Array3<f64>> = Vec::new();
    let l = cfg.enc_layers;
    let mut prev = proj_out
        .clone()
        .into_shape_with_order((cfg.enc_channels(l), g.freq_sizes[l], t_len))
        .expect("bottleneck reshape");
    for (idx, i) in (1..=l).rev().enumerate() {
        let skip = &enc_outputs[i - 1];
        let c_half = prev.dim().0;
        let f_in = g.freq_sizes[i];
        let out_f = g.freq_sizes[i - 1];
        let mut cat = Array3::zeros((2 * c_half, f_in, t_len));
        cat.slice_mut(s![..c_half, .., ..]).assign(&prev);
        cat.slice_mut(s![c_half.., .., ..]).assign(skip);

        let in_c = g.dec_in_ch[idx];
        let out_c = g.dec_out_ch[idx];
        let v = weight_mat(p, &format!("dec{i}.weight"), in_c, out_c * kernel)?;
        let bias = p.tensor(&format!("dec{i}.bias"))?;
        // Transposed convolution: scatter through the matching conv geometry,
        // then crop the padding the encoder added at this depth.
        let u_mat = cat
            .clone()
            .into_shape_with_order((in_c, f_in * t_len))
            .expect("deconv flatten");
        let full_cols = v.t().dot(&u_mat); // [out_c*kernel, f_in*T]
        let f_pad = out_f + g.pad_total[i - 1];
        let full = col2im(&full_cols, out_c, f_pad, t_len, kernel, stride, f_in);
        let mut out = full
            .slice(s![.., g.pad_left[i - 1]..g.pad_left[i - 1] + out_f, ..])
            .to_owned();
        let last = idx == l - 1;
        for (o, mut plane) in out.outer_iter_mut().enumerate() {
            if last {
                plane.mapv_inplace(|z| sigmoid(z + bias[o]));
            } else {
                plane.mapv_inplace(|z| elu(z + bias[o]));
            }
        }
        if want_cache {
            dec_inputs.push(cat);
            dec_outputs.push(out.clone());
        }
        prev = out;
    }

    let mask = prev
        .into_shape_with_order((cfg.num_bins, t_len))
        .expect("mask reshape");
    let cache = want_cache.then(|| ForwardCache {
        enc_pad_inputs,
        enc_outputs,
        lstm_inputs,
        lstm_gates,
        lstm_c,
        lstm_tanh_c,
        lstm_h,
        lstm_h0,
        lstm_c0,
        proj_out,
        dec_inputs,
        dec_outputs,
        mask: mask.clone(),
    });
    Ok((mask, cache))
}

/// Full-utterance mask estimation from fresh recurrent state.
pub fn forward(input: &Array2<f64>, p: &Params, cfg: &ModelConfig) -> Result<Mask> {
    let mut state = StreamState::zeros(cfg);
    forward_streaming(input, p, cfg, &mut state)
}

/// Mask estimation continuing from (and updating) carried recurrent state.
pub fn forward_streaming(
    input: &Array2<f64>,
    p: &Params,
    cfg: &ModelConfig,
    state: &mut StreamState,
) -> Result<Mask> {
    let (mask, _) = run_forward(input, p, cfg, state, false)?;
    Mask::new(mask)
}

/// Forward pass that retains the activations needed by `backward`.
pub fn forward_cached(
    input: &Array2<f64>,
    p: &Params,
    cfg: &ModelConfig,
) -> Result<(Mask, ForwardCache)> {
    let mut state = StreamState::zeros(cfg);
    let (mask, cache) = run_forward(input, p, cfg, &mut state, true)?;
    Ok((Mask::new(mask)?, cache.expect("cache requested")))
}

struct LstmGrads {
    d_input: Array2<f64>,
    d_w_ih: Array2<f64>,
    d_w_hh: Array2<f64>,
    d_bias: Array1<f64>,
}

#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    x: &Array2<f64>,
    gates: &Array2<f64>,
    c_all: &Array2<f64>,
    tanh_all: &Array2<f64>,
    h_all: &Array2<f64>,
    h0: &Array1<f64>,
    c0: &Array1<f64>,
    w_ih: ArrayView2<f64>,
    w_hh: ArrayView2<f64>,
    d_h: &Array2<f64>,
) -> LstmGrads {
    let hdim = h0.len();
    let t_len = x.ncols();
    let mut d_pre = Array2::zeros((4 * hdim, t_len));
    let mut dh_next = Array1::<f64>::zeros(hdim);
    let mut dc_next = Array1::<f64>::zeros(hdim);
    for t in (0..t_len).rev() {
        for j in 0..hdim {
            let gi = gates[(j, t)];
            let gf = gates[(hdim + j, t)];
            let gg = gates[(2 * hdim + j, t)];
            let go = gates[(3 * hdim + j, t)];
            let tc = tanh_all[(j, t)];
            let c_prev = if t == 0 { c0[j] } else { c_all[(j, t - 1)] };

            let dh = d_h[(j, t)] + dh_next[j];
            let dgo = dh * tc;
            let dc = dc_next[j] + dh * go * (1.0 - tc * tc);
            let dgi = dc * gg;
            let dgg = dc * gi;
            let dgf = dc * c_prev;

            d_pre[(j, t)] = dgi * gi * (1.0 - gi);
            d_pre[(hdim + j, t)] = dgf * gf * (1.0 - gf);
            d_pre[(2 * hdim + j, t)] = dgg * (1.0 - gg * gg);
            d_pre[(3 * hdim + j, t)] = dgo * go * (1.0 - go);
            dc_next[j] = dc * gf;
        }
        dh_next = w_hh.t().dot(&d_pre.column(t));
    }
    // Inputs to the recurrent matrix: h shifted one step, h0 in front.
    let mut h_prev = Array2::zeros((hdim, t_len));
    h_prev.column_mut(0).assign(h0);
    if t_len > 1 {
        h_prev
            .slice_mut(s![.., 1..])
            .assign(&h_all.slice(s![.., ..t_len - 1]));
    }
    LstmGrads {
        d_input: w_ih.t().dot(&d_pre),
        d_w_ih: d_pre.dot(&x.t()),
        d_w_hh: d_pre.dot(&h_prev.t()),
        d_bias: d_pre.sum_axis(ndarray::Axis(1)),
    }
}

/// Exact gradients of the forward computation with respect to every
/// parameter tensor, given dL/dMask. Returns a flat gradient vector with
/// the same layout as `Params::data`.
pub fn backward(
    cache: &ForwardCache,
    p: &Params,
    cfg: &ModelConfig,
    mask_grad: &Array2<f64>,
) -> Result<Vec<f64>> {
    let g = Geometry::new(cfg);
    let t_len = cache.mask.ncols();
    if mask_grad.dim() != cache.mask.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", cache.mask.dim()),
            got: format!("{:?}", mask_grad.dim()),
        });
    }
    let kernel = cfg.kernel_freq;
    let stride = cfg.stride_freq;
    let l = cfg.enc_layers;
    let mut grads = vec![0.0f64; p.layout.total];
    let mut write = |name: &str, values: &[f64]| -> Result<()> {
        let spec = p
            .layout
            .find(name)
            .ok_or_else(|| Error::Config(format!("unknown tensor {name}")))?;
        grads[spec.offset..spec.offset + spec.len].copy_from_slice(values);
        Ok(())
    };

    // Per-encoder-layer output gradients, fed by skips and the chain.
    let mut enc_grad: Vec<Array3<f64>> = (0..l)
        .map(|i| Array3::zeros((g.enc_out_ch[i], g.freq_sizes[i + 1], t_len)))
        .collect();

    // Sigmoid backward on the mask output.
    let mut d_out: Array3<f64> = {
        let m = &cache.mask;
        let d = ndarray::Zip::from(mask_grad)
            .and(m)
            .map_collect(|&gm, &mv| gm * mv * (1.0 - mv));
        d.into_shape_with_order((1, cfg.num_bins, t_len)).unwrap()
    };

    // Decoder backward, deconv_1 back to deconv_L.
    let mut d_proj_out: Option<Array2<f64>> = None;
    for (idx, i) in (1..=l).rev().enumerate().collect::<Vec<_>>().into_iter().rev() {
        let last = idx == l - 1;
        let out = &cache.dec_outputs[idx];
        let u = &cache.dec_inputs[idx];
        let out_f = g.freq_sizes[i - 1];
        let f_in = g.freq_sizes[i];
        let in_c = g.dec_in_ch[idx];
        let out_c = g.dec_out_ch[idx];

        // Activation backward (sigmoid already handled for the last layer).
        let d_pre = if last {
            d_out.clone()
        } else {
            ndarray::Zip::from(&d_out)
                .and(out)
                .map_collect(|&d, &o| d * elu_grad_from_out(o))
        };

        let db: Vec<f64> = (0..out_c)
            .map(|o| d_pre.slice(s![o, .., ..]).sum())
            .collect();
        write(&format!("dec{i}.bias"), &db)?;

        // Un-crop into the padded frame of the matching conv geometry.
        let f_pad = out_f + g.pad_total[i - 1];
        let mut d_full = Array3::zeros((out_c, f_pad, t_len));
        d_full
            .slice_mut(s![.., g.pad_left[i - 1]..g.pad_left[i - 1] + out_f, ..])
            .assign(&d_pre);

        let cols = im2col(&d_full, kernel, stride, f_in);
        let u_mat = u
            .clone()
            .into_shape_with_order((in_c, f_in * t_len))
            .unwrap();
        let dv = u_mat.dot(&cols.t()); // [in_c, out_c*kernel]
        write(
            &format!("dec{i}.weight"),
            dv.as_standard_layout().as_slice().unwrap(),
        )?;

        let v = weight_mat(p, &format!("dec{i}.weight"), in_c, out_c * kernel)?;
        let du_mat = v.dot(&cols); // [in_c, f_in*T]
        let du = du_mat
            .into_shape_with_order((in_c, f_in, t_len))
            .unwrap();
        let c_half = in_c / 2;
        let d_prev = du.slice(s![..c_half, .., ..]).to_owned();
        enc_grad[i - 1] += &du.slice(s![c_half.., .., ..]);

        if idx == 0 {
            d_proj_out = Some(
                d_prev
                    .into_shape_with_order((g.feat_dim, t_len))
                    .unwrap(),
            );
        } else {
            d_out = d_prev;
        }
    }
    let d_proj_out = d_proj_out.expect("decoder reached the bottleneck");

    // Projection backward (ELU then linear).
    let d_proj_pre = ndarray::Zip::from(&d_proj_out)
        .and(&cache.proj_out)
        .map_collect(|&d, &o| d * elu_grad_from_out(o));
    let h = cfg.recurrent_hidden;
    let top_h = &cache.lstm_h[cfg.recurrent_layers - 1];
    let dw_proj = d_proj_pre.dot(&top_h.t());
    write(
        "proj.weight",
        dw_proj.as_standard_layout().as_slice().unwrap(),
    )?;
    let db_proj = d_proj_pre.sum_axis(ndarray::Axis(1));
    write("proj.bias", db_proj.as_slice().unwrap())?;
    let w_proj = weight_mat(p, "proj.weight", g.feat_dim, h)?;
    let mut d_h = w_proj.t().dot(&d_proj_pre);

    // Recurrent layers, top down.
    for j in (0..cfg.recurrent_layers).rev() {
        let w_ih = weight_mat(p, &format!("lstm{}.w_ih", j + 1), 4 * h, g.lstm_in[j])?;
        let w_hh = weight_mat(p, &format!("lstm{}.w_hh", j + 1), 4 * h, h)?;
        let lg = lstm_backward(
            &cache.lstm_inputs[j],
            &cache.lstm_gates[j],
            &cache.lstm_c[j],
            &cache.lstm_tanh_c[j],
            &cache.lstm_h[j],
            &cache.lstm_h0[j],
            &cache.lstm_c0[j],
            w_ih,
            w_hh,
            &d_h,
        );
        write(
            &format!("lstm{}.w_ih", j + 1),
            lg.d_w_ih.as_standard_layout().as_slice().unwrap(),
        )?;
        write(
            &format!("lstm{}.w_hh", j + 1),
            lg.d_w_hh.as_standard_layout().as_slice().unwrap(),
        )?;
        write(&format!("lstm{}.bias", j + 1), lg.d_bias.as_slice().unwrap())?;
        d_h = lg.d_input;
    }
    // The bottleneck input gradient flows into the top encoder output.
    enc_grad[l - 1] += &d_h
        .into_shape_with_order((cfg.enc_channels(l), g.freq_sizes[l], t_len))
        .unwrap();

    // Encoder backward, layer L down to 1.
    for i in (0..l).rev() {
        let out = &cache.enc_outputs[i];
        let d_pre = ndarray::Zip::from(&enc_grad[i])
            .and(out)
            .map_collect(|&d, &o| d * elu_grad_from_out(o));
        let out_f = g.freq_sizes[i + 1];
        let out_c = g.enc_out_ch[i];
        let in_c = g.enc_in_ch[i];
        let db: Vec<f64> = (0..out_c)
            .map(|o| d_pre.slice(s![o, .., ..]).sum())
            .collect();
        write(&format!("enc{}.bias", i + 1), &db)?;

        let x_pad = &cache.enc_pad_inputs[i];
        let cols = im2col(x_pad, kernel, stride, out_f);
        let d_mat = d_pre
            .into_shape_with_order((out_c, out_f * t_len))
            .unwrap();
        let dw = d_mat.dot(&cols.t());
        write(
            &format!("enc{}.weight", i + 1),
            dw.as_standard_layout().as_slice().unwrap(),
        )?;

        if i > 0 {
            let w = weight_mat(p, &format!("enc{}.weight", i + 1), out_c, in_c * kernel)?;
            let dx_cols = w.t().dot(&d_mat);
            let dx_pad = col2im(
                &dx_cols,
                in_c,
                g.freq_sizes[i] + g.pad_total[i],
                t_len,
                kernel,
                stride,
                out_f,
            );
            enc_grad[i - 1] += &dx_pad.slice(s![
                ..,
                g.pad_left[i]..g.pad_left[i] + g.freq_sizes[i],
                ..
            ]);
        }
    }

    Ok(grads)
}
