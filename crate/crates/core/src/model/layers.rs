//! Layer kernels with hand-derived backward passes.
//!
//! Feature maps are channel-major (`[c][y][x]`). Inside the attention block
//! the map is transposed to position-major `[p][c]` so each spatial position
//! is one row.

use crate::error::{Error, Result};
use crate::numerics::{gemm, gemm_nt, gemm_tn, sigmoid, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

/// Channel-major feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "{channels}×{height}×{width} map needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }
}

/// Convolution weights `[out][in][k][k]` plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `θ(input ∗ bank)` with same padding and stride 1.
pub fn conv2d_forward(
    input: &FeatureMap,
    bank: &FilterBank,
    activation: Activation,
) -> Result<FeatureMap> {
    if input.channels != bank.in_channels {
        return Err(Error::Dimension(format!(
            "filter bank expects {} input channels, map has {}",
            bank.in_channels, input.channels
        )));
    }
    if bank.kernel % 2 == 0
        || bank.weights.len() != bank.out_channels * bank.in_channels * bank.kernel * bank.kernel
        || bank.bias.len() != bank.out_channels
    {
        return Err(Error::Dimension("malformed filter bank".into()));
    }
    let mut out = vec![0.0; bank.out_channels * input.positions()];
    conv2d_same(
        &input.data,
        input.channels,
        input.height,
        input.width,
        &bank.weights,
        &bank.bias,
        bank.out_channels,
        bank.kernel,
        &mut out,
    );
    if activation == Activation::Relu {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    FeatureMap::new(bank.out_channels, input.height, input.width, out)
}

/// Writes the pre-activation convolution into `out` (overwritten).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_same(
    input: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
    k: usize,
    out: &mut [f64],
) {
    let r = (k / 2) as isize;
    let p = h * w;
    for o in 0..out_ch {
        let out_o = &mut out[o * p..(o + 1) * p];
        out_o.fill(bias[o]);
        for i in 0..in_ch {
            let in_i = &input[i * p..(i + 1) * p];
            for ky in 0..k {
                let dy = ky as isize - r;
                let (y_lo, y_hi) = valid_range(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - r;
                    let wv = weights[((o * in_ch + i) * k + ky) * k + kx];
                    let (x_lo, x_hi) = valid_range(dx, w);
                    for y in y_lo..y_hi {
                        let sy = (y as isize + dy) as usize;
                        let src = &in_i[sy * w..(sy + 1) * w];
                        let dst = &mut out_o[y * w..(y + 1) * w];
                        for x in x_lo..x_hi {
                            dst[x] += wv * src[(x as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, if requested, the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_same_backward(
    input: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    out_ch: usize,
    k: usize,
    d_pre: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let r = (k / 2) as isize;
    let p = h * w;
    for o in 0..out_ch {
        let g_o = &d_pre[o * p..(o + 1) * p];
        d_bias[o] += g_o.iter().sum::<f64>();
        for i in 0..in_ch {
            let in_i = &input[i * p..(i + 1) * p];
            for ky in 0..k {
                let dy = ky as isize - r;
                let (y_lo, y_hi) = valid_range(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - r;
                    let (x_lo, x_hi) = valid_range(dx, w);
                    let widx = ((o * in_ch + i) * k + ky) * k + kx;
                    let wv = weights[widx];
                    let mut acc = 0.0;
                    for y in y_lo..y_hi {
                        let sy = (y as isize + dy) as usize;
                        for x in x_lo..x_hi {
                            let sx = (x as isize + dx) as usize;
                            acc += g_o[y * w + x] * in_i[sy * w + sx];
                        }
                    }
                    d_weights[widx] += acc;
                    if let Some(d_in) = d_input.as_deref_mut() {
                        let d_in_i = &mut d_in[i * p..(i + 1) * p];
                        for y in y_lo..y_hi {
                            let sy = (y as isize + dy) as usize;
                            for x in x_lo..x_hi {
                                let sx = (x as isize + dx) as usize;
                                d_in_i[sy * w + sx] += wv * g_o[y * w + x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output rows/cols whose shifted source index stays inside `0..len`.
fn valid_range(shift: isize, len: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift.max(0)).max(0) as usize;
    (lo.min(len), hi)
}

/// Attention projections Ω_f, Ω_g (`att × ch`), Ω_h, Ω_v (`ch × ch`).
#[derive(Debug, Clone, PartialEq)]
pub struct SsaWeights {
    pub attention_dim: usize,
    pub channels: usize,
    pub omega_f: Vec<f64>,
    pub omega_g: Vec<f64>,
    pub omega_h: Vec<f64>,
    pub omega_v: Vec<f64>,
}

impl SsaWeights {
    /// Packs the four projections in canonical order (f, g, h, v).
    pub fn packed(&self) -> Vec<f64> {
        [&self.omega_f, &self.omega_g, &self.omega_h, &self.omega_v]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect()
    }
}

/// Spatial self-attention on a channel-major map.
///
/// Returns the output map (same layout as the input) and the `P × P`
/// attention weights, row `q` holding γ_{q,·}.
pub fn ssa_forward(s: &FeatureMap, omegas: &SsaWeights) -> Result<(FeatureMap, Vec<f64>)> {
    let (att, ch) = (omegas.attention_dim, omegas.channels);
    if s.channels != ch
        || omegas.omega_f.len() != att * ch
        || omegas.omega_g.len() != att * ch
        || omegas.omega_h.len() != ch * ch
        || omegas.omega_v.len() != ch * ch
    {
        return Err(Error::Dimension(format!(
            "attention weights for {ch} channels applied to a {}-channel map",
            s.channels
        )));
    }
    let p = s.positions();
    let cache = ssa_forward_cached(
        to_position_major(&s.data, ch, p),
        p,
        ch,
        att,
        &omegas.packed(),
    );
    let out = to_channel_major(&cache.y, ch, p);
    Ok((FeatureMap::new(ch, s.height, s.width, out)?, cache.gamma))
}

/// Intermediates of one attention evaluation (all position-major).
#[derive(Debug, Clone)]
pub(crate) struct SsaCache {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub gamma: Vec<f64>,
    pub o: Vec<f64>,
    pub y: Vec<f64>,
}

fn split_omegas(packed: &[f64], att: usize, ch: usize) -> [&[f64]; 4] {
    let (f, rest) = packed.split_at(att * ch);
    let (g, rest) = rest.split_at(att * ch);
    let (h, v) = rest.split_at(ch * ch);
    [f, g, h, v]
}

fn split_omegas_mut(packed: &mut [f64], att: usize, ch: usize) -> [&mut [f64]; 4] {
    let (f, rest) = packed.split_at_mut(att * ch);
    let (g, rest) = rest.split_at_mut(att * ch);
    let (h, v) = rest.split_at_mut(ch * ch);
    [f, g, h, v]
}

/// `omegas` is the packed (f, g, h, v) block.
pub(crate) fn ssa_forward_cached(
    x: Vec<f64>,
    p: usize,
    ch: usize,
    att: usize,
    omegas: &[f64],
) -> SsaCache {
    let [wf, wg, wh, wv] = split_omegas(omegas, att, ch);
    let mut f = vec![0.0; p * att];
    let mut g = vec![0.0; p * att];
    let mut h = vec![0.0; p * ch];
    gemm_nt(&x, wf, &mut f, p, ch, att);
    gemm_nt(&x, wg, &mut g, p, ch, att);
    gemm_nt(&x, wh, &mut h, p, ch, ch);

    // scores s_{q,p} = f_q · g_p, then row softmax
    let g_t = transpose(&g, p, att);
    let mut gamma = vec![0.0; p * p];
    gemm(&f, &g_t, &mut gamma, p, att, p);
    for row in gamma.chunks_exact_mut(p) {
        softmax_in_place(row);
    }

    let h_t = transpose(&h, p, ch);
    let mut o = vec![0.0; p * ch];
    gemm_nt(&gamma, &h_t, &mut o, p, p, ch);
    let mut y = vec![0.0; p * ch];
    gemm_nt(&o, wv, &mut y, p, ch, ch);
    SsaCache {
        x,
        f,
        g,
        h,
        gamma,
        o,
        y,
    }
}

/// Backward through the attention block. Returns dL/dx (position-major).
pub(crate) fn ssa_backward(
    cache: &SsaCache,
    p: usize,
    ch: usize,
    att: usize,
    omegas: &[f64],
    d_omegas: &mut [f64],
    dy: &[f64],
) -> Vec<f64> {
    let [wf, wg, wh, wv] = split_omegas(omegas, att, ch);
    let [dwf, dwg, dwh, dwv] = split_omegas_mut(d_omegas, att, ch);

    // y = o Ω_vᵀ
    gemm_tn(dy, &cache.o, dwv, ch, p, ch);
    let mut d_o = vec![0.0; p * ch];
    gemm(dy, wv, &mut d_o, p, ch, ch);

    // o = Γ h
    let h_t = transpose(&cache.h, p, ch);
    let mut d_s = vec![0.0; p * p];
    gemm(&d_o, &h_t, &mut d_s, p, ch, p);
    let d_o_t = transpose(&d_o, p, ch);
    let mut d_h_t = vec![0.0; ch * p];
    gemm(&d_o_t, &cache.gamma, &mut d_h_t, ch, p, p);
    let d_h = transpose(&d_h_t, ch, p);

    // row softmax: dS = Γ ⊙ (dΓ − Σ_p dΓ Γ)
    for (ds_row, g_row) in d_s.chunks_exact_mut(p).zip(cache.gamma.chunks_exact(p)) {
        let inner: f64 = ds_row.iter().zip(g_row).map(|(a, b)| a * b).sum();
        for (d, gv) in ds_row.iter_mut().zip(g_row) {
            *d = gv * (*d - inner);
        }
    }

    let g_t = transpose(&cache.g, p, att);
    let mut d_f = vec![0.0; p * att];
    gemm_nt(&d_s, &g_t, &mut d_f, p, p, att);
    let f_t = transpose(&cache.f, p, att);
    let mut d_g_t = vec![0.0; att * p];
    gemm(&f_t, &d_s, &mut d_g_t, att, p, p);
    let d_g = transpose(&d_g_t, att, p);

    gemm_tn(&d_f, &cache.x, dwf, att, p, ch);
    gemm_tn(&d_g, &cache.x, dwg, att, p, ch);
    gemm_tn(&d_h, &cache.x, dwh, ch, p, ch);

    let mut dx = vec![0.0; p * ch];
    gemm(&d_f, wf, &mut dx, p, att, ch);
    gemm(&d_g, wg, &mut dx, p, att, ch);
    gemm(&d_h, wh, &mut dx, p, ch, ch);
    dx
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

pub(crate) fn to_position_major(map: &[f64], ch: usize, p: usize) -> Vec<f64> {
    transpose(map, ch, p)
}

pub(crate) fn to_channel_major(rows: &[f64], ch: usize, p: usize) -> Vec<f64> {
    transpose(rows, p, ch)
}

/// Same-padded temporal convolution over a `steps × in_dim` table.
///
/// `weights` is `[out][in][k]`; output is `steps × out`.
pub(crate) fn conv1d_same(
    table: &[f64],
    steps: usize,
    in_dim: usize,
    weights: &[f64],
    bias: &[f64],
    out_dim: usize,
    k: usize,
) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0; steps * out_dim];
    for t in 0..steps {
        for o in 0..out_dim {
            let mut acc = bias[o];
            for j in 0..k {
                let src = t as isize + j as isize - r;
                if src < 0 || src >= steps as isize {
                    continue;
                }
                let row = &table[src as usize * in_dim..(src as usize + 1) * in_dim];
                for (i, v) in row.iter().enumerate() {
                    acc += weights[(o * in_dim + i) * k + j] * v;
                }
            }
            out[t * out_dim + o] = acc;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_same_backward(
    table: &[f64],
    steps: usize,
    in_dim: usize,
    weights: &[f64],
    out_dim: usize,
    k: usize,
    d_out: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut d_table = vec![0.0; steps * in_dim];
    for t in 0..steps {
        for o in 0..out_dim {
            let g = d_out[t * out_dim + o];
            d_bias[o] += g;
            for j in 0..k {
                let src = t as isize + j as isize - r;
                if src < 0 || src >= steps as isize {
                    continue;
                }
                let s = src as usize;
                for i in 0..in_dim {
                    let widx = (o * in_dim + i) * k + j;
                    d_weights[widx] += g * table[s * in_dim + i];
                    d_table[s * in_dim + i] += g * weights[widx];
                }
            }
        }
    }
    d_table
}

/// LSTM weights in canonical order Φ_AS, Φ_Ah, Φ_BS, Φ_Bh, Φ_CS, Φ_Ch.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub input_dim: usize,
    pub hidden: usize,
    /// All six matrices concatenated; input maps are `hidden × input_dim`,
    /// recurrent maps `hidden × hidden`.
    pub packed: Vec<f64>,
}

/// Per-step gate values and states.
///
/// `h[k]` is the state fed to step `k` (so `h[0] = 0`), `h[steps]` is the
/// final output; `d[k]` is the cell after step `k`.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub steps: usize,
    pub hidden: usize,
    pub inputs: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub tanh_d: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
}

impl LstmTrace {
    pub fn final_hidden(&self) -> &[f64] {
        &self.h[self.steps]
    }
}

fn split_phi(packed: &[f64], hid: usize, inp: usize) -> [&[f64]; 6] {
    let (a_s, rest) = packed.split_at(hid * inp);
    let (a_h, rest) = rest.split_at(hid * hid);
    let (b_s, rest) = rest.split_at(hid * inp);
    let (b_h, rest) = rest.split_at(hid * hid);
    let (c_s, c_h) = rest.split_at(hid * inp);
    [a_s, a_h, b_s, b_h, c_s, c_h]
}

fn split_phi_mut(packed: &mut [f64], hid: usize, inp: usize) -> [&mut [f64]; 6] {
    let (a_s, rest) = packed.split_at_mut(hid * inp);
    let (a_h, rest) = rest.split_at_mut(hid * hid);
    let (b_s, rest) = rest.split_at_mut(hid * inp);
    let (b_h, rest) = rest.split_at_mut(hid * hid);
    let (c_s, c_h) = rest.split_at_mut(hid * inp);
    [a_s, a_h, b_s, b_h, c_s, c_h]
}

fn affine2(ws: &[f64], x: &[f64], wh: &[f64], h: &[f64], hid: usize) -> Vec<f64> {
    let mut z = vec![0.0; hid];
    gemm(ws, x, &mut z, hid, x.len(), 1);
    gemm(wh, h, &mut z, hid, h.len(), 1);
    z
}

/// Runs the recurrence from `d = 0`, `h = 0` over `steps` rows of `inputs`.
///
/// Gates follow
/// `a = σ(Φ_AS x + Φ_Ah h)`, `b = σ(Φ_BS x + Φ_Bh h)`, `c = tanh(Φ_CS x + Φ_Ch h)`,
/// `d_k = d_{k-1} + a ⊙ c`, `h_next = b ⊙ tanh(d_k)`; there is no forget gate
/// and no bias.
pub fn lstm_forward(inputs: &[f64], steps: usize, weights: &LstmWeights) -> Result<LstmTrace> {
    let (hid, inp) = (weights.hidden, weights.input_dim);
    if steps == 0 {
        return Err(Error::Input("LSTM needs at least one step".into()));
    }
    if inputs.len() != steps * inp {
        return Err(Error::Dimension(format!(
            "LSTM expects {steps}×{inp} inputs, got {}",
            inputs.len()
        )));
    }
    if weights.packed.len() != 3 * hid * (inp + hid) {
        return Err(Error::Dimension("malformed LSTM weights".into()));
    }
    let [a_s, a_h, b_s, b_h, c_s, c_h] = split_phi(&weights.packed, hid, inp);
    let mut tr = LstmTrace {
        steps,
        hidden: hid,
        inputs: Vec::with_capacity(steps),
        a: Vec::with_capacity(steps),
        b: Vec::with_capacity(steps),
        c: Vec::with_capacity(steps),
        d: Vec::with_capacity(steps),
        tanh_d: Vec::with_capacity(steps),
        h: vec![vec![0.0; hid]],
    };
    let mut cell = vec![0.0; hid];
    for k in 0..steps {
        let x = inputs[k * inp..(k + 1) * inp].to_vec();
        let h = &tr.h[k];
        let a: Vec<f64> = affine2(a_s, &x, a_h, h, hid)
            .into_iter()
            .map(sigmoid)
            .collect();
        let b: Vec<f64> = affine2(b_s, &x, b_h, h, hid)
            .into_iter()
            .map(sigmoid)
            .collect();
        let c: Vec<f64> = affine2(c_s, &x, c_h, h, hid)
            .into_iter()
            .map(f64::tanh)
            .collect();
        for j in 0..hid {
            cell[j] += a[j] * c[j];
        }
        let td: Vec<f64> = cell.iter().map(|v| v.tanh()).collect();
        let h_next: Vec<f64> = b.iter().zip(&td).map(|(bv, t)| bv * t).collect();
        tr.inputs.push(x);
        tr.a.push(a);
        tr.b.push(b);
        tr.c.push(c);
        tr.d.push(cell.clone());
        tr.tanh_d.push(td);
        tr.h.push(h_next);
    }
    Ok(tr)
}

/// Backpropagation through time. Accumulates into `d_packed` (Φ gradients)
/// and returns dL/dinputs (`steps × input_dim`).
pub(crate) fn lstm_backward(
    tr: &LstmTrace,
    weights: &[f64],
    input_dim: usize,
    d_packed: &mut [f64],
    d_final_h: &[f64],
) -> Vec<f64> {
    let hid = tr.hidden;
    let inp = input_dim;
    let [a_s, a_h, b_s, b_h, c_s, c_h] = split_phi(weights, hid, inp);
    let [da_s, da_h, db_s, db_h, dc_s, dc_h] = split_phi_mut(d_packed, hid, inp);

    let mut d_inputs = vec![0.0; tr.steps * inp];
    let mut dh = d_final_h.to_vec();
    let mut dd_carry = vec![0.0; hid];
    let mut za = vec![0.0; hid];
    let mut zb = vec![0.0; hid];
    let mut zc = vec![0.0; hid];
    for k in (0..tr.steps).rev() {
        let (a, b, c, td) = (&tr.a[k], &tr.b[k], &tr.c[k], &tr.tanh_d[k]);
        for j in 0..hid {
            // h_next = b ⊙ tanh(d); d_k = d_{k-1} + a ⊙ c
            let dd = dd_carry[j] + dh[j] * b[j] * (1.0 - td[j] * td[j]);
            dd_carry[j] = dd;
            zb[j] = dh[j] * td[j] * b[j] * (1.0 - b[j]);
            za[j] = dd * c[j] * a[j] * (1.0 - a[j]);
            zc[j] = dd * a[j] * (1.0 - c[j] * c[j]);
        }
        let x = &tr.inputs[k];
        let h_prev = &tr.h[k];
        for (dw_s, dw_h, z) in [
            (&mut *da_s, &mut *da_h, &za),
            (&mut *db_s, &mut *db_h, &zb),
            (&mut *dc_s, &mut *dc_h, &zc),
        ] {
            gemm(z, x, dw_s, hid, 1, inp);
            gemm(z, h_prev, dw_h, hid, 1, hid);
        }
        let dx = &mut d_inputs[k * inp..(k + 1) * inp];
        let mut dh_prev = vec![0.0; hid];
        for (w_s, w_h, z) in [(a_s, a_h, &za), (b_s, b_h, &zb), (c_s, c_h, &zc)] {
            gemm_tn(w_s, z, dx, inp, hid, 1);
            gemm_tn(w_h, z, &mut dh_prev, hid, hid, 1);
        }
        dh = dh_prev;
    }
    d_inputs
}
