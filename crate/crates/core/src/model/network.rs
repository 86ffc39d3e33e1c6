//! Full forward pass, loss and backpropagation.

use super::config::SstaConfig;
use super::layers::{
    conv1d_same, conv1d_same_backward, conv2d_same, conv2d_same_backward, lstm_backward,
    lstm_forward, ssa_backward, ssa_forward_cached, to_channel_major, to_position_major, LstmTrace,
    LstmWeights, SsaCache,
};
use super::params::SstaParams;
use crate::error::{Error, Result};
use crate::numerics::{gemm, gemm_nt, gemm_tn, softmax_in_place};
use crate::vision::Frame;

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// A labelled window of consecutive grayscale frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    label: usize,
    classes: usize,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, label: usize, classes: usize) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Input("a sequence needs at least one frame".into()));
        }
        if label >= classes {
            return Err(Error::Input(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let (h, w) = (frames[0].height(), frames[0].width());
        for (i, f) in frames.iter().enumerate() {
            if f.channels() != 1 {
                return Err(Error::Input(format!("frame {i} is not grayscale")));
            }
            if f.height() != h || f.width() != w {
                return Err(Error::Dimension(format!(
                    "frame {i} is {}×{}, expected {h}×{w}",
                    f.height(),
                    f.width()
                )));
            }
        }
        Ok(FrameSequence {
            frames,
            label,
            classes,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.classes];
        y[self.label] = 1.0;
        y
    }

    /// Same frames, different label.
    pub fn relabeled(&self, label: usize) -> Result<Self> {
        FrameSequence::new(self.frames.clone(), label, self.classes)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct StageCache {
    /// Single-channel input grid.
    input: Vec<f64>,
    /// Post-ReLU conv output, channel-major.
    conv: Vec<f64>,
    ssa: SsaCache,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct SstaActivations {
    fingerprint: u64,
    frames: Vec<Vec<StageCache>>,
    table: Vec<f64>,
    temporal: Vec<f64>,
    lstm: LstmTrace,
    probs: Vec<f64>,
}

impl SstaActivations {
    /// Attention weights `γ` (row-major `P × P`) for one frame and stage.
    pub fn attention(&self, frame: usize, stage: usize) -> &[f64] {
        &self.frames[frame][stage].ssa.gamma
    }

    /// Raw attention scores `f_q · g_p`, recomputed from the cached projections.
    pub fn attention_scores(&self, frame: usize, stage: usize) -> Vec<f64> {
        let c = &self.frames[frame][stage].ssa;
        let p = c.gamma.len().isqrt();
        let att = c.f.len() / p;
        let mut s = vec![0.0; p * p];
        gemm_nt(&c.f, &c.g, &mut s, p, att, p);
        s
    }

    pub fn stage_count(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Post-ReLU convolution output of one stage, channel-major.
    pub fn conv_map(&self, frame: usize, stage: usize) -> &[f64] {
        &self.frames[frame][stage].conv
    }

    /// Attention block output of one stage, position-major (`P × channels`).
    pub fn attention_output(&self, frame: usize, stage: usize) -> &[f64] {
        &self.frames[frame][stage].ssa.y
    }

    /// FC output of one stage (`fc_dim` values).
    pub fn stage_output(&self, frame: usize, stage: usize) -> &[f64] {
        let stages = &self.frames[frame];
        if stage + 1 < stages.len() {
            &stages[stage + 1].input
        } else {
            let fc = self.table.len() / self.frames.len();
            &self.table[frame * fc..(frame + 1) * fc]
        }
    }

    /// Facial features table, one row of length `fc_dim` per frame.
    pub fn feature_table(&self) -> &[f64] {
        &self.table
    }

    /// Temporal convolution output, `sequence_length × conv1d_channels`.
    pub fn temporal(&self) -> &[f64] {
        &self.temporal
    }

    pub fn lstm(&self) -> &LstmTrace {
        &self.lstm
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

fn check_sequence(cfg: &SstaConfig, seq: &FrameSequence) -> Result<()> {
    if seq.frames.len() != cfg.sequence_length {
        return Err(Error::Dimension(format!(
            "model expects {} frames per sequence, got {}",
            cfg.sequence_length,
            seq.frames.len()
        )));
    }
    let f = &seq.frames[0];
    if f.height() != cfg.frame_height || f.width() != cfg.frame_width {
        return Err(Error::Dimension(format!(
            "model expects {}×{} frames, got {}×{}",
            cfg.frame_height,
            cfg.frame_width,
            f.height(),
            f.width()
        )));
    }
    if seq.classes != cfg.classes {
        return Err(Error::Dimension(format!(
            "model has {} classes, label has {}",
            cfg.classes, seq.classes
        )));
    }
    Ok(())
}

/// Stacks per-frame feature vectors into a `len × fc_dim` table, preserving order.
pub fn build_features_table(per_frame: &[Vec<f64>], cfg: &SstaConfig) -> Result<Vec<f64>> {
    if per_frame.len() != cfg.sequence_length {
        return Err(Error::Input(format!(
            "table needs {} frame vectors, got {}",
            cfg.sequence_length,
            per_frame.len()
        )));
    }
    if let Some(i) = per_frame.iter().position(|v| v.len() != cfg.fc_dim) {
        return Err(Error::Dimension(format!(
            "frame vector {i} has length {}, expected {}",
            per_frame[i].len(),
            cfg.fc_dim
        )));
    }
    Ok(per_frame.concat())
}

/// Returns class probabilities and the activation cache.
pub fn forward(params: &SstaParams, seq: &FrameSequence) -> Result<(Vec<f64>, SstaActivations)> {
    let cfg = params.config();
    check_sequence(cfg, seq)?;
    let lay = params.layout();
    let w = params.values();
    let ch = cfg.conv_channels;
    let fc = cfg.fc_dim;
    let steps = cfg.sequence_length;

    let mut rows = Vec::with_capacity(steps);
    let mut frames = Vec::with_capacity(steps);
    for frame in &seq.frames {
        let mut input = frame.pixels().to_vec();
        let mut stages = Vec::with_capacity(lay.stages.len());
        for st in &lay.stages {
            let p = st.positions();
            let mut conv = vec![0.0; ch * p];
            conv2d_same(
                &input,
                1,
                st.grid_h,
                st.grid_w,
                &w[st.conv_w.clone()],
                &w[st.conv_b.clone()],
                ch,
                cfg.kernel_size,
                &mut conv,
            );
            conv.iter_mut().for_each(|v| *v = v.max(0.0));
            let ssa = ssa_forward_cached(
                to_position_major(&conv, ch, p),
                p,
                ch,
                cfg.attention_dim,
                &w[st.omega_f.start..st.omega_v.end],
            );
            let mut out = w[st.fc_b.clone()].to_vec();
            gemm_nt(&w[st.fc_w.clone()], &ssa.y, &mut out, fc, p * ch, 1);
            stages.push(StageCache { input, conv, ssa });
            input = out;
        }
        rows.push(input);
        frames.push(stages);
    }
    let table = build_features_table(&rows, cfg)?;

    let temporal = conv1d_same(
        &table,
        steps,
        fc,
        &w[lay.conv1d_w.clone()],
        &w[lay.conv1d_b.clone()],
        cfg.conv1d_channels,
        cfg.conv1d_kernel,
    );
    let lstm_w = LstmWeights {
        input_dim: cfg.conv1d_channels,
        hidden: cfg.lstm_hidden,
        packed: w[lay.phi[0].start..lay.phi[5].end].to_vec(),
    };
    let lstm = lstm_forward(&temporal, steps, &lstm_w)?;
    let mut probs = w[lay.head_b.clone()].to_vec();
    gemm(
        &w[lay.head_w.clone()],
        lstm.final_hidden(),
        &mut probs,
        cfg.classes,
        cfg.lstm_hidden,
        1,
    );
    softmax_in_place(&mut probs);
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "forward pass produced non-finite output".into(),
        ));
    }
    let acts = SstaActivations {
        fingerprint: params.fingerprint(),
        frames,
        table,
        temporal,
        lstm,
        probs: probs.clone(),
    };
    Ok((probs, acts))
}

/// Most probable class (ties go to the lower index).
pub fn predict(params: &SstaParams, seq: &FrameSequence) -> Result<usize> {
    let (probs, _) = forward(params, seq)?;
    Ok(argmax(&probs))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// `-Σ_j y_j ln max(ŷ_j, 1e-12)` for one sample.
pub fn cross_entropy(pred: &[f64], label: &[f64]) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} label entries",
            pred.len(),
            label.len()
        )));
    }
    Ok(-pred
        .iter()
        .zip(label)
        .map(|(p, y)| y * p.max(LOG_CLAMP).ln())
        .sum::<f64>())
}

/// Cross-entropy summed over a batch.
pub fn loss(preds: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    preds
        .iter()
        .zip(labels)
        .map(|(p, y)| cross_entropy(p, y))
        .sum()
}

/// Gradient of the per-sample loss w.r.t. every parameter, in canonical order.
pub fn backward(params: &SstaParams, acts: &SstaActivations, label: &[f64]) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    backward_into(params, acts, label, &mut grad)?;
    Ok(grad)
}

fn backward_into(
    params: &SstaParams,
    acts: &SstaActivations,
    label: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    if acts.fingerprint != params.fingerprint() {
        return Err(Error::State(
            "activations were produced by different parameters".into(),
        ));
    }
    let cfg = params.config();
    if label.len() != cfg.classes {
        return Err(Error::Dimension(format!(
            "label has {} entries, model has {} classes",
            label.len(),
            cfg.classes
        )));
    }
    let lay = params.layout();
    let w = params.values();
    let ch = cfg.conv_channels;
    let fc = cfg.fc_dim;
    let hid = cfg.lstm_hidden;
    let steps = cfg.sequence_length;

    // softmax + clamped cross-entropy; the clamp kills the gradient of the
    // clamped terms
    let mask: Vec<f64> = acts
        .probs
        .iter()
        .zip(label)
        .map(|(p, y)| if *p > LOG_CLAMP { *y } else { 0.0 })
        .collect();
    let msum: f64 = mask.iter().sum();
    let d_logits: Vec<f64> = acts
        .probs
        .iter()
        .zip(&mask)
        .map(|(p, m)| p * msum - m)
        .collect();

    let h_final = acts.lstm.final_hidden();
    gemm(
        &d_logits,
        h_final,
        &mut grad[lay.head_w.clone()],
        cfg.classes,
        1,
        hid,
    );
    for (g, d) in grad[lay.head_b.clone()].iter_mut().zip(&d_logits) {
        *g += d;
    }
    let mut d_h = vec![0.0; hid];
    gemm_tn(
        &w[lay.head_w.clone()],
        &d_logits,
        &mut d_h,
        hid,
        cfg.classes,
        1,
    );

    let phi = lay.phi[0].start..lay.phi[5].end;
    let d_temporal = lstm_backward(
        &acts.lstm,
        &w[phi.clone()],
        cfg.conv1d_channels,
        &mut grad[phi],
        &d_h,
    );

    let (gw, gb) = grad[lay.conv1d_w.start..lay.conv1d_b.end].split_at_mut(lay.conv1d_w.len());
    let d_table = conv1d_same_backward(
        &acts.table,
        steps,
        fc,
        &w[lay.conv1d_w.clone()],
        cfg.conv1d_channels,
        cfg.conv1d_kernel,
        &d_temporal,
        gw,
        gb,
    );

    for (f, stages) in acts.frames.iter().enumerate() {
        let mut d_out = d_table[f * fc..(f + 1) * fc].to_vec();
        for (s, (st, cache)) in lay.stages.iter().zip(stages).enumerate().rev() {
            let p = st.positions();
            gemm(
                &d_out,
                &cache.ssa.y,
                &mut grad[st.fc_w.clone()],
                fc,
                1,
                p * ch,
            );
            for (g, d) in grad[st.fc_b.clone()].iter_mut().zip(&d_out) {
                *g += d;
            }
            let mut d_y = vec![0.0; p * ch];
            gemm(&d_out, &w[st.fc_w.clone()], &mut d_y, 1, fc, p * ch);

            let d_x = ssa_backward(
                &cache.ssa,
                p,
                ch,
                cfg.attention_dim,
                &w[st.omega_f.start..st.omega_v.end],
                &mut grad[st.omega_f.start..st.omega_v.end],
                &d_y,
            );
            let mut d_pre = to_channel_major(&d_x, ch, p);
            for (d, a) in d_pre.iter_mut().zip(&cache.conv) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut d_in = if s > 0 { Some(vec![0.0; p]) } else { None };
            let (gw, gb) = grad[st.conv_w.start..st.conv_b.end].split_at_mut(st.conv_w.len());
            conv2d_same_backward(
                &cache.input,
                1,
                st.grid_h,
                st.grid_w,
                &w[st.conv_w.clone()],
                ch,
                cfg.kernel_size,
                &d_pre,
                gw,
                gb,
                d_in.as_deref_mut(),
            );
            if let Some(d) = d_in {
                d_out = d;
            }
        }
    }
    Ok(())
}

/// Summed loss, summed gradient and number of correct argmax predictions.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub correct: usize,
}

pub fn loss_and_grad(params: &SstaParams, batch: &[&FrameSequence]) -> Result<BatchGradient> {
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    let mut correct = 0;
    for seq in batch {
        let (probs, acts) = forward(params, seq)?;
        let y = seq.one_hot();
        total += cross_entropy(&probs, &y)?;
        if argmax(&probs) == seq.label() {
            correct += 1;
        }
        backward_into(params, &acts, &y, &mut grad)?;
    }
    Ok(BatchGradient {
        loss: total,
        grad,
        correct,
    })
}

/// Summed loss over a batch without gradients.
pub fn batch_loss(params: &SstaParams, batch: &[&FrameSequence]) -> Result<f64> {
    let mut total = 0.0;
    for seq in batch {
        let (probs, _) = forward(params, seq)?;
        total += cross_entropy(&probs, &seq.one_hot())?;
    }
    Ok(total)
}

/// `w - μ ∇`.
pub fn sgd_step(params: &SstaParams, grad: &[f64], lr: f64) -> Result<SstaParams> {
    if grad.len() != params.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries, model has {}",
            grad.len(),
            params.len()
        )));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Parameter(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("gradient entry {i} is not finite")));
    }
    let values = params
        .values()
        .iter()
        .zip(grad)
        .map(|(w, g)| w - lr * g)
        .collect();
    params.with_values(values)
}
