//! Federated training: local updates, gradient recovery, similarity-based
//! aggregation and the FedAvg / FedProx baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{loss_and_grad, FrameSequence, SstaParams};
use crate::numerics::{cosine, norm, softmax_with_temperature, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    #[default]
    Gsc,
    FedAvg,
    FedProx,
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StrategyKind::Gsc => "gsc",
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::FedProx => "fedprox",
        })
    }
}

/// How FedAvg and FedProx weight operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AverageWeighting {
    #[default]
    Uniform,
    Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationStrategy {
    pub kind: StrategyKind,
    /// Similarity threshold θ.
    pub theta: f64,
    /// Softmax temperature τ.
    pub temperature: f64,
    /// FedProx coefficient ρ.
    pub proximal: f64,
    pub weighting: AverageWeighting,
}

impl Default for AggregationStrategy {
    fn default() -> Self {
        AggregationStrategy {
            kind: StrategyKind::Gsc,
            theta: 0.0,
            temperature: 1.0,
            proximal: 0.01,
            weighting: AverageWeighting::Uniform,
        }
    }
}

impl AggregationStrategy {
    pub fn gsc(theta: f64, temperature: f64) -> Self {
        AggregationStrategy {
            theta,
            temperature,
            ..Self::default()
        }
    }

    pub fn fedavg() -> Self {
        AggregationStrategy {
            kind: StrategyKind::FedAvg,
            ..Self::default()
        }
    }

    pub fn fedprox(proximal: f64) -> Self {
        AggregationStrategy {
            kind: StrategyKind::FedProx,
            proximal,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config("strategy.temperature", "must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.theta) {
            return Err(Error::config("strategy.theta", "must be in [-1, 1]"));
        }
        if !(self.proximal.is_finite() && self.proximal >= 0.0) {
            return Err(Error::config("strategy.proximal", "must be non-negative"));
        }
        Ok(())
    }

    /// ρ applied during local training (zero unless FedProx).
    pub fn local_proximal(&self) -> f64 {
        if self.kind == StrategyKind::FedProx {
            self.proximal
        } else {
            0.0
        }
    }
}

/// Local optimiser settings shared by every operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Minibatch gradients with a larger L2 norm are rescaled to this norm;
    /// zero disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            local_epochs: 5,
            learning_rate: 0.005,
            batch_size: 8,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::config("train.local_epochs", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return Err(Error::config("train.clip_norm", "must be zero or positive"));
        }
        Ok(())
    }
}

/// A regional client holding private training data.
#[derive(Debug, Clone)]
pub struct Operator {
    id: usize,
    data: Vec<FrameSequence>,
    rng: Rng,
}

impl Operator {
    /// `rng` seeds the operator's batch-order stream.
    pub fn new(id: usize, data: Vec<FrameSequence>, rng: Rng) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Input(format!("operator {id} has no training data")));
        }
        Ok(Operator { id, data, rng })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn data(&self) -> &[FrameSequence] {
        &self.data
    }
}

/// Weights an operator sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub operator: usize,
    pub round: usize,
    pub weights: Vec<f64>,
    pub samples: usize,
    /// Mean per-sample loss over the final local epoch.
    pub train_loss: f64,
    /// Fraction of final-epoch samples classified correctly before each step.
    pub train_accuracy: f64,
}

/// Loads `global`, runs `cfg.local_epochs` epochs of minibatch SGD and
/// returns the resulting weights.
///
/// With a proximal coefficient ρ > 0 each step minimises the linearised loss
/// plus `(ρ/2)‖w − w_global‖²` exactly, i.e.
/// `w ← (w − μ∇ + μρ w_global) / (1 + μρ)`, which stays stable for any ρ.
/// A zero learning rate leaves the weights untouched. With `clip_norm > 0`
/// the step uses `∇ · min(1, clip_norm / ‖∇‖)`.
pub fn local_train(
    op: &Operator,
    global: &SstaParams,
    cfg: &TrainConfig,
    proximal: f64,
    round: usize,
) -> Result<ModelUpdate> {
    if cfg.local_epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Parameter(
            "epochs and batch size must be positive".into(),
        ));
    }
    let mu = cfg.learning_rate;
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::Parameter(format!("learning rate {mu} is invalid")));
    }
    let mut rng = op.rng.child("round", round as u64);
    let anchor = global.values();
    let shrink = 1.0 / (1.0 + mu * proximal);
    let mut params = global.clone();
    let mut order: Vec<usize> = (0..op.data.len()).collect();
    let (mut last_loss, mut last_correct) = (0.0, 0);
    for epoch in 0..cfg.local_epochs {
        rng.shuffle(&mut order);
        let (mut epoch_loss, mut epoch_correct) = (0.0, 0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&FrameSequence> = chunk.iter().map(|&i| &op.data[i]).collect();
            let lg = loss_and_grad(&params, &batch).map_err(|e| match e {
                Error::Numeric(m) => {
                    Error::Numeric(format!("operator {}, epoch {epoch}, batch {b}: {m}", op.id))
                }
                other => other,
            })?;
            if !lg.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "operator {} produced a non-finite loss in epoch {epoch}, batch {b}",
                    op.id
                )));
            }
            epoch_loss += lg.loss;
            epoch_correct += lg.correct;
            if mu > 0.0 {
                let scale = clip_scale(&lg.grad, cfg.clip_norm);
                let next: Vec<f64> = params
                    .values()
                    .iter()
                    .zip(&lg.grad)
                    .zip(anchor)
                    .map(|((w, g), a)| (w - mu * scale * g + mu * proximal * a) * shrink)
                    .collect();
                params = params.with_values(next).map_err(|e| {
                    Error::Numeric(format!("operator {}, epoch {epoch}, batch {b}: {e}", op.id))
                })?;
            }
        }
        last_loss = epoch_loss;
        last_correct = epoch_correct;
    }
    let n = op.data.len();
    Ok(ModelUpdate {
        operator: op.id,
        round,
        weights: params.flatten(),
        samples: n,
        train_loss: last_loss / n as f64,
        train_accuracy: last_correct as f64 / n as f64,
    })
}

fn clip_scale(grad: &[f64], clip_norm: f64) -> f64 {
    if clip_norm <= 0.0 {
        return 1.0;
    }
    let n = norm(grad);
    if n > clip_norm {
        clip_norm / n
    } else {
        1.0
    }
}

/// `(w_t − w_prev) / μ`.
pub fn recover_gradient(update: &ModelUpdate, w_prev: &[f64], mu: f64) -> Result<Vec<f64>> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Parameter(format!(
            "learning rate must be positive, got {mu}"
        )));
    }
    if update.weights.len() != w_prev.len() {
        return Err(Error::Dimension(format!(
            "update from operator {} has {} weights, global model has {}",
            update.operator,
            update.weights.len(),
            w_prev.len()
        )));
    }
    Ok(update
        .weights
        .iter()
        .zip(w_prev)
        .map(|(w, p)| (w - p) / mu)
        .collect())
}

/// Outcome of one similarity comparison. Operator `i` in every vector is the
/// `i`-th gradient passed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub round: usize,
    /// Pairwise cosine matrix, row-major `T × T`.
    pub similarity: Vec<Vec<f64>>,
    /// Row means including the self term.
    pub mean_similarity: Vec<f64>,
    pub valid: Vec<bool>,
    pub weights: Vec<f64>,
    pub theta: f64,
    pub temperature: f64,
}

impl SimilarityReport {
    /// Zero-based positions of the operators that passed the threshold.
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.valid.len()).filter(|&i| self.valid[i]).collect()
    }

    pub fn is_stalled(&self) -> bool {
        !self.valid.iter().any(|v| *v)
    }
}

/// Cosine matrix, row means, threshold filter and temperature softmax.
///
/// If no operator reaches θ every weight is zero and the report is stalled.
pub fn gsc_weights(grads: &[Vec<f64>], theta: f64, temperature: f64) -> Result<SimilarityReport> {
    let t = grads.len();
    if t == 0 {
        return Err(Error::Input("no gradients to compare".into()));
    }
    if let Some(i) = grads.iter().position(|g| g.len() != grads[0].len()) {
        return Err(Error::Dimension(format!(
            "gradient {i} has length {}, expected {}",
            grads[i].len(),
            grads[0].len()
        )));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut sim = vec![vec![0.0; t]; t];
    for i in 0..t {
        for j in i..t {
            let c = cosine(&grads[i], &grads[j])?;
            sim[i][j] = c;
            sim[j][i] = c;
        }
    }
    let mean: Vec<f64> = sim
        .iter()
        .map(|row| row.iter().sum::<f64>() / t as f64)
        .collect();
    let valid: Vec<bool> = mean.iter().map(|p| *p >= theta).collect();
    let kept: Vec<f64> = (0..t).filter(|&i| valid[i]).map(|i| mean[i]).collect();
    let mut weights = vec![0.0; t];
    if !kept.is_empty() {
        let soft = softmax_with_temperature(&kept, temperature)?;
        for (i, w) in (0..t).filter(|&i| valid[i]).zip(soft) {
            weights[i] = w;
        }
    }
    Ok(SimilarityReport {
        round: 0,
        similarity: sim,
        mean_similarity: mean,
        valid,
        weights,
        theta,
        temperature,
    })
}

/// `Σ_t δ_t w_t`, accumulated in ascending operator-id order.
pub fn aggregate(updates: &[ModelUpdate], weights: &[f64]) -> Result<Vec<f64>> {
    if updates.is_empty() || updates.len() != weights.len() {
        return Err(Error::Protocol(format!(
            "{} updates but {} aggregation weights",
            updates.len(),
            weights.len()
        )));
    }
    let n = updates[0].weights.len();
    if let Some(u) = updates.iter().find(|u| u.weights.len() != n) {
        return Err(Error::Protocol(format!(
            "operator {} sent {} weights, expected {n}",
            u.operator,
            u.weights.len()
        )));
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].operator);
    let mut out = vec![0.0; n];
    for i in order {
        let d = weights[i];
        if d == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(&updates[i].weights) {
            *o += d * w;
        }
    }
    Ok(out)
}

/// Plain FedAvg weights: uniform, or proportional to sample counts.
pub fn average_weights(updates: &[ModelUpdate], weighting: AverageWeighting) -> Vec<f64> {
    match weighting {
        AverageWeighting::Uniform => vec![1.0 / updates.len() as f64; updates.len()],
        AverageWeighting::Samples => {
            let total: usize = updates.iter().map(|u| u.samples).sum();
            updates
                .iter()
                .map(|u| u.samples as f64 / total as f64)
                .collect()
        }
    }
}

/// Server-side result of one round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub global: SstaParams,
    pub updates: Vec<ModelUpdate>,
    pub weights: Vec<f64>,
    pub similarity: Option<SimilarityReport>,
    pub stalled: bool,
}

/// Broadcast, local training (in `pool`), and aggregation for one round.
pub fn run_round(
    global: &SstaParams,
    operators: &[Operator],
    strategy: &AggregationStrategy,
    cfg: &TrainConfig,
    round: usize,
    pool: &rayon::ThreadPool,
) -> Result<RoundOutcome> {
    use rayon::prelude::*;
    let rho = strategy.local_proximal();
    let updates: Vec<ModelUpdate> = pool.install(|| {
        operators
            .par_iter()
            .map(|op| local_train(op, global, cfg, rho, round))
            .collect::<Result<Vec<_>>>()
    })?;

    let (weights, similarity) = match strategy.kind {
        StrategyKind::Gsc => {
            let grads = updates
                .iter()
                .map(|u| recover_gradient(u, global.values(), cfg.learning_rate))
                .collect::<Result<Vec<_>>>()?;
            let mut report = gsc_weights(&grads, strategy.theta, strategy.temperature)?;
            report.round = round;
            (report.weights.clone(), Some(report))
        }
        StrategyKind::FedAvg | StrategyKind::FedProx => {
            (average_weights(&updates, strategy.weighting), None)
        }
    };
    let stalled = similarity
        .as_ref()
        .is_some_and(SimilarityReport::is_stalled);
    let next = if stalled {
        global.clone()
    } else {
        global.with_values(aggregate(&updates, &weights)?)?
    };
    Ok(RoundOutcome {
        global: next,
        updates,
        weights,
        similarity,
        stalled,
    })
}
