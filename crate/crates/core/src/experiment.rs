//! End-to-end experiment: data generation, federated rounds, evaluation and
//! the CSV/JSON records written for each run.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csvfmt::fmt_f64;
use crate::error::{Error, Result};
use crate::fl::{
    run_round, AggregationStrategy, Operator, SimilarityReport, StrategyKind, TrainConfig,
};
use crate::metrics::{Averaging, ConfusionMatrix, Scores};
use crate::model::{predict, SstaConfig, SstaParams};
use crate::numerics::Rng;
use crate::synth::{partition, FrameSpec, Partition, Sample, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: usize,
    pub averaging: Averaging,
    pub model: SstaConfig,
    pub scenario: Scenario,
    pub strategy: AggregationStrategy,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            rounds: 20,
            averaging: Averaging::Macro,
            model: SstaConfig::default(),
            scenario: Scenario::default(),
            strategy: AggregationStrategy::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.scenario.validate()?;
        self.strategy.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn frame_spec(&self) -> FrameSpec {
        FrameSpec {
            height: self.model.frame_height,
            width: self.model.frame_width,
            length: self.model.sequence_length,
            classes: self.model.classes,
        }
    }
}

/// Global-model scores on every data split; `None` where a split is empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub train: Option<Scores>,
    pub validation: Option<Scores>,
    pub test: Option<Scores>,
    pub trained_test: Option<Scores>,
    pub untrained_test: Option<Scores>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorStats {
    pub id: usize,
    pub samples: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
}

/// Everything logged about one completed round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub stalled: bool,
    pub operators: Vec<OperatorStats>,
    pub similarity: Option<SimilarityReport>,
    /// Aggregation weight of each operator.
    pub weights: Vec<f64>,
    pub eval: Evaluation,
    /// Seconds; excluded from the deterministic artifacts.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticipantScore {
    pub participant: usize,
    pub shard: &'static str,
    pub scores: Scores,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub initial: Evaluation,
    pub last: Evaluation,
    pub participants: Vec<ParticipantScore>,
    pub params: SstaParams,
}

impl ExperimentOutcome {
    /// First round whose record satisfies `pred`.
    pub fn first_round(&self, pred: impl Fn(&RoundRecord) -> bool) -> Option<usize> {
        self.records.iter().find(|r| pred(r)).map(|r| r.round)
    }
}

/// Builds the rayon pool used for operator training and evaluation.
pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))
}

fn confusion(
    params: &SstaParams,
    samples: &[&Sample],
    pool: &rayon::ThreadPool,
) -> Result<ConfusionMatrix> {
    let preds: Vec<usize> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| predict(params, &s.sequence))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut cm = ConfusionMatrix::new(params.config().classes);
    for (s, p) in samples.iter().zip(preds) {
        cm.record(s.sequence.label(), p)?;
    }
    Ok(cm)
}

fn scores(cm: &ConfusionMatrix, avg: Averaging) -> Result<Option<Scores>> {
    if cm.total() == 0 {
        Ok(None)
    } else {
        Scores::from_matrix(cm, avg).map(Some)
    }
}

pub fn evaluate(
    params: &SstaParams,
    part: &Partition,
    avg: Averaging,
    pool: &rayon::ThreadPool,
) -> Result<Evaluation> {
    let train: Vec<&Sample> = part.operators.iter().flat_map(|o| o.train.iter()).collect();
    let trained: Vec<&Sample> = part.trained_test.iter().collect();
    let untrained: Vec<&Sample> = part.untrained_test.iter().collect();
    let cm_trained = confusion(params, &trained, pool)?;
    let cm_untrained = confusion(params, &untrained, pool)?;
    let mut cm_test = cm_trained.clone();
    cm_test.merge(&cm_untrained)?;
    Ok(Evaluation {
        train: scores(&confusion(params, &train, pool)?, avg)?,
        validation: scores(&confusion(params, &part.validation(), pool)?, avg)?,
        test: scores(&cm_test, avg)?,
        trained_test: scores(&cm_trained, avg)?,
        untrained_test: scores(&cm_untrained, avg)?,
    })
}

fn participant_report(
    params: &SstaParams,
    part: &Partition,
    avg: Averaging,
    pool: &rayon::ThreadPool,
) -> Result<Vec<ParticipantScore>> {
    let mut out = Vec::new();
    for (shard, samples) in [
        ("trained", &part.trained_test),
        ("untrained", &part.untrained_test),
    ] {
        let ids: std::collections::BTreeSet<usize> =
            samples.iter().map(|s| s.participant).collect();
        for id in ids {
            let mine: Vec<&Sample> = samples.iter().filter(|s| s.participant == id).collect();
            let cm = confusion(params, &mine, pool)?;
            out.push(ParticipantScore {
                participant: id,
                shard,
                scores: Scores::from_matrix(&cm, avg)?,
            });
        }
    }
    Ok(out)
}

/// Generates the scenario's data and runs the federation on it.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    workers: usize,
    on_round: impl FnMut(&RoundRecord) -> Result<()>,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let part = partition(&cfg.scenario, &cfg.frame_spec(), cfg.seed)?;
    run_on_partition(cfg, &part, workers, on_round)
}

/// Runs `cfg.rounds` rounds on pre-generated data. `on_round` sees every
/// record as soon as it is complete.
pub fn run_on_partition(
    cfg: &ExperimentConfig,
    part: &Partition,
    workers: usize,
    mut on_round: impl FnMut(&RoundRecord) -> Result<()>,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let pool = worker_pool(workers)?;
    let root = Rng::new(cfg.seed);
    let mut global = SstaParams::init(&cfg.model, &mut root.child("init", 0))?;
    let fl_rng = root.child("operators", 0);
    let operators = part
        .operators
        .iter()
        .map(|o| {
            Operator::new(
                o.id,
                o.train.iter().map(|s| s.sequence.clone()).collect(),
                fl_rng.child("operator", o.id as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let initial = evaluate(&global, part, cfg.averaging, &pool)?;
    let mut last = initial.clone();
    let mut records = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let start = Instant::now();
        let outcome = run_round(&global, &operators, &cfg.strategy, &cfg.train, round, &pool)?;
        global = outcome.global;
        last = evaluate(&global, part, cfg.averaging, &pool)?;
        let record = RoundRecord {
            round,
            stalled: outcome.stalled,
            operators: outcome
                .updates
                .iter()
                .map(|u| OperatorStats {
                    id: u.operator,
                    samples: u.samples,
                    train_loss: u.train_loss,
                    train_accuracy: u.train_accuracy,
                })
                .collect(),
            similarity: outcome.similarity,
            weights: outcome.weights,
            eval: last.clone(),
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "round {round}: test accuracy {}",
            record.eval.test.as_ref().map_or(f64::NAN, |s| s.accuracy)
        );
        on_round(&record)?;
        records.push(record);
    }
    let participants = participant_report(&global, part, cfg.averaging, &pool)?;
    Ok(ExperimentOutcome {
        records,
        initial,
        last,
        participants,
        params: global,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Header of `rounds.csv` for `operators` operators.
pub fn rounds_csv_header(operators: usize) -> String {
    let mut cols = vec!["round".to_string(), "stalled".to_string()];
    for prefix in ["loss", "train_acc", "pbar", "delta"] {
        cols.extend((1..=operators).map(|t| format!("{prefix}_{t}")));
    }
    cols.push("valid_mask".into());
    for split in [
        "train",
        "validation",
        "test",
        "trained_test",
        "untrained_test",
    ] {
        cols.push(format!("{split}_accuracy"));
    }
    cols.push("test_precision".into());
    cols.push("test_recall".into());
    cols.join(",")
}

/// One `rounds.csv` row (no trailing newline). Similarity columns are empty
/// for strategies that do not compute them.
pub fn rounds_csv_row(r: &RoundRecord) -> String {
    let mut cols = vec![r.round.to_string(), (r.stalled as u8).to_string()];
    cols.extend(r.operators.iter().map(|o| fmt_f64(o.train_loss)));
    cols.extend(r.operators.iter().map(|o| fmt_f64(o.train_accuracy)));
    match &r.similarity {
        Some(s) => cols.extend(s.mean_similarity.iter().map(|v| fmt_f64(*v))),
        None => cols.extend(r.operators.iter().map(|_| String::new())),
    }
    cols.extend(r.weights.iter().map(|v| fmt_f64(*v)));
    cols.push(match &r.similarity {
        Some(s) => s.valid.iter().map(|v| if *v { '1' } else { '0' }).collect(),
        None => String::new(),
    });
    let e = &r.eval;
    for s in [
        &e.train,
        &e.validation,
        &e.test,
        &e.trained_test,
        &e.untrained_test,
    ] {
        cols.push(opt(s.as_ref().map(|s| s.accuracy)));
    }
    cols.push(opt(e.test.as_ref().map(|s| s.precision)));
    cols.push(opt(e.test.as_ref().map(|s| s.recall)));
    cols.join(",")
}

pub const REPORT_CSV_HEADER: &str = "participant,shard,samples,accuracy,precision,recall";

pub fn report_csv_row(p: &ParticipantScore) -> String {
    format!(
        "{},{},{},{},{},{}",
        p.participant,
        p.shard,
        p.scores.samples,
        fmt_f64(p.scores.accuracy),
        fmt_f64(p.scores.precision),
        fmt_f64(p.scores.recall)
    )
}

/// Final summary written as `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub operators: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    pub stalled_rounds: usize,
    pub parameter_count: usize,
    pub weights_sha256: String,
    pub initial: Evaluation,
    #[serde(rename = "final")]
    pub last: Evaluation,
}

impl Summary {
    pub fn new(cfg: &ExperimentConfig, out: &ExperimentOutcome) -> Self {
        Summary {
            strategy: cfg.strategy.kind,
            seed: cfg.seed,
            operators: cfg.scenario.operators,
            local_epochs: cfg.train.local_epochs,
            rounds: out.records.len(),
            stalled_rounds: out.records.iter().filter(|r| r.stalled).count(),
            parameter_count: out.params.len(),
            weights_sha256: out.params.checksum(),
            initial: out.initial.clone(),
            last: out.last.clone(),
        }
    }
}
