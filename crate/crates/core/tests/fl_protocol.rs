#[path = "oracles/gsc_hand.rs"]
mod gsc_hand;

use drowsyfed_core::experiment::{rounds_csv_row, run_experiment, ExperimentConfig};
use drowsyfed_core::fl::{
    aggregate, gsc_weights, local_train, recover_gradient, run_round, AggregationStrategy,
    ModelUpdate, Operator, StrategyKind, TrainConfig,
};
use drowsyfed_core::model::{loss_and_grad, FrameSequence, SstaConfig, SstaParams};
use drowsyfed_core::numerics::{cosine, Rng};
use drowsyfed_core::synth::{gen_sequence, CorruptionSpec, FrameSpec, Participant};
use drowsyfed_core::Error;
use proptest::prelude::*;

fn toy_spec(cfg: &SstaConfig) -> FrameSpec {
    FrameSpec {
        height: cfg.frame_height,
        width: cfg.frame_width,
        length: cfg.sequence_length,
        classes: cfg.classes,
    }
}

fn toy_data(cfg: &SstaConfig, participant: usize, n: usize, seed: u64) -> Vec<FrameSequence> {
    let spec = toy_spec(cfg);
    let p = Participant::generate(participant, 1.0, &Rng::new(seed));
    let mut rng = Rng::new(seed + 1000);
    (0..n)
        .map(|i| gen_sequence(&p, i % cfg.classes, &mut rng, &spec, 0.05).unwrap())
        .collect()
}

fn toy_operators(cfg: &SstaConfig, t: usize) -> Vec<Operator> {
    (1..=t)
        .map(|id| {
            Operator::new(
                id,
                toy_data(cfg, id, 6, id as u64),
                Rng::new(99).child("operator", id as u64),
            )
            .unwrap()
        })
        .collect()
}

fn toy_global(cfg: &SstaConfig) -> SstaParams {
    SstaParams::init(cfg, &mut Rng::new(5)).unwrap()
}

fn small_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 3;
    cfg.rounds = 3;
    cfg.model = SstaConfig::toy();
    cfg.scenario.participants = 6;
    cfg.scenario.operators = 3;
    cfg.scenario.sequences_per_class = 3;
    cfg.scenario.trained_test_participants = 2;
    cfg.scenario.untrained_test_participants = 2;
    cfg.scenario.test_sequences_per_class = 2;
    cfg.train.local_epochs = 2;
    cfg
}

fn update(op: usize, weights: Vec<f64>) -> ModelUpdate {
    ModelUpdate {
        operator: op,
        round: 1,
        weights,
        samples: 4,
        train_loss: 0.0,
        train_accuracy: 0.0,
    }
}

#[test]
fn zero_learning_rate_returns_global_weights() {
    let cfg = SstaConfig::toy();
    let global = toy_global(&cfg);
    let op = &toy_operators(&cfg, 1)[0];
    let train = TrainConfig {
        local_epochs: 3,
        learning_rate: 0.0,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let up = local_train(op, &global, &train, 0.0, 1).unwrap();
    assert_eq!(up.weights, global.flatten());
}

#[test]
fn huge_proximal_term_pins_weights_to_global() {
    let cfg = SstaConfig::toy();
    let global = toy_global(&cfg);
    let op = &toy_operators(&cfg, 1)[0];
    let train = TrainConfig {
        local_epochs: 1,
        learning_rate: 0.05,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let up = local_train(op, &global, &train, 1e6, 1).unwrap();
    let drift = up
        .weights
        .iter()
        .zip(global.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(drift < 1e-3, "drift {drift}");
    let free = local_train(op, &global, &train, 0.0, 1).unwrap();
    assert_ne!(free.weights, global.flatten());
}

#[test]
fn one_full_batch_epoch_is_one_gradient_step() {
    let cfg = SstaConfig::toy();
    let global = toy_global(&cfg);
    let op = &toy_operators(&cfg, 1)[0];
    let mu = 0.03;
    let train = TrainConfig {
        local_epochs: 1,
        learning_rate: mu,
        batch_size: op.data().len(),
        clip_norm: 0.0,
    };
    let up = local_train(op, &global, &train, 0.0, 1).unwrap();
    let batch: Vec<&FrameSequence> = op.data().iter().collect();
    let g = loss_and_grad(&global, &batch).unwrap().grad;
    for ((w, w0), gi) in up.weights.iter().zip(global.values()).zip(&g) {
        let expect = w0 - mu * gi;
        assert!(
            (w - expect).abs() <= 1e-12 * expect.abs().max(1.0),
            "{w} vs {expect}"
        );
    }
}

#[test]
fn clipped_step_has_length_mu_times_clip_norm() {
    let cfg = SstaConfig::toy();
    let global = toy_global(&cfg);
    let op = &toy_operators(&cfg, 1)[0];
    let (mu, clip) = (0.03, 1e-3);
    let train = TrainConfig {
        local_epochs: 1,
        learning_rate: mu,
        batch_size: op.data().len(),
        clip_norm: clip,
    };
    let up = local_train(op, &global, &train, 0.0, 1).unwrap();
    let batch: Vec<&FrameSequence> = op.data().iter().collect();
    let g = loss_and_grad(&global, &batch).unwrap().grad;
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(gn > clip);
    let mut step = 0.0;
    for ((w, w0), gi) in up.weights.iter().zip(global.values()).zip(&g) {
        let expect = w0 - mu * clip * gi / gn;
        assert!((w - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        step += (w - w0) * (w - w0);
    }
    assert!((step.sqrt() - mu * clip).abs() < 1e-9 * mu * clip + 1e-15);
}

#[test]
fn recovered_gradient_scales_with_step_size_but_not_its_direction() {
    let cfg = SstaConfig::toy();
    let global = toy_global(&cfg);
    let ops = toy_operators(&cfg, 2);
    let train = TrainConfig {
        local_epochs: 1,
        learning_rate: 0.02,
        batch_size: 3,
        ..TrainConfig::default()
    };
    let ups: Vec<ModelUpdate> = ops
        .iter()
        .map(|op| local_train(op, &global, &train, 0.0, 1).unwrap())
        .collect();
    let g1: Vec<Vec<f64>> = ups
        .iter()
        .map(|u| recover_gradient(u, global.values(), 0.1).unwrap())
        .collect();
    let g2: Vec<Vec<f64>> = ups
        .iter()
        .map(|u| recover_gradient(u, global.values(), 0.2).unwrap())
        .collect();
    for (a, b) in g1[0].iter().zip(&g2[0]) {
        assert!((a - 2.0 * b).abs() <= 1e-12 * a.abs().max(1e-300));
    }
    let c1 = cosine(&g1[0], &g1[1]).unwrap();
    let c2 = cosine(&g2[0], &g2[1]).unwrap();
    assert!((c1 - c2).abs() < 1e-12);
    assert!(recover_gradient(&ups[0], global.values(), 0.0).is_err());
}

#[test]
fn three_operator_hand_case() {
    let g = vec![0.4, -1.1, 2.5, 0.3];
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    let r = gsc_weights(&[g.clone(), g, neg], 0.0, 1.0).unwrap();
    let hand = gsc_hand::three_operator_case();
    for i in 0..3 {
        for j in 0..3 {
            assert!((r.similarity[i][j] - hand.similarity[i][j]).abs() < 1e-12);
        }
        assert!((r.mean_similarity[i] - hand.mean[i]).abs() < 1e-12);
        assert!((r.weights[i] - hand.weights[i]).abs() < 1e-12);
    }
    assert_eq!(r.valid, hand.valid);
    assert_eq!(r.valid_indices(), vec![0, 1]);
}

#[test]
fn lowest_threshold_keeps_every_operator() {
    let mut rng = Rng::new(8);
    for _ in 0..20 {
        let grads: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..7).map(|_| rng.normal()).collect())
            .collect();
        let r = gsc_weights(&grads, -1.0, 1.0).unwrap();
        assert!(r.valid.iter().all(|v| *v));
    }
}

#[test]
fn stalled_round_keeps_previous_weights() {
    let cfg = SstaConfig::toy();
    let global = toy_global(&cfg);
    let ops = toy_operators(&cfg, 3);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let strategy = AggregationStrategy::gsc(1.0, 1.0);
    let out = run_round(&global, &ops, &strategy, &TrainConfig::default(), 1, &pool).unwrap();
    assert!(out.stalled);
    assert_eq!(out.global, global);
    assert!(out.weights.iter().all(|w| *w == 0.0));
}

#[test]
fn singleton_federation_adopts_the_local_model() {
    let cfg = SstaConfig::toy();
    let global = toy_global(&cfg);
    let ops = toy_operators(&cfg, 1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let train = TrainConfig {
        local_epochs: 2,
        learning_rate: 0.02,
        batch_size: 4,
        ..TrainConfig::default()
    };
    for strategy in [
        AggregationStrategy::gsc(0.0, 1.0),
        AggregationStrategy::fedavg(),
        AggregationStrategy::fedprox(0.01),
    ] {
        let out = run_round(&global, &ops, &strategy, &train, 1, &pool).unwrap();
        let local = local_train(&ops[0], &global, &train, strategy.local_proximal(), 1).unwrap();
        assert_eq!(out.global.values(), &local.weights[..], "{}", strategy.kind);
    }
}

#[test]
fn aggregation_ignores_arrival_order() {
    let ups = vec![
        update(1, vec![0.1, 0.7, -0.2]),
        update(2, vec![1.3, -0.4, 0.9]),
        update(3, vec![-0.6, 0.2, 0.5]),
    ];
    let delta = [0.2, 0.5, 0.3];
    let base = aggregate(&ups, &delta).unwrap();
    let perm = [2, 0, 1];
    let shuffled: Vec<ModelUpdate> = perm.iter().map(|&i| ups[i].clone()).collect();
    let d: Vec<f64> = perm.iter().map(|&i| delta[i]).collect();
    assert_eq!(aggregate(&shuffled, &d).unwrap(), base);

    // relabelling the operators permutes the accumulation order; the sum
    // agrees up to rounding
    let relabelled: Vec<ModelUpdate> = ups
        .iter()
        .enumerate()
        .map(|(i, u)| update(3 - i, u.weights.clone()))
        .collect();
    for (a, b) in aggregate(&relabelled, &delta).unwrap().iter().zip(&base) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn local_training_errors_name_the_operator() {
    let cfg = SstaConfig::toy();
    let global = toy_global(&cfg);
    let op = &toy_operators(&cfg, 3)[2];
    let train = TrainConfig {
        local_epochs: 1,
        learning_rate: 1e308,
        batch_size: 2,
        clip_norm: 0.0,
    };
    match local_train(op, &global, &train, 0.0, 1) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("operator 3"), "{msg}"),
        other => panic!("expected numeric error, got {other:?}"),
    }
    assert!(Operator::new(4, Vec::new(), Rng::new(1)).is_err());
}

#[test]
fn flat_similarity_weighting_reduces_to_fedavg() {
    let mut a = small_experiment();
    a.strategy = AggregationStrategy::gsc(-1.0, 1e6);
    let mut b = a.clone();
    b.strategy = AggregationStrategy::fedavg();
    let ra = run_experiment(&a, 1, |_| Ok(())).unwrap();
    let rb = run_experiment(&b, 1, |_| Ok(())).unwrap();
    for (x, y) in ra.params.values().iter().zip(rb.params.values()) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let cfg = small_experiment();
    let rows = |c: &ExperimentConfig| {
        let mut rows = Vec::new();
        let out = run_experiment(c, 2, |r| {
            rows.push(rounds_csv_row(r));
            Ok(())
        })
        .unwrap();
        (rows, out.params.checksum())
    };
    assert_eq!(rows(&cfg), rows(&cfg));
}

#[test]
fn zero_rounds_evaluates_the_initial_model() {
    let mut cfg = small_experiment();
    cfg.rounds = 0;
    let out = run_experiment(&cfg, 1, |_| Ok(())).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.initial, out.last);
    let init = SstaParams::init(&cfg.model, &mut Rng::new(cfg.seed).child("init", 0)).unwrap();
    assert_eq!(out.params, init);
}

#[test]
fn strategies_share_everything_before_aggregation() {
    let a = small_experiment();
    let mut b = a.clone();
    b.strategy = AggregationStrategy::fedavg();
    let ra = run_experiment(&a, 1, |_| Ok(())).unwrap();
    let rb = run_experiment(&b, 1, |_| Ok(())).unwrap();
    assert_eq!(ra.initial, rb.initial);
    assert_eq!(ra.records[0].operators, rb.records[0].operators);
    assert!(ra.records[0].similarity.is_some());
    assert!(rb.records[0].similarity.is_none());
}

#[test]
fn invalid_config_fails_before_running() {
    let mut cfg = small_experiment();
    cfg.strategy.temperature = 0.0;
    let mut called = false;
    let err = run_experiment(&cfg, 1, |_| {
        called = true;
        Ok(())
    })
    .unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err:?}");
    assert!(!called);
}

#[test]
fn label_flipped_operator_is_filtered_after_warm_up() {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 1;
    cfg.rounds = 12;
    cfg.model.frame_height = 8;
    cfg.model.frame_width = 8;
    cfg.scenario.participants = 10;
    cfg.scenario.sequences_per_class = 4;
    cfg.scenario.trained_test_participants = 2;
    cfg.scenario.untrained_test_participants = 2;
    cfg.scenario.test_sequences_per_class = 2;
    cfg.scenario.corruption = vec![CorruptionSpec {
        operator: 1,
        probability: 1.0,
    }];
    cfg.strategy = AggregationStrategy::gsc(0.2, 1.0);
    cfg.train.local_epochs = 2;
    let out = run_experiment(&cfg, 1, |_| Ok(())).unwrap();
    let late: Vec<_> = out.records.iter().filter(|r| r.round > 4).collect();
    let excluded = late
        .iter()
        .filter(|r| !r.similarity.as_ref().unwrap().valid[0])
        .count();
    assert!(
        2 * excluded > late.len(),
        "excluded in {excluded} of {} rounds",
        late.len()
    );
    assert_eq!(out.records[0].operators[0].id, 1);
    assert_eq!(cfg.strategy.kind, StrategyKind::Gsc);
}

fn grad_set() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 1usize..8).prop_flat_map(|(t, n)| {
        prop::collection::vec(
            prop::collection::vec(-5.0f64..5.0, n)
                .prop_filter("non-zero", |g| g.iter().map(|v| v * v).sum::<f64>() > 1e-6),
            t,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn report_matches_naive_oracle(grads in grad_set(), theta in -1.0f64..1.0, tau in 0.05f64..10.0) {
        let r = gsc_weights(&grads, theta, tau).unwrap();
        let hand = gsc_hand::naive_gsc(&grads, theta, tau);
        let t = grads.len();
        for i in 0..t {
            for j in 0..t {
                prop_assert!((r.similarity[i][j] - hand.similarity[i][j]).abs() < 1e-12);
                prop_assert!((r.similarity[i][j] - r.similarity[j][i]).abs() < 1e-12);
            }
            prop_assert!((r.similarity[i][i] - 1.0).abs() < 1e-12);
            prop_assert!((r.mean_similarity[i] - hand.mean[i]).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r.mean_similarity[i]));
        }
        // a hair's breadth from θ the two evaluations may legitimately disagree
        if hand.mean.iter().all(|m| (m - theta).abs() > 1e-9) {
            prop_assert_eq!(&r.valid, &hand.valid);
            for i in 0..t {
                prop_assert!((r.weights[i] - hand.weights[i]).abs() < 1e-12);
            }
        }
        if !r.is_stalled() {
            prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for i in 0..t {
            if !r.valid[i] {
                prop_assert_eq!(r.weights[i], 0.0);
            }
        }
    }

    #[test]
    fn report_is_scale_invariant(grads in grad_set(), k in 0.01f64..100.0, theta in -1.0f64..1.0) {
        let scaled: Vec<Vec<f64>> = grads.iter().map(|g| g.iter().map(|v| v * k).collect()).collect();
        let a = gsc_weights(&grads, theta, 1.0).unwrap();
        let b = gsc_weights(&scaled, theta, 1.0).unwrap();
        for i in 0..grads.len() {
            prop_assert!((a.mean_similarity[i] - b.mean_similarity[i]).abs() < 1e-12);
        }
        if a.mean_similarity.iter().all(|m| (m - theta).abs() > 1e-9) {
            prop_assert_eq!(&a.valid, &b.valid);
            for i in 0..grads.len() {
                prop_assert!((a.weights[i] - b.weights[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn infinite_temperature_is_uniform(grads in grad_set()) {
        let r = gsc_weights(&grads, -1.0, 1e6).unwrap();
        let u = 1.0 / grads.len() as f64;
        for w in r.weights {
            prop_assert!((w - u).abs() < 1e-6);
        }
    }
}
