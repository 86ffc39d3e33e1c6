#[path = "oracles/gradcheck.rs"]
mod gradcheck;

use drowsyfed_core::model::{
    backward, forward, loss_and_grad, sgd_step, FrameSequence, SstaConfig, SstaParams,
};
use drowsyfed_core::numerics::Rng;
use gradcheck::{block_errors, random_sequence};

#[test]
fn analytic_gradient_matches_finite_differences_on_every_block() {
    let cfg = SstaConfig::toy();
    for seed in 0..5 {
        let errs = block_errors(&cfg, seed);
        assert_eq!(errs.len(), SstaParams::zeros(&cfg).unwrap().blocks().len());
        for (name, e) in errs {
            assert!(e < 1e-4, "seed {seed}, block {name}: rel err {e:e}");
        }
    }
}

#[test]
fn gradient_check_with_three_classes_and_one_stage() {
    let cfg = SstaConfig {
        classes: 3,
        ssa_stages: 1,
        frame_width: 5,
        ..SstaConfig::toy()
    };
    for (name, e) in block_errors(&cfg, 11) {
        assert!(e < 1e-4, "block {name}: rel err {e:e}");
    }
}

#[test]
fn duplicated_batch_doubles_gradient() {
    let cfg = SstaConfig::toy();
    let mut rng = Rng::new(5);
    let params = SstaParams::init(&cfg, &mut rng).unwrap();
    let seq = random_sequence(&cfg, &mut rng, 1);
    let one = loss_and_grad(&params, &[&seq]).unwrap();
    let two = loss_and_grad(&params, &[&seq, &seq]).unwrap();
    assert!((two.loss - 2.0 * one.loss).abs() < 1e-12);
    for (a, b) in one.grad.iter().zip(&two.grad) {
        assert!((b - 2.0 * a).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn perfect_prediction_zeroes_head_gradient() {
    // A huge head bias on the true class saturates the softmax to exactly 1.
    let cfg = SstaConfig::toy();
    let mut rng = Rng::new(6);
    let params = SstaParams::init(&cfg, &mut rng).unwrap();
    let mut v = params.flatten();
    let head_b = params
        .blocks()
        .iter()
        .find(|b| b.name == "head_b")
        .unwrap()
        .range
        .clone();
    v[head_b.start] = 0.0;
    v[head_b.start + 1] = 800.0;
    let params = params.with_values(v).unwrap();
    let seq = random_sequence(&cfg, &mut rng, 1);
    let (probs, acts) = forward(&params, &seq).unwrap();
    assert_eq!(probs, vec![0.0, 1.0]);
    let g = backward(&params, &acts, &seq.one_hot()).unwrap();
    for b in params
        .blocks()
        .iter()
        .filter(|b| b.name.starts_with("head"))
    {
        assert!(g[b.range.clone()].iter().all(|x| *x == 0.0), "{}", b.name);
    }
}

#[test]
fn sgd_step_arithmetic() {
    let cfg = SstaConfig::toy();
    let params = SstaParams::init(&cfg, &mut Rng::new(7)).unwrap();
    let same = sgd_step(&params, &vec![0.0; params.len()], 0.5).unwrap();
    assert_eq!(same, params);

    let ones = params.with_values(vec![1.0; params.len()]).unwrap();
    let stepped = sgd_step(&ones, &vec![1.0; params.len()], 0.1).unwrap();
    assert!(stepped.values().iter().all(|v| *v == 0.9));
    // (w_new - w_old) / μ recovers -g up to one rounding of the subtraction
    for (n, o) in stepped.values().iter().zip(ones.values()) {
        assert!(((n - o) / 0.1 + 1.0).abs() < 1e-15);
    }

    let mut bad = vec![0.0; params.len()];
    bad[3] = f64::NAN;
    assert!(sgd_step(&params, &bad, 0.1).is_err());
    assert!(sgd_step(&params, &vec![0.0; params.len()], 0.0).is_err());
}

#[test]
fn sequences_reject_bad_labels_and_mixed_sizes() {
    let cfg = SstaConfig::toy();
    let mut rng = Rng::new(8);
    let seq = random_sequence(&cfg, &mut rng, 0);
    assert!(FrameSequence::new(seq.frames().to_vec(), 2, 2).is_err());
    let mut frames = seq.frames().to_vec();
    frames.push(drowsyfed_core::vision::Frame::new(5, 5, 1, vec![0.0; 25]).unwrap());
    assert!(FrameSequence::new(frames, 0, 2).is_err());
}
