//! Finite-difference check of the analytic network gradient.

#![allow(dead_code)]

use drowsyfed_core::model::{batch_loss, loss_and_grad, FrameSequence, SstaConfig, SstaParams};
use drowsyfed_core::numerics::{finite_diff_grad, Rng, DEFAULT_FD_STEP};
use drowsyfed_core::vision::Frame;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

pub fn random_sequence(cfg: &SstaConfig, rng: &mut Rng, label: usize) -> FrameSequence {
    let frames = (0..cfg.sequence_length)
        .map(|_| {
            let px = (0..cfg.frame_height * cfg.frame_width)
                .map(|_| rng.uniform())
                .collect();
            Frame::new(cfg.frame_height, cfg.frame_width, 1, px).unwrap()
        })
        .collect();
    FrameSequence::new(frames, label, cfg.classes).unwrap()
}

/// Worst relative error per parameter block for one seed.
pub fn block_errors(cfg: &SstaConfig, seed: u64) -> Vec<(String, f64)> {
    let mut rng = Rng::new(seed);
    let params = SstaParams::init(cfg, &mut rng).unwrap();
    let batch: Vec<FrameSequence> = (0..cfg.classes)
        .map(|c| random_sequence(cfg, &mut rng, c))
        .collect();
    let refs: Vec<&FrameSequence> = batch.iter().collect();
    let analytic = loss_and_grad(&params, &refs).unwrap().grad;
    let numeric = finite_diff_grad(
        |w| {
            let p = params.with_values(w.to_vec()).unwrap();
            batch_loss(&p, &refs).unwrap()
        },
        params.values(),
        DEFAULT_FD_STEP,
    )
    .unwrap();
    params
        .blocks()
        .iter()
        .map(|b| {
            let worst = b
                .range
                .clone()
                .map(|i| rel_error(analytic[i], numeric[i]))
                .fold(0.0, f64::max);
            (b.name.clone(), worst)
        })
        .collect()
}
