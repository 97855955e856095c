//! Nadam with per-tensor clipping on a two-parameter quadratic bowl.

use chartag::optim::{clip_by_norm, nadam_step, ClipConfig, NadamConfig, NadamState};
use chartag::tensor::Gradients;
use chartag::{ParamStore, Tensor};

fn main() {
    let cfg = NadamConfig {
        lr: 0.05,
        ..Default::default()
    };
    let mut params = ParamStore::new();
    params.insert("x", Tensor::vector(vec![3.0, -2.0]).unwrap());
    let mut state = NadamState::new();
    for step in 1..=300 {
        let x = params.get("x").unwrap().data().to_vec();
        // f(x) = x0² + 10·x1²
        let mut grads = Gradients::new();
        grads.insert("x", Tensor::vector(vec![2.0 * x[0], 20.0 * x[1]]).unwrap());
        let grads = clip_by_norm(grads, &ClipConfig::default());
        nadam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        if step % 50 == 0 {
            let x = params.get("x").unwrap().data();
            println!("step {step:>3}: x = ({:+.5}, {:+.5}), f = {:.3e}", x[0], x[1], x[0] * x[0] + 10.0 * x[1] * x[1]);
        }
    }
}
