#![allow(dead_code)]

//! Helpers shared by the integration test targets.

use iflow_core::net::{init_params, Activation, Batch, NetConfig, NetworkParams};
use iflow_core::process::{standard_normal_vec, Preconditioning};
use iflow_core::rng;
use rand::Rng;

/// Largest relative disagreement between analytic and central-difference
/// gradients. Entries below `floor` in magnitude are compared absolutely.
pub fn gradient_error(seed: u64) -> f64 {
    gradient_error_with(seed, 1e-4)
}

pub fn gradient_error_with(seed: u64, h: f64) -> f64 {
    let mut r = rng::stream(seed, 0);
    let d = r.random_range(1..=3);
    let depth = r.random_range(1..=3);
    let cfg = NetConfig {
        input_dim: d,
        hidden_sizes: (0..depth).map(|_| r.random_range(2..=6)).collect(),
        time_embed_dim: 2 * r.random_range(1..=3),
        activation: [Activation::Silu, Activation::Tanh][seed as usize % 2],
        ignore_anchor: false,
    };
    let mut p: NetworkParams<f64> = init_params(&cfg, &mut r).unwrap();
    for s in p.weights.slices_mut() {
        for v in s.iter_mut() {
            *v = r.random_range(-1.0..1.0);
        }
    }
    let rows: Vec<(Vec<f64>, Vec<f64>, f64, Preconditioning, Vec<f64>)> = (0..6)
        .map(|_| {
            let a = r.random_range(0.0..1.0);
            (
                standard_normal_vec(d, &mut r),
                standard_normal_vec(d, &mut r),
                r.random_range(0.0..1.0),
                Preconditioning { a, b: 1.0 - a },
                standard_normal_vec(d, &mut r),
            )
        })
        .collect();
    let view: Vec<_> = rows
        .iter()
        .map(|(a, x, t, c, y)| (&a[..], &x[..], *t, *c, &y[..]))
        .collect();
    let batch = Batch::<f64>::from_rows(&view).unwrap();
    let c = [1e-4, 1.6e-4, 0.1][seed as usize % 3];
    let analytic = p.loss_and_grad(&batch, c).unwrap().grads;
    let analytic: Vec<f64> = analytic.slices().iter().flat_map(|s| s.iter().copied()).collect();

    let floor = 1e-4;
    let mut worst: f64 = 0.0;
    let mut k = 0;
    let n_tensors = p.weights.slices().len();
    for ti in 0..n_tensors {
        let len = p.weights.slices()[ti].len();
        for j in 0..len {
            let orig = p.weights.slices()[ti][j];
            p.weights.slices_mut()[ti][j] = orig + h;
            let up = p.loss_and_grad(&batch, c).unwrap().loss;
            p.weights.slices_mut()[ti][j] = orig - h;
            let down = p.loss_and_grad(&batch, c).unwrap().loss;
            p.weights.slices_mut()[ti][j] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = analytic[k];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(floor));
            k += 1;
        }
    }
    worst
}
