//! Metrics on trained models.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{NetConfig, NetworkParams};
use crate::oracle::Welford;
use crate::process::{standard_normal_vec, unit_direction, ProcessSpec};
use crate::rng;
use crate::sampler::{refine_once, Trajectory};
use crate::trainer::{train, NullSink, TrainConfig};

/// Above this many rows, a matrix is subsampled before computing the
/// energy distance.
pub const ENERGY_MAX_POINTS: usize = 10_000;

/// `2 E‖a − b‖ − E‖a − a′‖ − E‖b − b′‖` with every pair (diagonal included)
/// in each mean, so identical multisets give exactly zero. Inputs above
/// [`ENERGY_MAX_POINTS`] rows are subsampled without replacement using `seed`.
pub fn energy_distance(a: ArrayView2<f64>, b: ArrayView2<f64>, seed: u64) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::arg("energy distance needs non-empty samples"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::arg(format!(
            "dimension mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let a = subsample(a, seed, 0);
    let b = subsample(b, seed, 1);
    let ab = mean_distance(a.view(), b.view());
    let aa = mean_distance(a.view(), a.view());
    let bb = mean_distance(b.view(), b.view());
    Ok(2.0 * ab - aa - bb)
}

fn subsample(x: ArrayView2<f64>, seed: u64, which: u64) -> Array2<f64> {
    if x.nrows() <= ENERGY_MAX_POINTS {
        return x.to_owned();
    }
    let mut r = rng::stream(seed, 100 + which);
    let mut idx = sample_indices(&mut r, x.nrows(), ENERGY_MAX_POINTS).into_vec();
    idx.sort_unstable();
    x.select(Axis(0), &idx)
}

/// Mean Euclidean distance over all `(i, j)` pairs. Row sums are computed in
/// parallel and reduced in order, so the result does not depend on the pool.
fn mean_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let d = a.ncols();
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (av, bv) = (a.as_slice().expect("standard"), b.as_slice().expect("standard"));
    let row_sums: Vec<f64> = av
        .par_chunks_exact(d)
        .map(|ai| {
            bv.chunks_exact(d)
                .map(|bj| {
                    ai.iter()
                        .zip(bj)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
        })
        .collect();
    row_sums.iter().sum::<f64>() / (av.len() / d) as f64 / (bv.len() / d) as f64
}

/// `max_t ‖prediction(t) − endpoint‖ / max(‖z − endpoint‖, 1e−12)`.
pub fn straightness(traj: &Trajectory) -> Result<f64> {
    if traj.times.len() < 2 || traj.predictions.len() != traj.times.len() {
        return Err(Error::arg("trajectory needs at least two times"));
    }
    let scale = dist(&traj.z, &traj.endpoint).max(1e-12);
    Ok(traj
        .predictions
        .iter()
        .map(|p| dist(p, &traj.endpoint) / scale)
        .fold(0.0, f64::max))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiLipschitzReport {
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `max(|ln max_ratio|, |ln min_ratio|) / t` at the normalized terminal time `t = 1`.
    pub estimated_l: f64,
    pub collisions: usize,
    pub pairs_tested: usize,
}

/// Output distance below which two distinct inputs count as colliding.
pub const COLLISION_TOL: f64 = 1e-6;

/// Probe a map `(x_T, anchor) ↦ x0` for injectivity and distance distortion.
///
/// Pair `i` draws `x_T` from `prior`, a shared anchor, a random unit direction
/// and a separation `ρ` log-uniform on `[δ, 1000 δ]`; the partner is
/// `y_T = x_T + ρ v`.
pub fn bilipschitz_probe_with<P, M>(
    dim: usize,
    num_pairs: usize,
    delta_in: f64,
    seed: u64,
    prior: P,
    map: M,
) -> Result<BiLipschitzReport>
where
    P: Fn(&mut rng::StreamRng) -> Result<Vec<f64>> + Sync,
    M: Fn(&Array2<f64>, &Array2<f64>) -> Result<Array2<f64>>,
{
    if num_pairs < 1 {
        return Err(Error::arg("num_pairs must be at least 1"));
    }
    if !(delta_in > 0.0 && delta_in.is_finite()) {
        return Err(Error::arg("delta_in must be positive"));
    }
    let mut xs = Array2::zeros((2 * num_pairs, dim));
    let mut anchors = Array2::zeros((2 * num_pairs, dim));
    let mut input_dist = Vec::with_capacity(num_pairs);
    for i in 0..num_pairs {
        let mut r = rng::substream(seed, i as u64);
        let x = prior(&mut r)?;
        let anchor = standard_normal_vec(dim, &mut r);
        let v = unit_direction(dim, &mut r);
        let rho = delta_in * 1000f64.powf(r.random::<f64>());
        for j in 0..dim {
            xs[[2 * i, j]] = x[j];
            xs[[2 * i + 1, j]] = x[j] + rho * v[j];
            anchors[[2 * i, j]] = anchor[j];
            anchors[[2 * i + 1, j]] = anchor[j];
        }
        // Measure the separation actually realized in floating point.
        input_dist.push(dist(
            xs.row(2 * i).as_slice().expect("contiguous"),
            xs.row(2 * i + 1).as_slice().expect("contiguous"),
        ));
    }
    let out = map(&xs, &anchors)?;
    let mut report = BiLipschitzReport {
        min_ratio: f64::INFINITY,
        max_ratio: 0.0,
        estimated_l: 0.0,
        collisions: 0,
        pairs_tested: num_pairs,
    };
    for (i, &din) in input_dist.iter().enumerate() {
        let dout = out
            .row(2 * i)
            .iter()
            .zip(out.row(2 * i + 1).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dout < COLLISION_TOL {
            report.collisions += 1;
        }
        let ratio = dout / din;
        report.min_ratio = report.min_ratio.min(ratio);
        report.max_ratio = report.max_ratio.max(ratio);
    }
    report.estimated_l = report.max_ratio.ln().abs().max(report.min_ratio.ln().abs());
    Ok(report)
}

/// [`bilipschitz_probe_with`] applied to `k`-step sampling from `params`.
pub fn bilipschitz_probe(
    params: &NetworkParams<f32>,
    spec: &ProcessSpec,
    num_pairs: usize,
    steps: usize,
    delta_in: f64,
    seed: u64,
) -> Result<BiLipschitzReport> {
    if steps < 1 {
        return Err(Error::arg("steps must be at least 1"));
    }
    let dim = params.config.input_dim;
    bilipschitz_probe_with(
        dim,
        num_pairs,
        delta_in,
        seed,
        |r| spec.sample_prior(dim, r),
        |xs, anchors| {
            let mut x0 = anchors.clone();
            for _ in 0..steps {
                x0 = refine_once(params, spec, xs, &x0)?;
            }
            Ok(x0)
        },
    )
}

/// Held-out `x0` recovery error of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct HeldoutError {
    /// Per-example squared error divided by the dimension.
    pub per_example: Vec<f64>,
    pub mse: f64,
    pub std_err: f64,
}

/// Mean squared `x0` recovery error on `test` at random times.
///
/// Each example gets a fresh standard normal anchor, refined by
/// `warmup_passes` predictions at independent times (the held-out analogue
/// of the training buffer; see [`training_visits`]). The error is then
/// measured at one more independent time. Draws depend only on
/// `(seed, example)`, so two models evaluated with the same seed see
/// identical noise.
pub fn heldout_mse(
    params: &NetworkParams<f32>,
    spec: &ProcessSpec,
    test: &Dataset,
    warmup_passes: usize,
    seed: u64,
) -> Result<HeldoutError> {
    const CHUNK: usize = 1024;
    let d = test.dim();
    if params.config.input_dim != d {
        return Err(Error::arg("model and dataset dimensions differ"));
    }
    let starts: Vec<usize> = (0..test.len()).step_by(CHUNK).collect();
    let chunks: Vec<Vec<f64>> = starts
        .into_par_iter()
        .map(|start| {
            let ids = start..(start + CHUNK).min(test.len());
            let n = ids.len();
            let mut rngs: Vec<_> = ids.clone().map(|i| rng::substream(seed, i as u64)).collect();
            let mut anchors = Array2::<f32>::zeros((n, d));
            for (mut row, r) in anchors.rows_mut().into_iter().zip(&mut rngs) {
                for (v, g) in row.iter_mut().zip(standard_normal_vec(d, r)) {
                    *v = g as f32;
                }
            }
            let mut x_t = Array2::<f32>::zeros((n, d));
            let mut times = vec![0.0; n];
            let mut coeffs = Vec::with_capacity(n);
            for _ in 0..=warmup_passes {
                coeffs.clear();
                for (k, i) in ids.clone().enumerate() {
                    let r = &mut rngs[k];
                    let t = spec.sample_time(r);
                    let p = spec.perturb(test.row(i), t, r)?;
                    for (v, &x) in x_t.row_mut(k).iter_mut().zip(&p.x_t) {
                        *v = x as f32;
                    }
                    times[k] = spec.scaled_time(t);
                    coeffs.push(spec.precondition_state(&p)?);
                }
                anchors = params.predict_batch(x_t.view(), anchors.view(), &times, &coeffs)?;
            }
            Ok(ids
                .enumerate()
                .map(|(k, i)| {
                    anchors
                        .row(k)
                        .iter()
                        .zip(test.row(i))
                        .map(|(&p, &x)| (f64::from(p) - x).powi(2))
                        .sum::<f64>()
                        / d as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let per_example: Vec<f64> = chunks.into_iter().flatten().collect();
    let mut w = Welford::default();
    for &e in &per_example {
        w.push(e);
    }
    Ok(HeldoutError {
        per_example,
        mse: w.mean,
        std_err: w.std_err(),
    })
}

/// How many times training refreshes each buffer entry on average:
/// `ceil(iterations · batch_size / n)`.
pub fn training_visits(train_len: usize, cfg: &TrainConfig) -> usize {
    (cfg.iterations as usize)
        .saturating_mul(cfg.batch_size)
        .div_ceil(train_len.max(1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationOptions {
    /// Anchor refinements before scoring. `None` means [`training_visits`]
    /// of the training run; [`compare_models`] needs an explicit count.
    pub warmup_passes: Option<usize>,
    pub eval_seed: u64,
    pub use_ema: bool,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions {
            warmup_passes: None,
            eval_seed: 0,
            use_ema: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationReport {
    pub mse_with_anchor: f64,
    pub mse_without_anchor: f64,
    pub se_with_anchor: f64,
    pub se_without_anchor: f64,
    /// Standard error of the paired per-example difference.
    pub se_diff: f64,
}

/// Train the standard model and an anchor-free twin (anchor input zeroed)
/// with identical seeds, then compare held-out recovery error.
pub fn conditioning_ablation(
    train_set: &Dataset,
    test_set: &Dataset,
    spec: &ProcessSpec,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
    opts: AblationOptions,
) -> Result<AblationReport> {
    let with_cfg = NetConfig {
        ignore_anchor: false,
        ..net_cfg.clone()
    };
    let without_cfg = NetConfig {
        ignore_anchor: true,
        ..net_cfg.clone()
    };
    let with = train(train_set, spec, &with_cfg, train_cfg, &mut NullSink)?;
    let without = train(train_set, spec, &without_cfg, train_cfg, &mut NullSink)?;
    let pick = |s: &crate::trainer::TrainState| {
        if opts.use_ema {
            s.ema_params.clone()
        } else {
            s.params.clone()
        }
    };
    let opts = AblationOptions {
        warmup_passes: Some(
            opts.warmup_passes
                .unwrap_or_else(|| training_visits(train_set.len(), train_cfg)),
        ),
        ..opts
    };
    compare_models(&pick(&with), &pick(&without), spec, test_set, opts)
}

/// The evaluation half of [`conditioning_ablation`].
pub fn compare_models(
    with_anchor: &NetworkParams<f32>,
    without_anchor: &NetworkParams<f32>,
    spec: &ProcessSpec,
    test_set: &Dataset,
    opts: AblationOptions,
) -> Result<AblationReport> {
    let warmup = opts
        .warmup_passes
        .ok_or_else(|| Error::arg("compare_models needs an explicit warm-up pass count"))?;
    let a = heldout_mse(with_anchor, spec, test_set, warmup, opts.eval_seed)?;
    let b = heldout_mse(without_anchor, spec, test_set, warmup, opts.eval_seed)?;
    let mut diff = Welford::default();
    for (x, y) in a.per_example.iter().zip(&b.per_example) {
        diff.push(y - x);
    }
    Ok(AblationReport {
        mse_with_anchor: a.mse,
        mse_without_anchor: b.mse,
        se_with_anchor: a.std_err,
        se_without_anchor: b.std_err,
        se_diff: diff.std_err(),
    })
}
