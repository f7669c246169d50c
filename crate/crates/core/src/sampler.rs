//! One-step and k-step generation.
//!
//! Sampling draws `x_T` from the prior and a standard normal anchor, then
//! applies `x0 ← g_θ(x0, x_T, T)` k times. `x_T` and `T` stay fixed; only
//! the anchor moves.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::NetworkParams;
use crate::persist::Checkpoint;
use crate::process::{standard_normal_vec, Preconditioning, ProcessKind, ProcessSpec, Time};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRequest {
    pub count: usize,
    /// Number of `g_θ` evaluations per sample.
    pub steps: usize,
    pub use_ema: bool,
    pub seed: u64,
}

impl SampleRequest {
    pub fn validate(&self) -> Result<()> {
        if self.count < 1 {
            return Err(Error::arg("count must be at least 1"));
        }
        if self.steps < 1 {
            return Err(Error::arg("steps must be at least 1"));
        }
        Ok(())
    }
}

/// Rows evaluated per network call.
const CHUNK: usize = 2048;

/// Prior draws and initial anchors for samples `0..count`.
///
/// Sample `i` uses its own substream: the prior first, then the anchor.
pub fn initial_draws(spec: &ProcessSpec, dim: usize, count: usize, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(seed, i as u64);
            let x_t = spec.sample_prior(dim, &mut r)?;
            let anchor = standard_normal_vec(dim, &mut r);
            Ok((x_t, anchor))
        })
        .collect::<Result<_>>()?;
    let mut x_t = Array2::zeros((count, dim));
    let mut anchors = Array2::zeros((count, dim));
    for (i, (x, a)) in rows.into_iter().enumerate() {
        x_t.row_mut(i).assign(&ndarray::ArrayView1::from(&x));
        anchors.row_mut(i).assign(&ndarray::ArrayView1::from(&a));
    }
    Ok((x_t, anchors))
}

/// Preconditioning at the terminal time for one prior draw.
fn terminal_coeffs(spec: &ProcessSpec, x_t: &[f64]) -> Result<Preconditioning> {
    let radius = match spec.kind {
        ProcessKind::Pfgmpp => Some(x_t.iter().map(|v| v * v).sum::<f64>().sqrt()),
        _ => None,
    };
    spec.precondition(spec.terminal_time(), radius)
}

/// One refinement step `x0 ← g_θ(x0, x_T, T)` for every row.
pub fn refine_once(
    params: &NetworkParams<f32>,
    spec: &ProcessSpec,
    x_t: &Array2<f64>,
    anchors: &Array2<f64>,
) -> Result<Array2<f64>> {
    let d = params.config.input_dim;
    if x_t.ncols() != d || anchors.shape() != x_t.shape() {
        return Err(Error::arg(format!(
            "expected {d}-dimensional rows, got x_T {:?} and anchors {:?}",
            x_t.shape(),
            anchors.shape()
        )));
    }
    let t_scaled = spec.scaled_time(spec.terminal_time());
    let starts: Vec<usize> = (0..x_t.nrows()).step_by(CHUNK).collect();
    let chunks: Vec<Array2<f64>> = starts
        .into_par_iter()
        .map(|start| {
            let end = (start + CHUNK).min(x_t.nrows());
            let xc = x_t.slice(ndarray::s![start..end, ..]);
            let ac = anchors.slice(ndarray::s![start..end, ..]);
            let coeffs = xc
                .rows()
                .into_iter()
                .map(|r| terminal_coeffs(spec, r.as_slice().expect("contiguous")))
                .collect::<Result<Vec<_>>>()?;
            let times = vec![t_scaled; xc.nrows()];
            let out = params.predict_batch(
                xc.mapv(|v| v as f32).view(),
                ac.mapv(|v| v as f32).view(),
                &times,
                &coeffs,
            )?;
            Ok(out.mapv(f64::from))
        })
        .collect::<Result<_>>()?;
    let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
    let out = ndarray::concatenate(Axis(0), &views).expect("matching widths");
    if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite sample value in row {}",
            pos / d.max(1)
        )));
    }
    Ok(out)
}

/// Every anchor `x0^(0), …, x0^(k)` of the refinement, starting from the
/// given draws.
pub fn refine_history(
    params: &NetworkParams<f32>,
    spec: &ProcessSpec,
    x_t: &Array2<f64>,
    anchors: Array2<f64>,
    steps: usize,
) -> Result<Vec<Array2<f64>>> {
    let mut history = Vec::with_capacity(steps + 1);
    history.push(anchors);
    for _ in 0..steps {
        let next = refine_once(params, spec, x_t, history.last().expect("non-empty"))?;
        history.push(next);
    }
    Ok(history)
}

/// `req.count` samples from `params` (`req.use_ema` is the caller's concern
/// here; see [`sample_checkpoint`]).
pub fn sample(params: &NetworkParams<f32>, spec: &ProcessSpec, req: &SampleRequest) -> Result<Array2<f64>> {
    req.validate()?;
    let (x_t, anchors) = initial_draws(spec, params.config.input_dim, req.count, req.seed)?;
    let mut x0 = anchors;
    for _ in 0..req.steps {
        x0 = refine_once(params, spec, &x_t, &x0)?;
    }
    Ok(x0)
}

/// Sample from a checkpoint, choosing EMA or training weights per request.
pub fn sample_checkpoint(ckpt: &Checkpoint, req: &SampleRequest) -> Result<Array2<f64>> {
    sample(ckpt.params(req.use_ema), &ckpt.spec, req)
}

/// A traced straight path between a generated point and its noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Descending from 1 to 0.
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub predictions: Vec<Vec<f64>>,
    pub endpoint: Vec<f64>,
    pub z: Vec<f64>,
}

impl Trajectory {
    /// `t,z0..,pred0..` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.z.len();
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|j| format!("z{j}")));
        header.extend((0..d).map(|j| format!("pred{j}")));
        writeln!(out, "{}", header.join(","))?;
        for ((t, s), p) in self.times.iter().zip(&self.states).zip(&self.predictions) {
            let mut cells = vec![t.to_string()];
            cells.extend(s.iter().map(|v| v.to_string()));
            cells.extend(p.iter().map(|v| v.to_string()));
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Generate `x̂0` from noise `z` with `steps` refinements, then evaluate the
/// model along `z_t = (1 − t) x̂0 + t z` on a uniform grid of `num_times`
/// points. Predictions reuse the anchor of the final refinement, so the
/// prediction at `t = 1` is `x̂0` itself.
pub fn trace(
    params: &NetworkParams<f32>,
    spec: &ProcessSpec,
    z: &[f64],
    anchor_seed: u64,
    num_times: usize,
    steps: usize,
) -> Result<Trajectory> {
    if spec.kind != ProcessKind::Rf {
        return Err(Error::Unsupported(format!(
            "trajectory tracing is defined for rf, not {}",
            spec.kind
        )));
    }
    if num_times < 2 {
        return Err(Error::arg("num_times must be at least 2"));
    }
    if steps < 1 {
        return Err(Error::arg("steps must be at least 1"));
    }
    let d = params.config.input_dim;
    if z.len() != d {
        return Err(Error::arg(format!("z has {} entries, expected {d}", z.len())));
    }
    let mut anchor = standard_normal_vec(d, &mut rng::stream(anchor_seed, 0));
    let z32: Vec<f32> = z.iter().map(|&v| v as f32).collect();
    let coeffs = spec.precondition(Time::Continuous(1.0), None)?;
    let mut endpoint = anchor.clone();
    for _ in 0..steps {
        anchor = endpoint;
        let a32: Vec<f32> = anchor.iter().map(|&v| v as f32).collect();
        endpoint = params
            .predict(&a32, &z32, 1.0, coeffs)?
            .into_iter()
            .map(f64::from)
            .collect();
    }
    let times: Vec<f64> = (0..num_times)
        .map(|i| 1.0 - i as f64 / (num_times - 1) as f64)
        .collect();
    let states: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| crate::process::interpolate(&endpoint, z, t))
        .collect();
    let n = num_times;
    let x = Array2::from_shape_fn((n, d), |(i, j)| states[i][j] as f32);
    let a = Array2::from_shape_fn((n, d), |(_, j)| anchor[j] as f32);
    let pred = params.predict_batch(x.view(), a.view(), &times, &vec![coeffs; n])?;
    let predictions: Vec<Vec<f64>> = pred
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect();
    Ok(Trajectory {
        times,
        states,
        predictions,
        endpoint,
        z: z.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, NetConfig};

    fn random_net(seed: u64) -> NetworkParams<f32> {
        let cfg = NetConfig::new(2, vec![16, 16]);
        let mut p = init_params::<f32, _>(&cfg, &mut rng::stream(seed, 9)).unwrap();
        // Give the zero output layer some weight so the map is non-trivial.
        let last = p.weights.layers.last_mut().unwrap();
        last.weight.mapv_inplace(|_| 0.1);
        p
    }

    #[test]
    fn one_step_is_one_prediction() {
        let spec = ProcessSpec::rf();
        let params = random_net(1);
        let req = SampleRequest { count: 5, steps: 1, use_ema: false, seed: 4 };
        let samples = sample(&params, &spec, &req).unwrap();
        let (x_t, anchors) = initial_draws(&spec, 2, 5, 4).unwrap();
        for i in 0..5 {
            let x: Vec<f32> = x_t.row(i).iter().map(|&v| v as f32).collect();
            let a: Vec<f32> = anchors.row(i).iter().map(|&v| v as f32).collect();
            let want = params
                .predict(&a, &x, 1.0, spec.precondition(Time::Continuous(1.0), None).unwrap())
                .unwrap();
            let got: Vec<f32> = samples.row(i).iter().map(|&v| v as f32).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn deterministic_and_prior_shared_across_steps() {
        let spec = ProcessSpec::ve(1000, 0.01, 50.0).unwrap();
        let params = random_net(2);
        let req = SampleRequest { count: 40, steps: 2, use_ema: false, seed: 8 };
        assert_eq!(sample(&params, &spec, &req).unwrap(), sample(&params, &spec, &req).unwrap());
        let (x_t, anchors) = initial_draws(&spec, 2, 40, 8).unwrap();
        let hist = refine_history(&params, &spec, &x_t, anchors, 2).unwrap();
        assert_eq!(hist[2], sample(&params, &spec, &req).unwrap());
        let one = SampleRequest { steps: 1, ..req };
        assert_eq!(hist[1], sample(&params, &spec, &one).unwrap());
    }

    #[test]
    fn zero_init_is_skip_connection() {
        let spec = ProcessSpec::ve(1000, 0.01, 50.0).unwrap();
        let cfg = NetConfig::new(2, vec![8]);
        let params = init_params::<f32, _>(&cfg, &mut rng::stream(1, 1)).unwrap();
        let req = SampleRequest { count: 10, steps: 3, use_ema: false, seed: 1 };
        let out = sample(&params, &spec, &req).unwrap();
        let (x_t, _) = initial_draws(&spec, 2, 10, 1).unwrap();
        for (o, x) in out.iter().zip(x_t.iter()) {
            let want = f64::from(0.0002f32 * (*x as f32));
            assert!((o - want).abs() <= 1e-6 * want.abs().max(1e-12));
        }
    }

    #[test]
    fn request_validation() {
        let params = random_net(3);
        let spec = ProcessSpec::rf();
        for req in [
            SampleRequest { count: 0, steps: 1, use_ema: false, seed: 0 },
            SampleRequest { count: 1, steps: 0, use_ema: false, seed: 0 },
        ] {
            assert!(matches!(sample(&params, &spec, &req), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn trace_shape_and_endpoints() {
        let spec = ProcessSpec::rf();
        let params = random_net(5);
        let z = [0.3, -1.2];
        let tr = trace(&params, &spec, &z, 7, 2, 1).unwrap();
        assert_eq!(tr.times, vec![1.0, 0.0]);
        assert_eq!(tr.states[0], z.to_vec());
        assert_eq!(tr.states[1], tr.endpoint);
        // At t = 1 the traced prediction is the sample itself.
        for (p, e) in tr.predictions[0].iter().zip(&tr.endpoint) {
            assert!((p - e).abs() < 1e-6);
        }
        let ve = ProcessSpec::ve(1000, 0.01, 50.0).unwrap();
        assert!(matches!(trace(&params, &ve, &z, 7, 5, 1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn trajectory_csv_header() {
        let spec = ProcessSpec::rf();
        let tr = trace(&random_net(6), &spec, &[0.0, 1.0], 1, 3, 2).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,z0,z1,pred0,pred1\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
