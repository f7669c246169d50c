use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use iflow_core::data::{
    analytic_mixture, holdout_split, make_dataset, write_samples_csv, Dataset, Standardization,
};
use iflow_core::eval::{
    bilipschitz_probe, compare_models, energy_distance, straightness, training_visits,
    AblationOptions,
};
use iflow_core::net::NetConfig;
use iflow_core::oracle::{euler_pf_ode, MixtureSpec, Welford};
use iflow_core::persist::{self, Checkpoint};
use iflow_core::process::{standard_normal_vec, ProcessKind, ProcessSpec};
use iflow_core::rng;
use iflow_core::sampler::{sample, sample_checkpoint, trace, SampleRequest};
use iflow_core::trainer::{self, DirSink, NullSink, METRICS_HEADER};
use ndarray::Array2;
use rayon::prelude::*;

use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, Result};
use crate::svg;

/// Train and held-out splits in the coordinates the model sees.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub standardization: Option<Standardization>,
}

impl Prepared {
    pub fn new(cfg: &RunConfig) -> Result<Prepared> {
        let d = &cfg.dataset;
        let full = make_dataset(d.name, d.count, &d.params, d.seed)?;
        let (train, test) = holdout_split(&full, d.holdout, d.seed)?;
        if !d.standardize {
            return Ok(Prepared {
                train,
                test,
                standardization: None,
            });
        }
        let (train, st) = train.standardized();
        let test = st.apply(&test)?;
        Ok(Prepared {
            train,
            test,
            standardization: Some(st),
        })
    }

    /// Model coordinates back to data coordinates.
    pub fn to_data(&self, points: Array2<f64>) -> Array2<f64> {
        match &self.standardization {
            Some(st) => st.invert(&points),
            None => points,
        }
    }

    /// The analytic mixture in model coordinates.
    pub fn mixture(&self, cfg: &RunConfig) -> Result<MixtureSpec> {
        let mix = analytic_mixture(cfg.dataset.name, &cfg.dataset.params)?;
        Ok(match &self.standardization {
            Some(st) => st.apply_mixture(&mix),
            None => mix,
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn load_checkpoint(path: &Path, process: Option<ProcessKind>) -> Result<Checkpoint> {
    let ckpt = persist::load(path)?;
    if let Some(kind) = process {
        ckpt.expect_process(kind)?;
    }
    Ok(ckpt)
}

/// Fail unless `ckpt` was trained with the process and data shape of `cfg`.
fn check_compatible(cfg: &RunConfig, ckpt: &Checkpoint, dim: usize) -> Result<()> {
    ckpt.expect_process(cfg.process)?;
    let model_dim = ckpt.state.params.config.input_dim;
    if model_dim != dim {
        return Err(iflow_core::Error::Incompatible(format!(
            "checkpoint models {model_dim}-dimensional data but the config's dataset is {dim}-dimensional"
        ))
        .into());
    }
    let spec = cfg.process_spec(dim)?;
    if spec != ckpt.spec {
        return Err(iflow_core::Error::Incompatible(format!(
            "checkpoint schedule {:?} differs from the config's {:?}",
            ckpt.spec, spec
        ))
        .into());
    }
    Ok(())
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub overrides: Overrides,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(&args.overrides);
    cfg.validate()?;
    let prep = Prepared::new(&cfg)?;
    let dim = prep.train.dim();
    let spec = cfg.process_spec(dim)?;
    let net = cfg.net_config(dim);

    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let json = serde_json::to_string_pretty(&cfg).expect("config serializes");
    write_file(&out.join("resolved.json"), format!("{json}\n").as_bytes())?;

    let mut sink = DirSink::new(&out)?;
    let state = trainer::train(&prep.train, &spec, &net, &cfg.train, &mut sink)?;
    drop(sink);
    let metrics = out.join("metrics.csv");
    if !metrics.exists() {
        write_file(&metrics, format!("{METRICS_HEADER}\n").as_bytes())?;
    }

    if dim == 2 {
        let params = if cfg.eval.use_ema {
            &state.ema_params
        } else {
            &state.params
        };
        let req = SampleRequest {
            count: cfg.eval.samples,
            steps: cfg.eval.steps,
            use_ema: cfg.eval.use_ema,
            seed: cfg.eval.seed,
        };
        let pts = prep.to_data(sample(params, &spec, &req)?);
        let reference = prep.to_data(prep.test.points.clone());
        write_file(&out.join("samples.svg"), svg::scatter(&pts, Some(&reference)).as_bytes())?;
    }
    println!(
        "trained {} on {} ({} points) for {} steps -> {}",
        spec.kind,
        cfg.dataset.name.as_str(),
        prep.train.len(),
        state.step,
        out.join("final.ifck").display()
    );
    Ok(())
}

pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub count: usize,
    pub steps: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub ema: bool,
    pub process: Option<ProcessKind>,
    pub config: Option<PathBuf>,
}

pub fn sample_cmd(args: &SampleArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint, args.process)?;
    let req = SampleRequest {
        count: args.count,
        steps: args.steps,
        use_ema: args.ema,
        seed: args.seed,
    };
    req.validate()?;
    let mut pts = sample_checkpoint(&ckpt, &req)?;
    if let Some(path) = &args.config {
        let cfg = RunConfig::load(path)?;
        let prep = Prepared::new(&cfg)?;
        check_compatible(&cfg, &ckpt, prep.train.dim())?;
        pts = prep.to_data(pts);
    }
    let mut w = create(&args.out)?;
    write_samples_csv(&pts, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&args.out, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    EnergyDistance,
    Straightness,
    Bilipschitz,
    ConditioningAblation,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::EnergyDistance,
        Metric::Straightness,
        Metric::Bilipschitz,
        Metric::ConditioningAblation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::EnergyDistance => "energy_distance",
            Metric::Straightness => "straightness",
            Metric::Bilipschitz => "bilipschitz",
            Metric::ConditioningAblation => "conditioning_ablation",
        }
    }

    pub fn parse(s: &str) -> Result<Metric> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Metric::ALL.iter().map(|m| m.name()).collect();
                CliError::Core(iflow_core::Error::Argument(format!(
                    "unknown metric `{s}`; valid metrics are {}",
                    names.join(", ")
                )))
            })
    }
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: PathBuf,
    pub metrics: Vec<String>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

/// Mean straightness over traced paths.
fn mean_straightness(
    ckpt: &Checkpoint,
    use_ema: bool,
    count: usize,
    times: usize,
    steps: usize,
    seed: u64,
) -> Result<Welford> {
    let params = ckpt.params(use_ema);
    let dim = params.config.input_dim;
    let values: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|i| {
            let z = standard_normal_vec(dim, &mut rng::substream(seed, i as u64));
            let anchor_seed = seed.wrapping_add(1 + i as u64);
            let traj = trace(params, &ckpt.spec, &z, anchor_seed, times, steps)?;
            straightness(&traj)
        })
        .collect::<iflow_core::Result<_>>()?;
    let mut w = Welford::default();
    for v in values {
        w.push(v);
    }
    Ok(w)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let metrics: Vec<Metric> = args
        .metrics
        .iter()
        .map(|m| Metric::parse(m.trim()))
        .collect::<Result<_>>()?;
    let cfg = RunConfig::load(&args.config)?;
    let ckpt = load_checkpoint(&args.checkpoint, None)?;
    let prep = Prepared::new(&cfg)?;
    check_compatible(&cfg, &ckpt, prep.train.dim())?;
    let e = &cfg.eval;
    let seed = args.seed.unwrap_or(e.seed);
    let params = ckpt.params(e.use_ema);

    let mut rows: Vec<(&str, f64)> = Vec::new();
    for m in metrics {
        match m {
            Metric::EnergyDistance => {
                let req = SampleRequest {
                    count: e.samples,
                    steps: e.steps,
                    use_ema: e.use_ema,
                    seed,
                };
                let pts = sample_checkpoint(&ckpt, &req)?;
                rows.push((
                    "energy_distance",
                    energy_distance(pts.view(), prep.test.points.view(), seed)?,
                ));
            }
            Metric::Straightness => {
                let w = mean_straightness(&ckpt, e.use_ema, e.trajectories, e.trace_times, e.steps, seed)?;
                rows.push(("straightness", w.mean));
                rows.push(("straightness_std_err", w.std_err()));
            }
            Metric::Bilipschitz => {
                let rep = bilipschitz_probe(params, &ckpt.spec, e.probe_pairs, e.steps, e.probe_delta, seed)?;
                rows.push(("bilipschitz_pairs", rep.pairs_tested as f64));
                rows.push(("bilipschitz_collisions", rep.collisions as f64));
                rows.push(("bilipschitz_min_ratio", rep.min_ratio));
                rows.push(("bilipschitz_max_ratio", rep.max_ratio));
                rows.push(("bilipschitz_estimated_l", rep.estimated_l));
            }
            Metric::ConditioningAblation => {
                // Retrain the anchor-free twin with the checkpoint's own settings.
                let blind = NetConfig {
                    ignore_anchor: true,
                    ..ckpt.state.params.config.clone()
                };
                let twin = trainer::train(&prep.train, &ckpt.spec, &blind, &ckpt.train, &mut NullSink)?;
                let twin_params = if e.use_ema { &twin.ema_params } else { &twin.params };
                let rep = compare_models(
                    params,
                    twin_params,
                    &ckpt.spec,
                    &prep.test,
                    AblationOptions {
                        warmup_passes: Some(training_visits(prep.train.len(), &ckpt.train)),
                        eval_seed: seed,
                        use_ema: e.use_ema,
                    },
                )?;
                rows.push(("ablation_mse_with_anchor", rep.mse_with_anchor));
                rows.push(("ablation_mse_without_anchor", rep.mse_without_anchor));
                rows.push(("ablation_se_diff", rep.se_diff));
            }
        }
    }

    let hash = cfg.hash();
    let mut w = create(&args.out)?;
    let body = (|| -> std::io::Result<()> {
        writeln!(w, "metric,value,config_hash,seed")?;
        for (name, value) in &rows {
            writeln!(w, "{name},{value},{hash},{seed}")?;
        }
        w.flush()
    })();
    body.map_err(|e| CliError::io(&args.out, e))
}

pub struct TraceArgs {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub times: usize,
    pub steps: usize,
    pub ema: bool,
}

pub fn trace_cmd(args: &TraceArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint, None)?;
    let params = ckpt.params(args.ema);
    // The anchor is drawn from stream 0 of the seed inside `trace`.
    let z = standard_normal_vec(params.config.input_dim, &mut rng::substream(args.seed, 0));
    let traj = trace(params, &ckpt.spec, &z, args.seed, args.times, args.steps)?;
    let mut w = create(&args.out)?;
    traj.write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&args.out, e))
}

pub struct OracleArgs {
    pub config: PathBuf,
    pub checkpoint: PathBuf,
    pub steps: Vec<usize>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

/// Euler solutions of the VE probability-flow ODE from `count` prior draws.
pub fn euler_samples(
    mix: &MixtureSpec,
    spec: &ProcessSpec,
    count: usize,
    steps: usize,
    seed: u64,
) -> iflow_core::Result<Array2<f64>> {
    let dim = mix.dim();
    let rows: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let x = spec.sample_prior(dim, &mut rng::substream(seed, i as u64))?;
            euler_pf_ode(mix, &x, spec, steps)
        })
        .collect::<iflow_core::Result<_>>()?;
    Ok(Array2::from_shape_fn((count, dim), |(i, j)| rows[i][j]))
}

pub fn oracle_compare(args: &OracleArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let prep = Prepared::new(&cfg)?;
    let mix = prep.mixture(&cfg)?;
    if args.steps.is_empty() || args.steps.contains(&0) {
        return Err(iflow_core::Error::Argument("--steps needs positive step counts".into()).into());
    }
    let ckpt = load_checkpoint(&args.checkpoint, None)?;
    check_compatible(&cfg, &ckpt, prep.train.dim())?;
    let e = &cfg.eval;
    let seed = args.seed.unwrap_or(e.seed);
    let reference = prep.test.points.view();
    let ve = cfg.matched_ve()?;

    let mut rows: Vec<(&str, usize, f64)> = Vec::new();
    for &n in &args.steps {
        let pts = euler_samples(&mix, &ve, e.samples, n, seed)?;
        rows.push(("euler", n, energy_distance(pts.view(), reference, seed)?));
    }
    for k in [1, 2] {
        let req = SampleRequest {
            count: e.samples,
            steps: k,
            use_ema: e.use_ema,
            seed,
        };
        let pts = sample_checkpoint(&ckpt, &req)?;
        rows.push(("model", k, energy_distance(pts.view(), reference, seed)?));
    }

    let mut w = create(&args.out)?;
    let body = (|| -> std::io::Result<()> {
        writeln!(w, "method,num_steps,metric,value")?;
        for (method, n, value) in &rows {
            writeln!(w, "{method},{n},energy_distance,{value}")?;
        }
        w.flush()
    })();
    body.map_err(|e| CliError::io(&args.out, e))
}
