//! The training loop shared by all three processes: estimate buffer,
//! optimizer, EMA and checkpointing.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{init_params, Batch, NetConfig, NetworkParams};
use crate::optim::{apply_update, ema_update, AdamHyper, Moments, OptimizerKind};
use crate::process::{ProcessKind, ProcessSpec, Time};
use crate::rng::Streams;

/// Pseudo-Huber `c` used when the config leaves it unset.
pub fn default_huber_c(kind: ProcessKind) -> f64 {
    match kind {
        ProcessKind::Rf => 0.0001,
        ProcessKind::Ve | ProcessKind::Pfgmpp => 0.00016,
    }
}

/// When predictions are written back to the estimate buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferUpdate {
    /// After every batch.
    PerBatch,
    /// Into a staging copy, published once per pass over the dataset.
    PerEpoch,
    /// Buffer starts at zero and is never written. Used to check that the
    /// ablation harness is symmetric.
    FrozenZero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub ema_decay: f64,
    /// Pseudo-Huber `c`; `None` picks the per-process default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    pub seed: u64,
    pub buffer_update: BufferUpdate,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Steps between metrics rows.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 256,
            iterations: 20_000,
            ema_decay: 0.9999,
            c: None,
            seed: 0,
            buffer_update: BufferUpdate::PerBatch,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!("train.lr must be positive, got {}", self.lr)));
        }
        if self.batch_size < 1 {
            return Err(Error::arg("train.batch_size must be at least 1"));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::arg(format!(
                "train.ema_decay must be in (0, 1), got {}",
                self.ema_decay
            )));
        }
        if let Some(c) = self.c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::arg(format!("train.c must be positive, got {c}")));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::arg("train.adam_beta1 and train.adam_beta2 must be in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::arg("train.adam_eps must be positive"));
        }
        if self.log_every < 1 {
            return Err(Error::arg("train.log_every must be at least 1"));
        }
        Ok(())
    }

    pub fn huber_c(&self, kind: ProcessKind) -> f64 {
        self.c.unwrap_or_else(|| default_huber_c(kind))
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Running anchor estimates, one row per training example.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateBuffer {
    pub estimates: Array2<f32>,
    /// Writes pending publication (per-epoch mode only).
    pub staged: Option<Array2<f32>>,
    /// Completed passes over the dataset.
    pub epoch: u64,
}

impl EstimateBuffer {
    pub fn standard_normal<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Self {
        let estimates = Array2::from_shape_fn((count, dim), |_| {
            let g: f64 = StandardNormal.sample(rng);
            g as f32
        });
        EstimateBuffer {
            estimates,
            staged: None,
            epoch: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.estimates.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean Euclidean distance between the estimates and the true examples.
    pub fn mean_error(&self, dataset: &Dataset) -> f64 {
        let total: f64 = self
            .estimates
            .rows()
            .into_iter()
            .zip(dataset.points.rows())
            .map(|(e, x)| {
                e.iter()
                    .zip(x)
                    .map(|(&a, b)| (f64::from(a) - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        total / self.len() as f64
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: NetworkParams<f32>,
    pub ema_params: NetworkParams<f32>,
    pub moments: Moments<f32>,
    pub buffer: EstimateBuffer,
    pub step: u64,
    pub streams: Streams,
    /// Exponential average of the per-step loss (decay 0.99).
    pub loss_ema: Option<f64>,
}

const LOSS_EMA_DECAY: f64 = 0.99;

impl TrainState {
    pub fn new(
        dataset: &Dataset,
        spec: &ProcessSpec,
        net_cfg: &NetConfig,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        check_compat(dataset, spec, net_cfg)?;
        let mut streams = Streams::from_seed(cfg.seed);
        let params = init_params::<f32, _>(net_cfg, &mut streams.init)?;
        let mut buffer =
            EstimateBuffer::standard_normal(dataset.len(), dataset.dim(), &mut streams.buffer_init);
        match cfg.buffer_update {
            BufferUpdate::PerEpoch => buffer.staged = Some(buffer.estimates.clone()),
            BufferUpdate::FrozenZero => buffer.estimates.fill(0.0),
            BufferUpdate::PerBatch => {}
        }
        Ok(TrainState {
            ema_params: params.clone(),
            moments: Moments::zeros_like(&params.weights),
            params,
            buffer,
            step: 0,
            streams,
            loss_ema: None,
        })
    }
}

fn check_compat(dataset: &Dataset, spec: &ProcessSpec, net_cfg: &NetConfig) -> Result<()> {
    net_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::arg("dataset is empty"));
    }
    if net_cfg.input_dim != dataset.dim() {
        return Err(Error::arg(format!(
            "net.input_dim is {} but the dataset has dimension {}",
            net_cfg.input_dim,
            dataset.dim()
        )));
    }
    if spec.kind == ProcessKind::Pfgmpp && spec.data_dim != dataset.dim() {
        return Err(Error::arg(format!(
            "pfgmpp N is {} but the dataset has dimension {}",
            spec.data_dim,
            dataset.dim()
        )));
    }
    Ok(())
}

/// What one step drew and produced.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub ids: Vec<usize>,
    pub times: Vec<Time>,
    /// Largest absolute parameter change.
    pub max_update: f64,
}

/// One optimization step, in place.
pub fn train_step(
    state: &mut TrainState,
    dataset: &Dataset,
    spec: &ProcessSpec,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::arg("dataset is empty"));
    }
    if state.buffer.len() != n {
        return Err(Error::Incompatible(format!(
            "estimate buffer has {} rows but the dataset has {n}",
            state.buffer.len()
        )));
    }
    let d = dataset.dim();
    let bs = cfg.batch_size;
    let ids: Vec<usize> = (0..bs).map(|_| state.streams.data.random_range(0..n)).collect();

    let mut anchors = Array2::<f32>::zeros((bs, d));
    let mut x_t = Array2::<f32>::zeros((bs, d));
    let mut target = Array2::<f32>::zeros((bs, d));
    let mut t_scaled = Vec::with_capacity(bs);
    let mut coeffs = Vec::with_capacity(bs);
    let mut times = Vec::with_capacity(bs);
    for (row, &id) in ids.iter().enumerate() {
        let x0 = dataset.row(id);
        let t = spec.sample_time(&mut state.streams.noise);
        let perturbed = spec.perturb(x0, t, &mut state.streams.noise)?;
        coeffs.push(spec.precondition_state(&perturbed)?);
        t_scaled.push(spec.scaled_time(t));
        times.push(t);
        for j in 0..d {
            x_t[[row, j]] = perturbed.x_t[j] as f32;
            target[[row, j]] = x0[j] as f32;
            anchors[[row, j]] = state.buffer.estimates[[id, j]];
        }
    }
    let batch = Batch {
        anchors,
        x_t,
        t_scaled,
        coeffs,
        target,
    };
    let c = cfg.huber_c(spec.kind);
    let out = state.params.loss_and_grad(&batch, c).map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!(
            "{msg} at step {} (times {})",
            state.step + 1,
            summarize_times(&times)
        )),
        other => other,
    })?;

    let step = state.step + 1;
    let max_update = apply_update(
        cfg.optimizer,
        cfg.adam(),
        cfg.lr,
        step,
        &mut state.params.weights,
        &out.grads,
        &mut state.moments,
    )?;
    if !state.params.weights.all_finite() {
        return Err(Error::Numeric(format!(
            "parameters became non-finite at step {step} (loss {}, times {})",
            out.loss,
            summarize_times(&times)
        )));
    }
    ema_update(&mut state.ema_params.weights, &state.params.weights, cfg.ema_decay)?;

    let dest = match cfg.buffer_update {
        BufferUpdate::PerBatch => Some(&mut state.buffer.estimates),
        BufferUpdate::PerEpoch => state.buffer.staged.as_mut(),
        BufferUpdate::FrozenZero => None,
    };
    if let Some(dest) = dest {
        // Rows are written in batch order, so a repeated id keeps its last value.
        for (row, &id) in ids.iter().enumerate() {
            dest.row_mut(id).assign(&out.prediction.row(row));
        }
    }

    state.step = step;
    state.params.step_count = step;
    state.ema_params.step_count = step;
    let steps_per_epoch = n.div_ceil(bs) as u64;
    if step % steps_per_epoch == 0 {
        state.buffer.epoch += 1;
        if let Some(staged) = &state.buffer.staged {
            state.buffer.estimates.assign(staged);
        }
    }
    state.loss_ema = Some(match state.loss_ema {
        None => out.loss,
        Some(prev) => LOSS_EMA_DECAY * prev + (1.0 - LOSS_EMA_DECAY) * out.loss,
    });
    Ok(StepReport {
        step,
        loss: out.loss,
        ids,
        times,
        max_update,
    })
}

fn summarize_times(times: &[Time]) -> String {
    let shown: Vec<String> = times
        .iter()
        .take(8)
        .map(|t| match t {
            Time::Discrete(s) => s.to_string(),
            Time::Continuous(v) => format!("{v:.4}"),
        })
        .collect();
    let more = if times.len() > 8 { ", ..." } else { "" };
    format!("[{}{more}]", shown.join(", "))
}

/// One row of the metrics CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub ema_loss_window: f64,
}

pub const METRICS_HEADER: &str = "step,loss,ema_loss_window";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!("{},{},{}", self.step, self.loss, self.ema_loss_window)
    }
}

/// Receives checkpoints and metrics during [`train`].
pub trait CheckpointSink {
    fn checkpoint(&mut self, ctx: &RunContext<'_>, state: &TrainState, is_final: bool) -> Result<()>;
    fn metrics(&mut self, row: MetricsRow) -> Result<()>;
}

/// Static description of a run, passed alongside the state to sinks.
#[derive(Clone, Copy, Debug)]
pub struct RunContext<'a> {
    pub spec: &'a ProcessSpec,
    pub train: &'a TrainConfig,
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl CheckpointSink for NullSink {
    fn checkpoint(&mut self, _: &RunContext<'_>, _: &TrainState, _: bool) -> Result<()> {
        Ok(())
    }
    fn metrics(&mut self, _: MetricsRow) -> Result<()> {
        Ok(())
    }
}

/// Keeps metrics and serialized checkpoints in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub rows: Vec<MetricsRow>,
    pub checkpoints: Vec<(u64, Vec<u8>)>,
}

impl CheckpointSink for MemorySink {
    fn checkpoint(&mut self, ctx: &RunContext<'_>, state: &TrainState, _: bool) -> Result<()> {
        let bytes = crate::persist::encode(ctx.spec, ctx.train, state)?;
        self.checkpoints.push((state.step, bytes));
        Ok(())
    }
    fn metrics(&mut self, row: MetricsRow) -> Result<()> {
        self.rows.push(row);
        Ok(())
    }
}

/// Writes `step_XXXXXXXX.ifck`, `final.ifck` and `metrics.csv` into a directory.
#[derive(Debug)]
pub struct DirSink {
    dir: std::path::PathBuf,
    metrics: Option<std::io::BufWriter<std::fs::File>>,
}

impl DirSink {
    pub fn new(dir: impl Into<std::path::PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(DirSink { dir, metrics: None })
    }

    fn metrics_path(&self) -> std::path::PathBuf {
        self.dir.join("metrics.csv")
    }
}

impl CheckpointSink for DirSink {
    fn checkpoint(&mut self, ctx: &RunContext<'_>, state: &TrainState, is_final: bool) -> Result<()> {
        use std::io::Write;
        if let Some(w) = &mut self.metrics {
            w.flush().map_err(|e| Error::io(self.dir.join("metrics.csv"), e))?;
        }
        let name = if is_final {
            "final.ifck".to_string()
        } else {
            format!("step_{:08}.ifck", state.step)
        };
        crate::persist::save(ctx.spec, ctx.train, state, self.dir.join(name))
    }

    fn metrics(&mut self, row: MetricsRow) -> Result<()> {
        use std::io::Write;
        let path = self.metrics_path();
        if self.metrics.is_none() {
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = std::io::BufWriter::new(file);
            writeln!(w, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
            self.metrics = Some(w);
        }
        let w = self.metrics.as_mut().expect("opened above");
        writeln!(w, "{}", row.csv()).map_err(|e| Error::io(&path, e))
    }
}

/// Run `cfg.iterations` steps from a fresh state.
pub fn train(
    dataset: &Dataset,
    spec: &ProcessSpec,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    sink: &mut dyn CheckpointSink,
) -> Result<TrainState> {
    let state = TrainState::new(dataset, spec, net_cfg, cfg)?;
    resume(state, dataset, spec, cfg, sink)
}

/// Continue training until `state.step == cfg.iterations`.
pub fn resume(
    mut state: TrainState,
    dataset: &Dataset,
    spec: &ProcessSpec,
    cfg: &TrainConfig,
    sink: &mut dyn CheckpointSink,
) -> Result<TrainState> {
    cfg.validate()?;
    check_compat(dataset, spec, &state.params.config)?;
    let ctx = RunContext { spec, train: cfg };
    while state.step < cfg.iterations {
        let report = train_step(&mut state, dataset, spec, cfg)?;
        if report.step % cfg.log_every == 0 || report.step == cfg.iterations {
            sink.metrics(MetricsRow {
                step: report.step,
                loss: report.loss,
                ema_loss_window: state.loss_ema.unwrap_or(report.loss),
            })?;
        }
        if cfg.checkpoint_every > 0
            && report.step % cfg.checkpoint_every == 0
            && report.step < cfg.iterations
        {
            sink.checkpoint(&ctx, &state, false)?;
        }
    }
    sink.checkpoint(&ctx, &state, true)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_dataset, DatasetName, DatasetParams};
    use crate::net::{pseudo_huber, Activation};

    fn setup(kind: ProcessKind) -> (Dataset, ProcessSpec, NetConfig, TrainConfig) {
        let ds = make_dataset(DatasetName::GmmRing, 64, &DatasetParams::default(), 1).unwrap();
        let spec = match kind {
            ProcessKind::Ve => ProcessSpec::ve(1000, 0.01, 50.0).unwrap(),
            ProcessKind::Rf => ProcessSpec::rf(),
            ProcessKind::Pfgmpp => ProcessSpec::pfgmpp(1000, 0.01, 50.0, 2048, 2).unwrap(),
        };
        let mut net = NetConfig::new(2, vec![16, 16]);
        net.activation = Activation::Silu;
        let cfg = TrainConfig {
            batch_size: 8,
            iterations: 20,
            seed: 3,
            log_every: 1,
            ..Default::default()
        };
        (ds, spec, net, cfg)
    }

    #[test]
    fn first_step_loss_is_skip_only() {
        let (ds, spec, net, cfg) = setup(ProcessKind::Ve);
        let mut state = TrainState::new(&ds, &spec, &net, &cfg).unwrap();
        // Replay the draws the step will make.
        let mut replay = state.streams.clone();
        let report = train_step(&mut state, &ds, &spec, &cfg).unwrap();
        let c = cfg.huber_c(spec.kind);
        let mut total = 0.0;
        for &id in &report.ids {
            assert_eq!(id, replay.data.random_range(0..ds.len()));
        }
        for &id in &report.ids {
            let t = spec.sample_time(&mut replay.noise);
            let p = spec.perturb(ds.row(id), t, &mut replay.noise).unwrap();
            let a = spec.precondition_state(&p).unwrap().a;
            let pred: Vec<f64> = p.x_t.iter().map(|&x| f64::from((a as f32) * (x as f32))).collect();
            let target: Vec<f64> = ds.row(id).iter().map(|&v| f64::from(v as f32)).collect();
            total += pseudo_huber(&pred, &target, c);
        }
        let want = total / report.ids.len() as f64;
        assert!((report.loss - want).abs() <= 1e-6 * want, "{} vs {want}", report.loss);
    }

    #[test]
    fn identical_seeds_identical_losses() {
        for kind in [ProcessKind::Ve, ProcessKind::Rf, ProcessKind::Pfgmpp] {
            let (ds, spec, net, cfg) = setup(kind);
            let run = || {
                let mut sink = MemorySink::default();
                train(&ds, &spec, &net, &cfg, &mut sink).unwrap();
                sink
            };
            let (a, b) = (run(), run());
            assert_eq!(a.rows, b.rows);
            assert_eq!(a.checkpoints, b.checkpoints);
            assert!(a.rows.iter().all(|r| r.loss.is_finite()));
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (ds, spec, net, mut cfg) = setup(ProcessKind::Rf);
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.lr = f64::MIN_POSITIVE;
        let mut state = TrainState::new(&ds, &spec, &net, &cfg).unwrap();
        let before = state.clone();
        let report = train_step(&mut state, &ds, &spec, &cfg).unwrap();
        // A subnormal step size cannot move any f32 weight.
        assert_eq!(state.params.weights, before.params.weights);
        // decay·w + (1 − decay)·w may round by an ulp in f32.
        for (e, b) in state.ema_params.weights.slices().iter().zip(before.ema_params.weights.slices()) {
            for (&x, &y) in e.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-30));
            }
        }
        let changed = report
            .ids
            .iter()
            .any(|&id| state.buffer.estimates.row(id) != before.buffer.estimates.row(id));
        assert!(changed);
    }

    #[test]
    fn zero_iterations_writes_one_checkpoint() {
        let (ds, spec, net, mut cfg) = setup(ProcessKind::Rf);
        cfg.iterations = 0;
        let mut sink = MemorySink::default();
        let state = train(&ds, &spec, &net, &cfg, &mut sink).unwrap();
        assert_eq!(state.step, 0);
        assert_eq!(sink.checkpoints.len(), 1);
        assert!(sink.rows.is_empty());
    }

    #[test]
    fn per_epoch_publishes_at_boundaries() {
        let (ds, spec, net, mut cfg) = setup(ProcessKind::Rf);
        cfg.buffer_update = BufferUpdate::PerEpoch;
        let mut state = TrainState::new(&ds, &spec, &net, &cfg).unwrap();
        let initial = state.buffer.estimates.clone();
        let steps_per_epoch = ds.len().div_ceil(cfg.batch_size);
        for _ in 0..steps_per_epoch - 1 {
            train_step(&mut state, &ds, &spec, &cfg).unwrap();
        }
        assert_eq!(state.buffer.estimates, initial);
        train_step(&mut state, &ds, &spec, &cfg).unwrap();
        assert_eq!(state.buffer.epoch, 1);
        assert_eq!(Some(&state.buffer.estimates), state.buffer.staged.as_ref());
        assert_ne!(state.buffer.estimates, initial);
    }

    #[test]
    fn duplicate_ids_keep_last_prediction() {
        // A one-example dataset forces every id in the batch to collide.
        let (_, spec, net, cfg) = setup(ProcessKind::Rf);
        let ds = Dataset::from_points(Array2::from_elem((1, 2), 0.5), "one", 0).unwrap();
        let mut state = TrainState::new(&ds, &spec, &net, &cfg).unwrap();
        let before = state.clone();
        let mut replay = state.streams.clone();
        let report = train_step(&mut state, &ds, &spec, &cfg).unwrap();
        for _ in &report.ids {
            replay.data.random_range(0..1usize);
        }
        let mut last = None;
        for _ in &report.ids {
            let t = spec.sample_time(&mut replay.noise);
            last = Some(spec.perturb(ds.row(0), t, &mut replay.noise).unwrap());
        }
        let p = last.unwrap();
        let x_t: Vec<f32> = p.x_t.iter().map(|&v| v as f32).collect();
        // The last row's prediction uses the pre-step parameters and anchor.
        let pred = before
            .params
            .predict(
                before.buffer.estimates.row(0).as_slice().unwrap(),
                &x_t,
                spec.scaled_time(p.t),
                spec.precondition_state(&p).unwrap(),
            )
            .unwrap();
        assert_eq!(state.buffer.estimates.row(0).to_vec(), pred);
    }

    #[test]
    fn frozen_zero_buffer_never_moves() {
        let (ds, spec, net, mut cfg) = setup(ProcessKind::Ve);
        cfg.buffer_update = BufferUpdate::FrozenZero;
        let mut state = TrainState::new(&ds, &spec, &net, &cfg).unwrap();
        for _ in 0..5 {
            train_step(&mut state, &ds, &spec, &cfg).unwrap();
        }
        assert!(state.buffer.estimates.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { ema_decay: 1.0, ..Default::default() },
            TrainConfig { c: Some(-1.0), ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Argument(_))));
        }
        assert_eq!(TrainConfig::default().huber_c(ProcessKind::Ve), 0.00016);
        assert_eq!(TrainConfig::default().huber_c(ProcessKind::Rf), 0.0001);
    }
}
