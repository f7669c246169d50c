//! Run configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use iflow_core::data::{DatasetName, DatasetParams};
use iflow_core::net::{Activation, NetConfig};
use iflow_core::process::{
    ProcessKind, ProcessSpec, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN, DEFAULT_STEPS,
};
use iflow_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub process: ProcessKind,
    pub dataset: DatasetBlock,
    #[serde(default)]
    pub schedule: ScheduleBlock,
    #[serde(default)]
    pub net: NetBlock,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalBlock,
    pub output_dir: PathBuf,
    /// Fields the command line changed, as `field -> {"file": old, "cli": new}`.
    /// Written to `resolved.json`; ignored on reload and by [`RunConfig::hash`].
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    pub name: DatasetName,
    pub count: usize,
    #[serde(default)]
    pub params: DatasetParams,
    #[serde(default)]
    pub seed: u64,
    /// Fraction held out for evaluation.
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    /// Center and rescale to unit pooled variance before training.
    #[serde(default)]
    pub standardize: bool,
}

fn default_holdout() -> f64 {
    0.1
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_max: Option<f64>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub aug_dim: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetBlock {
    pub hidden_sizes: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: Activation,
}

impl Default for NetBlock {
    fn default() -> Self {
        NetBlock {
            hidden_sizes: vec![128, 128, 128],
            time_embed_dim: 16,
            activation: Activation::Silu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    /// Samples drawn for distribution metrics.
    pub samples: usize,
    /// Refinement steps used when sampling.
    pub steps: usize,
    pub use_ema: bool,
    pub seed: u64,
    /// Pairs for the bi-Lipschitz probe.
    pub probe_pairs: usize,
    pub probe_delta: f64,
    /// Trajectories averaged for straightness.
    pub trajectories: usize,
    pub trace_times: usize,
}

impl Default for EvalBlock {
    fn default() -> Self {
        EvalBlock {
            samples: 4096,
            steps: 1,
            use_ema: true,
            seed: 1,
            probe_pairs: 1000,
            probe_delta: 1e-2,
            trajectories: 256,
            trace_times: 32,
        }
    }
}

/// Command-line values that replace file values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parse and validate. Also accepts a `resolved.json` written by `train`.
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.overrides.clear();
        cfg.validate().map_err(|e| match e {
            CliError::Config(msg) => {
                let field = msg.split(':').next().unwrap_or_default();
                CliError::Config(format!("line {}: {msg}", locate(text, field)))
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |field: &str, msg: &str| Err(CliError::Config(format!("{field}: {msg}")));
        let s = &self.schedule;
        match self.process {
            ProcessKind::Pfgmpp => {
                if s.aug_dim.is_none() {
                    return fail("schedule.D", "required when process is pfgmpp");
                }
            }
            _ => {
                if s.aug_dim.is_some() {
                    return fail("schedule.D", "only valid when process is pfgmpp");
                }
            }
        }
        if self.dataset.count < 2 {
            return fail("dataset.count", "must be at least 2");
        }
        if !(self.dataset.holdout > 0.0 && self.dataset.holdout < 1.0) {
            return fail("dataset.holdout", "must be in (0, 1)");
        }
        if self.eval.samples == 0 {
            return fail("eval.samples", "must be at least 1");
        }
        if self.eval.steps == 0 {
            return fail("eval.steps", "must be at least 1");
        }
        self.train
            .validate()
            .or_else(|e| fail("train", &e.to_string()))?;
        if let Err(e) = self.process_spec(1) {
            return fail("schedule", &e.to_string());
        }
        self.net_config(1)
            .validate()
            .or_else(|e| fail("net", &e.to_string()))?;
        Ok(())
    }

    /// Apply command-line values, recording each in `self.overrides`.
    pub fn apply(&mut self, o: &Overrides) {
        let mut changed = BTreeMap::new();
        let mut note = |k: &str, file: serde_json::Value, cli: serde_json::Value| {
            changed.insert(k.to_string(), serde_json::json!({ "file": file, "cli": cli }));
        };
        if let Some(seed) = o.seed {
            note("train.seed", self.train.seed.into(), seed.into());
            self.train.seed = seed;
        }
        if let Some(it) = o.iterations {
            note("train.iterations", self.train.iterations.into(), it.into());
            self.train.iterations = it;
        }
        if let Some(dir) = &o.output_dir {
            note(
                "output_dir",
                self.output_dir.display().to_string().into(),
                dir.display().to_string().into(),
            );
            self.output_dir = dir.clone();
        }
        self.overrides = changed;
    }

    pub fn process_spec(&self, data_dim: usize) -> iflow_core::Result<ProcessSpec> {
        let s = &self.schedule;
        let steps = s.steps.unwrap_or(DEFAULT_STEPS);
        let smin = s.sigma_min.unwrap_or(DEFAULT_SIGMA_MIN);
        let smax = s.sigma_max.unwrap_or(DEFAULT_SIGMA_MAX);
        match self.process {
            ProcessKind::Ve => ProcessSpec::ve(steps, smin, smax),
            ProcessKind::Rf => Ok(ProcessSpec::rf()),
            ProcessKind::Pfgmpp => {
                ProcessSpec::pfgmpp(steps, smin, smax, s.aug_dim.unwrap_or(0), data_dim)
            }
        }
    }

    /// VE process with this config's schedule, for the Euler baseline.
    pub fn matched_ve(&self) -> iflow_core::Result<ProcessSpec> {
        let s = &self.schedule;
        ProcessSpec::ve(
            s.steps.unwrap_or(DEFAULT_STEPS),
            s.sigma_min.unwrap_or(DEFAULT_SIGMA_MIN),
            s.sigma_max.unwrap_or(DEFAULT_SIGMA_MAX),
        )
    }

    pub fn net_config(&self, input_dim: usize) -> NetConfig {
        NetConfig {
            input_dim,
            hidden_sizes: self.net.hidden_sizes.clone(),
            time_embed_dim: self.net.time_embed_dim,
            activation: self.net.activation,
            ignore_anchor: false,
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let mut plain = self.clone();
        plain.overrides.clear();
        let json = serde_json::to_vec(&plain).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// 1-based line of the deepest key of a dotted `field` path present in
/// `text`; line 1 if none is.
fn locate(text: &str, field: &str) -> usize {
    let mut line = 1;
    let mut from = 0;
    for seg in field.split('.') {
        let key = format!("\"{seg}\"");
        match text[from..].find(&key) {
            Some(pos) => {
                from += pos;
                line = text[..from].matches('\n').count() + 1;
            }
            None => break,
        }
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    const RF: &str = r#"{
  "process": "rf",
  "dataset": {"name": "gmm_ring", "count": 100},
  "output_dir": "out"
}"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse(RF).unwrap();
        assert_eq!(cfg.net, NetBlock::default());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.dataset.holdout, 0.1);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let text = RF.replace("\"count\": 100", "\"count\": 100, \"colour\": 1");
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("colour") && err.contains("line 3"), "{err}");
    }

    #[test]
    fn aug_dim_must_match_process() {
        let missing = RF.replace("\"rf\"", "\"pfgmpp\"");
        let err = RunConfig::parse(&missing).unwrap_err().to_string();
        assert!(err.contains("schedule.D"), "{err}");
        let extra = RF.replace("\"output_dir\"", "\"schedule\": {\"D\": 8},\n  \"output_dir\"");
        let err = RunConfig::parse(&extra).unwrap_err().to_string();
        assert!(err.contains("line 4: schedule.D"), "{err}");
        let ok = missing.replace("\"output_dir\"", "\"schedule\": {\"D\": 8}, \"output_dir\"");
        RunConfig::parse(&ok).unwrap();
    }

    #[test]
    fn overrides_are_recorded_and_round_trip() {
        let mut cfg = RunConfig::parse(RF).unwrap();
        let plain = cfg.clone();
        cfg.apply(&Overrides {
            seed: Some(7),
            ..Overrides::default()
        });
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.overrides["train.seed"]["file"], 0);
        assert_eq!(cfg.overrides["train.seed"]["cli"], 7);
        assert_ne!(cfg.hash(), plain.hash());
        let text = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::parse(&text).unwrap();
        assert!(back.overrides.is_empty());
        assert_eq!(back.train, cfg.train);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::parse(RF).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.eval.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn shipped_configs_are_valid() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
        assert!(seen >= 3);
    }
}
