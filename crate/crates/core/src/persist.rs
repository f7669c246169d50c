//! Single-file checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "IFCK"  u32 version
//! u32 metadata length, metadata (UTF-8 JSON)
//! u32 tensor count
//! per tensor: u32 name length, name, u32 rank, rank × u64 dims, f32 payload
//! ```
//!
//! Tensors appear in a fixed order: `params/*`, `ema/*`, `adam_m/*`,
//! `adam_v/*`, `buffer`, then `buffer_staged` when present.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{NetConfig, NetworkParams, ParamSet};
use crate::optim::Moments;
use crate::process::{ProcessKind, ProcessSpec};
use crate::rng::StreamStates;
use crate::trainer::{EstimateBuffer, TrainConfig, TrainState};

pub const MAGIC: &[u8; 4] = b"IFCK";
pub const VERSION: u32 = 1;

/// JSON metadata stored after the header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub process: ProcessSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub seed: u64,
    pub epoch: u64,
    pub streams: StreamStates,
    pub loss_ema: Option<f64>,
    pub dataset_len: usize,
    pub dim: usize,
}

/// A decoded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: ProcessSpec,
    pub train: TrainConfig,
    pub state: TrainState,
}

impl Checkpoint {
    /// Fail unless the checkpoint was trained for `kind`.
    pub fn expect_process(&self, kind: ProcessKind) -> Result<()> {
        if self.spec.kind != kind {
            return Err(Error::Incompatible(format!(
                "checkpoint was trained for {} but {} was requested",
                self.spec.kind, kind
            )));
        }
        Ok(())
    }

    /// Training or EMA weights.
    pub fn params(&self, use_ema: bool) -> &NetworkParams<f32> {
        if use_ema {
            &self.state.ema_params
        } else {
            &self.state.params
        }
    }
}

/// Serialize to bytes.
pub fn encode(spec: &ProcessSpec, train: &TrainConfig, state: &TrainState) -> Result<Vec<u8>> {
    let meta = Metadata {
        process: spec.clone(),
        net: state.params.config.clone(),
        train: train.clone(),
        step: state.step,
        seed: train.seed,
        epoch: state.buffer.epoch,
        streams: state.streams.capture(),
        loss_ema: state.loss_ema,
        dataset_len: state.buffer.len(),
        dim: state.buffer.estimates.ncols(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::arg(format!("metadata: {e}")))?;

    let mut tensors: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
    let groups: [(&str, &ParamSet<f32>); 4] = [
        ("params", &state.params.weights),
        ("ema", &state.ema_params.weights),
        ("adam_m", &state.moments.m),
        ("adam_v", &state.moments.v),
    ];
    for (prefix, set) in groups {
        for (name, shape, data) in set.tensors() {
            tensors.push((format!("{prefix}/{name}"), shape, data));
        }
    }
    let buf = &state.buffer;
    tensors.push((
        "buffer".into(),
        buf.estimates.shape().to_vec(),
        buf.estimates.as_slice().expect("standard layout"),
    ));
    if let Some(staged) = &buf.staged {
        tensors.push((
            "buffer_staged".into(),
            staged.shape().to_vec(),
            staged.as_slice().expect("standard layout"),
        ));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&len_u32(json.len())?.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&len_u32(tensors.len())?.to_le_bytes());
    for (name, shape, data) in tensors {
        out.extend_from_slice(&len_u32(name.len())?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&len_u32(shape.len())?.to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::arg(format!("length {n} does not fit in u32")))
}

/// Atomically write a checkpoint: the bytes go to a sibling temporary file
/// that is renamed over `path`, so an existing checkpoint survives failures.
pub fn save(
    spec: &ProcessSpec,
    train: &TrainConfig,
    state: &TrainState,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode(spec, train, state)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    save(&ckpt.spec, &ckpt.train, &ckpt.state, path)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.corrupt(format!(
                "unexpected end of file reading {what} ({n} bytes wanted, {} left)",
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corrupt {
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }
}

struct RawTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
    offset: usize,
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Corrupt {
            offset: 0,
            reason: "bad magic (not an IFCK checkpoint)".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let json_len = r.u32("metadata length")? as usize;
    let meta_at = r.pos;
    let json = r.take(json_len, "metadata")?;
    let meta: Metadata = serde_json::from_slice(json).map_err(|e| Error::Corrupt {
        offset: meta_at as u64,
        reason: format!("metadata: {e}"),
    })?;
    let count = r.u32("tensor count")? as usize;
    let mut raw = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let offset = r.pos;
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| r.corrupt(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(r.corrupt(format!("tensor `{name}` has implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u64("tensor dim")?;
            shape.push(usize::try_from(d).map_err(|_| r.corrupt("dimension overflow"))?);
        }
        let elems = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| r.corrupt(format!("tensor `{name}` size overflows")))?;
        let payload = r.take(elems, &format!("payload of `{name}`"))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        raw.push(RawTensor {
            name,
            shape,
            data,
            offset,
        });
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    assemble(meta, raw)
}

fn assemble(meta: Metadata, raw: Vec<RawTensor>) -> Result<Checkpoint> {
    meta.process.validate().map_err(|e| corrupt_meta(e.to_string()))?;
    meta.net.validate().map_err(|e| corrupt_meta(e.to_string()))?;
    let mut tensors = raw.into_iter();
    let mut fill = |prefix: &str| -> Result<ParamSet<f32>> {
        let mut set = ParamSet::<f32>::zeros(&meta.net);
        let expected: Vec<(String, Vec<usize>)> = set
            .tensors()
            .into_iter()
            .map(|(n, s, _)| (format!("{prefix}/{n}"), s))
            .collect();
        for ((name, shape), dst) in expected.into_iter().zip(set.slices_mut()) {
            let t = tensors.next().ok_or_else(|| corrupt_meta(format!("missing tensor `{name}`")))?;
            check_tensor(&t, &name, &shape)?;
            dst.copy_from_slice(&t.data);
        }
        Ok(set)
    };
    let params = fill("params")?;
    let ema = fill("ema")?;
    let m = fill("adam_m")?;
    let v = fill("adam_v")?;
    let shape = vec![meta.dataset_len, meta.dim];
    let mut take_buffer = |name: &str| -> Result<Option<Array2<f32>>> {
        match tensors.next() {
            None => Ok(None),
            Some(t) => {
                check_tensor(&t, name, &shape)?;
                Ok(Some(
                    Array2::from_shape_vec((meta.dataset_len, meta.dim), t.data)
                        .expect("shape checked"),
                ))
            }
        }
    };
    let estimates = take_buffer("buffer")?.ok_or_else(|| corrupt_meta("missing tensor `buffer`"))?;
    let staged = take_buffer("buffer_staged")?;
    if let Some(extra) = tensors.next() {
        return Err(Error::Corrupt {
            offset: extra.offset as u64,
            reason: format!("unexpected tensor `{}`", extra.name),
        });
    }
    let streams = meta.streams.restore()?;
    let wrap = |weights| NetworkParams {
        config: meta.net.clone(),
        weights,
        step_count: meta.step,
    };
    let state = TrainState {
        params: wrap(params),
        ema_params: wrap(ema),
        moments: Moments { m, v },
        buffer: EstimateBuffer {
            estimates,
            staged,
            epoch: meta.epoch,
        },
        step: meta.step,
        streams,
        loss_ema: meta.loss_ema,
    };
    Ok(Checkpoint {
        spec: meta.process,
        train: meta.train,
        state,
    })
}

fn check_tensor(t: &RawTensor, name: &str, shape: &[usize]) -> Result<()> {
    if t.name != name {
        return Err(Error::Corrupt {
            offset: t.offset as u64,
            reason: format!("expected tensor `{name}`, found `{}`", t.name),
        });
    }
    if t.shape != shape {
        return Err(Error::Corrupt {
            offset: t.offset as u64,
            reason: format!(
                "tensor `{name}` has shape {:?}, the metadata implies {shape:?}",
                t.shape
            ),
        });
    }
    Ok(())
}

fn corrupt_meta(reason: impl Into<String>) -> Error {
    Error::Corrupt {
        offset: 8,
        reason: reason.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_dataset, DatasetName, DatasetParams};
    use crate::trainer::{train, BufferUpdate, NullSink};

    fn trained(update: BufferUpdate) -> Checkpoint {
        let ds = make_dataset(DatasetName::TwoMoons, 40, &DatasetParams::default(), 2).unwrap();
        let spec = ProcessSpec::rf();
        let net = NetConfig::new(2, vec![8]);
        let train_cfg = TrainConfig {
            batch_size: 4,
            iterations: 7,
            buffer_update: update,
            ..Default::default()
        };
        let state = train(&ds, &spec, &net, &train_cfg, &mut NullSink).unwrap();
        Checkpoint {
            spec,
            train: train_cfg,
            state,
        }
    }

    fn bytes(c: &Checkpoint) -> Vec<u8> {
        encode(&c.spec, &c.train, &c.state).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        for update in [BufferUpdate::PerBatch, BufferUpdate::PerEpoch] {
            let ckpt = trained(update);
            let first = bytes(&ckpt);
            let again = decode(&first).unwrap();
            assert_eq!(first, bytes(&again));
            assert_eq!(again.state.params, ckpt.state.params);
            assert_eq!(again.state.buffer, ckpt.state.buffer);
        }
    }

    #[test]
    fn truncation_names_offset() {
        let b = bytes(&trained(BufferUpdate::PerBatch));
        for cut in [2, 6, 11, b.len() / 2, b.len() - 1] {
            match decode(&b[..cut]) {
                Err(Error::Corrupt { offset, reason }) => {
                    assert!(offset as usize <= cut, "{offset} > {cut}");
                    assert!(reason.contains("unexpected end") || cut == 2 || reason.contains("metadata"));
                }
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut b = bytes(&trained(BufferUpdate::PerBatch));
        b[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode(&b),
            Err(Error::UnsupportedVersion { found: 7, supported: VERSION })
        ));
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(Error::Corrupt { offset: 0, .. })));
    }

    #[test]
    fn process_mismatch_is_incompatible() {
        let ckpt = trained(BufferUpdate::PerBatch);
        assert!(ckpt.expect_process(ProcessKind::Rf).is_ok());
        assert!(matches!(ckpt.expect_process(ProcessKind::Ve), Err(Error::Incompatible(_))));
    }

    #[test]
    fn save_is_atomic_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ifck");
        let ckpt = trained(BufferUpdate::PerBatch);
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(bytes(&loaded), std::fs::read(&path).unwrap());
        // A failing save must leave the previous file in place.
        let bad = dir.path().join("missing_dir").join("y.ifck");
        assert!(matches!(save_checkpoint(&ckpt, &bad), Err(Error::Io { .. })));
        assert!(path.exists());
    }
}
