use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::log::TrainLog;
use crate::cells::{schema, Arch, LayerState, ModelParams, NamedTensor, State};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::math::{DoubleDouble, Matrix, Real, RngState};
use crate::optim::{Optimizer, OptimizerScalars};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"MLSTMCKPT";
pub const CHECKPOINT_VERSION: u8 = 1;
const PREFIX_LEN: usize = CHECKPOINT_MAGIC.len() + 1 + 8;

const OPT_PREFIX: &str = "opt/";
const BEST_PREFIX: &str = "best/";
const STATE_PREFIX: &str = "state/";

/// Position of a run inside its schedule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub epoch: usize,
    /// Next window within the epoch.
    pub window: usize,
    /// Optimizer updates applied.
    pub step: u64,
    pub chars_seen: u64,
    /// Training-target count at which the next validation runs.
    pub next_eval: u64,
    pub evals_without_improvement: usize,
    /// Training loss accumulated since the last evaluation.
    pub train_nats: f64,
    pub train_targets: u64,
    pub wall_s: f64,
    pub finished: bool,
}

/// What a run needs beyond the parameters to continue exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct ResumeState<T> {
    pub optimizer: Optimizer<T>,
    pub rng: RngState,
    /// Lane state at the end of the last window.
    pub state: State<T>,
    /// Parameters at the best validation point so far.
    pub best: Option<ModelParams<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub params: ModelParams<T>,
    pub progress: Progress,
    pub best_valid: Option<f64>,
    pub log: TrainLog,
    pub resume: Option<ResumeState<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    /// Byte offset from the start of the payload section.
    pub offset: u64,
}

/// JSON header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: RunConfig,
    pub arch: Arch,
    pub vocab: Vocab,
    pub progress: Progress,
    pub best_valid: Option<f64>,
    pub log: TrainLog,
    pub optimizer: Option<OptimizerScalars>,
    pub rng: Option<RngState>,
    pub manifest: Vec<ManifestEntry>,
}

fn dtype_bytes(dtype: &str) -> Option<usize> {
    match dtype {
        "f32" => Some(4),
        "f64" => Some(8),
        "f64x2" => Some(16),
        _ => None,
    }
}

impl<T: Real> Checkpoint<T> {
    fn named_tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out: Vec<(String, &Matrix<T>)> =
            self.params.tensors().iter().map(|t| (t.name.clone(), &t.value)).collect();
        if let Some(r) = &self.resume {
            // Optimizer tensors are owned temporaries; handled in `to_bytes`.
            if let Some(best) = &r.best {
                out.extend(best.tensors().iter().map(|t| (format!("{BEST_PREFIX}{}", t.name), &t.value)));
            }
            for (l, s) in r.state.layers.iter().enumerate() {
                out.push((format!("{STATE_PREFIX}l{l}.h"), &s.h));
                if let Some(c) = &s.c {
                    out.push((format!("{STATE_PREFIX}l{l}.c"), c));
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let opt_tensors: Vec<NamedTensor<T>> = self
            .resume
            .as_ref()
            .map(|r| r.optimizer.tensors())
            .unwrap_or_default();
        let mut tensors = self.named_tensors();
        // Parameters, optimizer slots, best parameters, lane state.
        let n_params = self.params.tensors().len();
        let tail = tensors.split_off(n_params);
        tensors.extend(opt_tensors.iter().map(|t| (format!("{OPT_PREFIX}{}", t.name), &t.value)));
        tensors.extend(tail);

        let mut manifest = Vec::with_capacity(tensors.len());
        let mut payload = Vec::new();
        for (name, m) in &tensors {
            manifest.push(ManifestEntry {
                name: name.clone(),
                shape: [m.rows(), m.cols()],
                dtype: T::DTYPE.to_string(),
                offset: payload.len() as u64,
            });
            payload.reserve(m.len() * T::BYTES);
            for &v in m.data() {
                v.write_le(&mut payload);
            }
        }
        let header = CheckpointHeader {
            config: self.config.clone(),
            arch: *self.params.arch(),
            vocab: self.vocab.clone(),
            progress: self.progress.clone(),
            best_valid: self.best_valid,
            log: self.log.clone(),
            optimizer: self.resume.as_ref().map(|r| r.optimizer.scalars()),
            rng: self.resume.as_ref().map(|r| r.rng.clone()),
            manifest,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        // Write beside the target and rename so a crash never leaves half a file.
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Parse a checkpoint, converting stored tensors to `T` when the file
    /// was written at another precision.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload_start) = read_header(bytes)?;
        let arch = header.arch;
        let vocab_len = header.vocab.len();
        if header.config.arch_spec() != arch {
            return Err(Error::ShapeManifest(format!(
                "header architecture {arch:?} disagrees with its config"
            )));
        }
        let payload = &bytes[payload_start..];
        let mut expected = 0u64;
        let mut tensors: Vec<(String, Matrix<T>)> = Vec::with_capacity(header.manifest.len());
        for e in &header.manifest {
            let width = dtype_bytes(&e.dtype).ok_or_else(|| {
                Error::ShapeManifest(format!("tensor {} has unknown dtype {:?}", e.name, e.dtype))
            })?;
            let at = payload_start as u64 + e.offset;
            if e.offset != expected {
                return Err(Error::Integrity {
                    offset: at,
                    reason: format!("tensor {} starts at payload byte {}, expected {expected}", e.name, e.offset),
                });
            }
            let len = e.shape[0] * e.shape[1];
            let size = (len * width) as u64;
            if e.offset + size > payload.len() as u64 {
                return Err(Error::Integrity {
                    offset: bytes.len() as u64,
                    reason: format!("file ends inside tensor {} (needs {} more bytes)", e.name, e.offset + size - payload.len() as u64),
                });
            }
            let raw = &payload[e.offset as usize..(e.offset + size) as usize];
            let data: Vec<T> = match e.dtype.as_str() {
                d if d == T::DTYPE => raw.chunks_exact(width).map(T::read_le).collect(),
                "f32" => raw.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
                "f64" => raw.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
                _ => raw
                    .chunks_exact(16)
                    .map(|c| T::lit(DoubleDouble::read_le(c).as_f64()))
                    .collect(),
            };
            tensors.push((e.name.clone(), Matrix::from_vec(e.shape[0], e.shape[1], data)?));
            expected = e.offset + size;
        }
        if expected != payload.len() as u64 {
            return Err(Error::Integrity {
                offset: payload_start as u64 + expected,
                reason: format!("{} trailing bytes after the last tensor", payload.len() as u64 - expected),
            });
        }

        let spec = schema(&arch, vocab_len).map_err(|e| Error::ShapeManifest(e.to_string()))?;
        let mut iter = tensors.into_iter().peekable();
        let mut take_group = |prefix: &str| -> Result<Option<Vec<NamedTensor<T>>>> {
            let mut group = Vec::new();
            while let Some((name, _)) = iter.peek() {
                let Some(stripped) = strip_group(name, prefix) else { break };
                let stripped = stripped.to_string();
                let (_, value) = iter.next().expect("peeked");
                group.push(NamedTensor { name: stripped, value });
            }
            Ok((!group.is_empty()).then_some(group))
        };
        let check = |group: &[NamedTensor<T>], what: &str| -> Result<()> {
            if group.len() != spec.len() {
                return Err(Error::ShapeManifest(format!(
                    "{what}: {} tensors, architecture over {vocab_len} symbols needs {}",
                    group.len(),
                    spec.len()
                )));
            }
            for (t, s) in group.iter().zip(&spec) {
                if t.name != s.name || t.value.shape() != (s.rows, s.cols) {
                    return Err(Error::ShapeManifest(format!(
                        "{what}: tensor {} is {:?}, expected {} of {}x{} for {vocab_len} symbols",
                        t.name,
                        t.value.shape(),
                        s.name,
                        s.rows,
                        s.cols
                    )));
                }
            }
            Ok(())
        };

        let params = take_group("")?.unwrap_or_default();
        check(&params, "parameters")?;
        let params = ModelParams::from_tensors(&arch, vocab_len, params)?;
        let opt = take_group(OPT_PREFIX)?;
        let best = take_group(BEST_PREFIX)?;
        if let Some(b) = &best {
            check(b, "best parameters")?;
        }
        let best = best.map(|b| ModelParams::from_tensors(&arch, vocab_len, b)).transpose()?;
        let state = take_group(STATE_PREFIX)?;
        if let Some((name, _)) = iter.next() {
            return Err(Error::ShapeManifest(format!("unexpected tensor {name} in manifest")));
        }

        let resume = match (header.optimizer, header.rng, opt, state) {
            (Some(scalars), Some(rng), Some(opt), Some(state)) => {
                let optimizer = Optimizer::restore(&scalars, &params, opt)
                    .map_err(|e| Error::ShapeManifest(format!("optimizer state: {e}")))?;
                let state = rebuild_state(&arch, state)?;
                Some(ResumeState {
                    optimizer,
                    rng,
                    state,
                    best,
                })
            }
            (None, None, None, None) => None,
            _ => {
                return Err(Error::ShapeManifest(
                    "resume data is incomplete (optimizer, rng and lane state go together)".into(),
                ))
            }
        };
        Ok(Checkpoint {
            config: header.config,
            vocab: header.vocab,
            params,
            progress: header.progress,
            best_valid: header.best_valid,
            log: header.log,
            resume,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// The same checkpoint without resume data, for inference use.
    pub fn without_resume(&self) -> Self {
        Checkpoint {
            resume: None,
            ..self.clone()
        }
    }
}

/// Top-level parameter names never contain `/`; grouped tensors carry a prefix.
fn strip_group<'a>(name: &'a str, prefix: &str) -> Option<&'a str> {
    if prefix.is_empty() {
        (!name.contains('/')).then_some(name)
    } else {
        name.strip_prefix(prefix)
    }
}

fn rebuild_state<T: Real>(arch: &Arch, tensors: Vec<NamedTensor<T>>) -> Result<State<T>> {
    let gated = arch.cell().gated();
    let per_layer = if gated { 2 } else { 1 };
    if tensors.len() != arch.layers * per_layer {
        return Err(Error::ShapeManifest(format!(
            "{} lane-state tensors for {} layers",
            tensors.len(),
            arch.layers
        )));
    }
    let mut it = tensors.into_iter();
    let mut layers = Vec::with_capacity(arch.layers);
    for l in 0..arch.layers {
        let h = it.next().expect("counted");
        if h.name != format!("l{l}.h") || h.value.cols() != arch.hidden {
            return Err(Error::ShapeManifest(format!("bad lane-state tensor {}", h.name)));
        }
        let c = if gated {
            let c = it.next().expect("counted");
            if c.name != format!("l{l}.c") || c.value.shape() != h.value.shape() {
                return Err(Error::ShapeManifest(format!("bad lane-state tensor {}", c.name)));
            }
            Some(c.value)
        } else {
            None
        };
        layers.push(LayerState { h: h.value, c });
    }
    Ok(State { layers })
}

/// Validate the fixed prefix and parse the JSON header; returns the header
/// and the byte offset where payloads start.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    let magic_len = CHECKPOINT_MAGIC.len();
    if bytes.len() < magic_len || &bytes[..magic_len] != CHECKPOINT_MAGIC {
        let offset = bytes
            .iter()
            .zip(CHECKPOINT_MAGIC)
            .position(|(a, b)| a != b)
            .unwrap_or(bytes.len().min(magic_len));
        return Err(Error::Integrity {
            offset: offset as u64,
            reason: "bad magic; not a checkpoint file".into(),
        });
    }
    if bytes.len() < PREFIX_LEN {
        return Err(Error::Integrity {
            offset: bytes.len() as u64,
            reason: "file ends inside the fixed prefix".into(),
        });
    }
    let version = bytes[magic_len];
    if version != CHECKPOINT_VERSION {
        return Err(Error::Integrity {
            offset: magic_len as u64,
            reason: format!("format version {version}, this build reads {CHECKPOINT_VERSION}"),
        });
    }
    let len = u64::from_le_bytes(bytes[magic_len + 1..PREFIX_LEN].try_into().expect("8 bytes"));
    let end = (PREFIX_LEN as u64).checked_add(len).filter(|&e| e <= bytes.len() as u64);
    let Some(end) = end else {
        return Err(Error::Integrity {
            offset: bytes.len() as u64,
            reason: format!("file ends inside the {len}-byte header"),
        });
    };
    let header: CheckpointHeader = serde_json::from_slice(&bytes[PREFIX_LEN..end as usize]).map_err(|e| {
        Error::Integrity {
            offset: PREFIX_LEN as u64 + e.column() as u64,
            reason: format!("header is not valid JSON: {e}"),
        }
    })?;
    Ok((header, end as usize))
}

/// Header of a checkpoint file without reading its payloads into tensors.
pub fn peek_header(path: impl AsRef<Path>) -> Result<CheckpointHeader> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(read_header(&bytes)?.0)
}
