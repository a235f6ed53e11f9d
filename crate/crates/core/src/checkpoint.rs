//! Binary checkpoints: `S2CK` magic, format version, a JSON header describing
//! every blob, then little-endian f32 blobs in header order (parameters first,
//! then optimizer first and second moments).

use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::MelConfig;
use crate::config::ModelConfig;
use crate::curriculum::{AdamW, EpochMetrics, LrOnPlateau, Moments, Stage, TrainingState};
use crate::error::{Error, Result};
use crate::model::S2stModel;
use crate::nn::ParamKind;

pub const MAGIC: &[u8; 4] = b"S2CK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobSpec {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MomentSpec {
    name: String,
    shape: Vec<usize>,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainingHeader {
    stage: Stage,
    epochs_done: usize,
    scheduler: LrOnPlateau,
    log: Vec<EpochMetrics>,
    optimizer: Vec<MomentSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    seed: u64,
    config: ModelConfig,
    audio: MelConfig,
    params: Vec<BlobSpec>,
    training: Option<TrainingHeader>,
}

fn push_f32(out: &mut Vec<u8>, t: &Tensor) -> Result<()> {
    out.extend(crate::nn::tensor_le_bytes(t)?);
    Ok(())
}

/// Serializes the model and, optionally, the in-progress training state.
pub fn to_bytes(model: &S2stModel, training: Option<&TrainingState>) -> Result<Vec<u8>> {
    let params: Vec<BlobSpec> = model
        .store
        .iter()
        .map(|p| BlobSpec {
            name: p.name.clone(),
            shape: p.tensor().dims().to_vec(),
            kind: p.kind,
        })
        .collect();
    let training_header = training.map(|t| TrainingHeader {
        stage: t.stage,
        epochs_done: t.epochs_done,
        scheduler: t.scheduler.clone(),
        log: t.log.clone(),
        optimizer: t
            .optimizer
            .state
            .iter()
            .map(|(name, m)| MomentSpec {
                name: name.clone(),
                shape: m.m.dims().to_vec(),
                step: m.step,
            })
            .collect(),
    });
    let header = Header {
        version: VERSION,
        seed: model.seed,
        config: model.config.clone(),
        audio: model.audio.clone(),
        params,
        training: training_header,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Serialization(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.store.iter() {
        push_f32(&mut out, p.tensor())?;
    }
    if let Some(t) = training {
        for m in t.optimizer.state.values() {
            push_f32(&mut out, &m.m)?;
            push_f32(&mut out, &m.v)?;
        }
    }
    Ok(out)
}

pub fn save(path: &Path, model: &S2stModel, training: Option<&TrainingState>) -> Result<String> {
    let bytes = to_bytes(model, training)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // write-then-rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Serialization(format!(
                "checkpoint truncated: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn tensor(&mut self, shape: &[usize], dtype: DType) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4)?;
        let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Tensor::from_vec(v, shape, &Device::Cpu)?.to_dtype(dtype)?)
    }
}

pub fn from_bytes(bytes: &[u8], dtype: DType) -> Result<(S2stModel, Option<TrainingState>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Serialization("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Serialization(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Serialization(format!("checkpoint header: {e}")))?;
    let model = S2stModel::new(&header.config, &header.audio, header.seed, dtype)?;
    if header.params.len() != model.store.len() {
        return Err(Error::Serialization(format!(
            "checkpoint has {} parameters, model has {}",
            header.params.len(),
            model.store.len()
        )));
    }
    for (spec, p) in header.params.iter().zip(model.store.iter()) {
        if spec.name != p.name || spec.shape != p.tensor().dims() || spec.kind != p.kind {
            return Err(Error::Serialization(format!(
                "parameter layout mismatch at `{}` (model has `{}`)",
                spec.name, p.name
            )));
        }
    }
    for spec in &header.params {
        let t = r.tensor(&spec.shape, dtype)?;
        model.store.set(&spec.name, &t)?;
    }
    let training = match header.training {
        None => None,
        Some(h) => {
            let mut opt = AdamW::new();
            for m in h.optimizer {
                let first = r.tensor(&m.shape, dtype)?;
                let second = r.tensor(&m.shape, dtype)?;
                opt.state.insert(
                    m.name,
                    Moments {
                        m: first,
                        v: second,
                        step: m.step,
                    },
                );
            }
            Some(TrainingState {
                stage: h.stage,
                epochs_done: h.epochs_done,
                scheduler: h.scheduler,
                optimizer: opt,
                log: h.log,
            })
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Serialization(format!(
            "{} trailing bytes after the last blob",
            bytes.len() - r.pos
        )));
    }
    Ok((model, training))
}

pub fn load(path: &Path) -> Result<(S2stModel, Option<TrainingState>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, DType::F32)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
