use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::TrainingConfig;
use crate::backbone::{ModelSpec, ParamStore};
use crate::dataset::Normalization;
use crate::error::{Error, Result};
use crate::tensor_ops::Tensor;

const MAGIC: &[u8; 8] = b"TSGCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParamStore<f32>,
    pub optimizer: AdamState,
    pub iteration: u64,
    /// Snapshot of the run configuration, including the preprocessing
    /// constants.
    pub config: TrainingConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    config: TrainingConfig,
    iteration: u64,
    optimizer_step: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: Group,
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Group {
    Param,
    AdamFirst,
    AdamSecond,
}

impl Checkpoint {
    /// Fresh checkpoint at iteration zero.
    pub fn new(spec: ModelSpec, params: ParamStore<f32>, config: TrainingConfig) -> Self {
        Self {
            spec,
            params,
            optimizer: AdamState::default(),
            iteration: 0,
            config,
        }
    }

    pub fn normalization(&self) -> &Normalization {
        &self.config.normalization
    }

    fn groups(&self) -> [(Group, &ParamStore<f32>); 3] {
        [
            (Group::Param, &self.params),
            (Group::AdamFirst, &self.optimizer.first),
            (Group::AdamSecond, &self.optimizer.second),
        ]
    }

    /// Magic, little-endian `u32` version, `u64` header length, JSON header,
    /// then every tensor as little-endian `f32` in header order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        for (group, store) in self.groups() {
            for (name, t) in store.iter() {
                tensors.push(TensorEntry {
                    group,
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                });
                payload.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
            }
        }
        let header = Header {
            spec: self.spec.clone(),
            config: self.config.clone(),
            iteration: self.iteration,
            optimizer_step: self.optimizer.step,
            tensors,
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::invalid(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::CorruptCheckpoint(msg.to_string());
        if bytes.len() < PREAMBLE {
            return Err(corrupt("file is shorter than the checkpoint preamble"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::IncompatibleCheckpoint(format!(
                "format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| PREAMBLE.checked_add(n))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt("header extends past the end of the file"))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| Error::CorruptCheckpoint(format!("unreadable header: {e}")))?;

        let mut payload = bytes[header_end..].chunks_exact(4);
        let mut stores = [ParamStore::new(), ParamStore::new(), ParamStore::new()];
        for entry in header.tensors {
            let count: usize = entry.shape.iter().product();
            if payload.len() < count {
                return Err(corrupt("tensor data is truncated"));
            }
            let data = payload
                .by_ref()
                .take(count)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let tensor = Tensor::new(entry.shape, data).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
            stores[entry.group as usize].insert(entry.name, tensor);
        }
        if payload.len() != 0 || !payload.remainder().is_empty() {
            return Err(corrupt("trailing bytes after tensor data"));
        }
        let [params, first, second] = stores;
        params.check_against(&header.spec)?;
        Ok(Self {
            spec: header.spec,
            params,
            optimizer: AdamState {
                step: header.optimizer_step,
                first,
                second,
            },
            iteration: header.iteration,
            config: header.config,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{build_resnet, convert_to_fcn_with_params, ResNetConfig};
    use crate::training::Adam;

    fn sample() -> Checkpoint {
        let classifier = build_resnet(&ResNetConfig::tiny(), 10, "tiny").unwrap();
        let params = ParamStore::init(&classifier, 1);
        let (fcn, params) = convert_to_fcn_with_params(&classifier, params, 3, 2).unwrap();
        let mut ckpt = Checkpoint::new(fcn.model, params, TrainingConfig::default());
        let grads = ckpt.params.map(|v| v * 0.5 + 0.1);
        Adam::new(1e-3).step(&mut ckpt.params, &grads, &mut ckpt.optimizer);
        ckpt.iteration = 1;
        ckpt
    }

    #[test]
    fn round_trip_is_lossless() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ckpt = sample();
        save_checkpoint(&ckpt, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn zero_byte_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ckpt");
        std::fs::write(&path, b"").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn truncation_is_corrupt() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [5, PREAMBLE + 3, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::CorruptCheckpoint(_))
            ));
        }
    }

    #[test]
    fn newer_version_is_incompatible() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::IncompatibleCheckpoint(_))
        ));
    }
}
