//! Checkpoints: a sequence of canonical tensor records in one file. The
//! first record is a `u8` tensor holding a JSON manifest (configuration,
//! layer plan, parameter names and extents); one `f32` record per
//! parameter follows, in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CanonicalTensor, Dtype};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{LayerSpec, ModelConfig, ParamStore};

const FORMAT: &str = "rescaps-checkpoint/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    /// Completed training epochs.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    epoch: usize,
    layers: Vec<LayerSpec>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    dims: Vec<usize>,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let manifest = Manifest {
        format: FORMAT.into(),
        config: checkpoint.config.clone(),
        epoch: checkpoint.epoch,
        layers: checkpoint.config.plan()?,
        params: checkpoint
            .params
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                dims: t.dims().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut bytes = CanonicalTensor::from_u8(vec![json.len()], json).to_bytes();
    for (_, t) in checkpoint.params.iter() {
        bytes.extend(CanonicalTensor::from_f32(t.dims().to_vec(), t.data()).to_bytes());
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (head, mut offset) = CanonicalTensor::from_prefix(&bytes, path)?;
    if head.dtype != Dtype::U8 {
        return Err(bad("manifest record is not a byte tensor".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&head.payload).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(bad(format!("unsupported format `{}`", manifest.format)));
    }
    let mut params = ParamStore::new();
    for entry in &manifest.params {
        let (record, used) = CanonicalTensor::from_prefix(&bytes[offset..], path)?;
        offset += used;
        if record.dtype != Dtype::F32 || record.dims != entry.dims {
            return Err(bad(format!("record for `{}` has wrong type or extents", entry.name)));
        }
        params.insert(entry.name.clone(), Tensor::new(record.dims.clone(), record.as_f32())?)?;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }
    let expected = ParamStore::<f32>::init(&manifest.config)?;
    let layout_ok = expected.len() == params.len()
        && expected
            .iter()
            .zip(params.iter())
            .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.dims() == t2.dims());
    if !layout_ok {
        return Err(bad("parameters do not match the stored configuration".into()));
    }
    Ok(Checkpoint {
        config: manifest.config,
        params,
        epoch: manifest.epoch,
    })
}
