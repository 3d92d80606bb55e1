//! Checkpoint directory: `model.bin` (raw little-endian f64 tensors) and
//! `manifest.json` (dims, seeds, tensor table, checksum).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hetgraph::SageParams;
use crate::math::seeded_rng;
use crate::model::{EndemicModel, ModelDims};
use crate::params::ParamSet;

const MAGIC: &[u8; 8] = b"ENDCKPT1";
pub const FORMAT: &str = "endemic-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f64 elements from the start of the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dims: ModelDims,
    pub p_drop: f64,
    pub seeds: BTreeMap<String, u64>,
    /// Layer widths of the graph encoder, when its weights are included.
    pub sage_dims: Option<Vec<usize>>,
    pub tensors: Vec<TensorEntry>,
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: EndemicModel,
    pub sage: Option<SageParams>,
    pub manifest: CheckpointManifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn sage_dims(s: &SageParams) -> Vec<usize> {
    let mut dims = vec![s.input_dim()];
    dims.extend(s.layers.iter().map(|l| l.w_self.nrows()));
    dims
}

fn append(p: &impl ParamSet, payload: &mut Vec<u8>, table: &mut Vec<TensorEntry>, offset: &mut usize) {
    p.visit(&mut |name, shape, data| {
        table.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: *offset,
        });
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        *offset += data.len();
    });
}

/// Writes the checkpoint into `dir` (created if needed) and returns the paths written.
pub fn save_checkpoint(
    dir: &Path,
    model: &EndemicModel,
    sage: Option<&SageParams>,
    p_drop: f64,
    seeds: &BTreeMap<String, u64>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut payload = MAGIC.to_vec();
    let mut table = Vec::new();
    let mut offset = 0;
    append(model, &mut payload, &mut table, &mut offset);
    if let Some(s) = sage {
        append(s, &mut payload, &mut table, &mut offset);
    }
    let manifest = CheckpointManifest {
        format: FORMAT.to_string(),
        dims: model.dims,
        p_drop,
        seeds: seeds.clone(),
        sage_dims: sage.map(sage_dims),
        tensors: table,
        sha256: sha256_hex(&payload),
    };
    let bin = dir.join("model.bin");
    std::fs::write(&bin, &payload).map_err(|e| Error::io(&bin, e))?;
    let man = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&man, text + "\n").map_err(|e| Error::io(&man, e))?;
    Ok(vec![bin, man])
}

fn restore(p: &mut impl ParamSet, entries: &mut std::slice::Iter<'_, TensorEntry>, payload: &[u8]) -> Result<()> {
    let mut expected = Vec::new();
    p.visit(&mut |name, shape, _| expected.push((name.to_string(), shape.to_vec())));
    let mut offsets = Vec::new();
    for (name, shape) in &expected {
        let e = entries
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} missing from manifest")))?;
        if &e.name != name || &e.shape != shape {
            return Err(Error::Checkpoint(format!(
                "expected tensor {name} {shape:?}, manifest has {} {:?}",
                e.name, e.shape
            )));
        }
        offsets.push(e.offset);
    }
    let mut i = 0;
    let mut err = None;
    p.visit_mut(&mut |name, data| {
        let start = 8 + offsets[i] * 8;
        let end = start + data.len() * 8;
        i += 1;
        match payload.get(start..end) {
            Some(bytes) => {
                for (x, chunk) in data.iter_mut().zip(bytes.chunks_exact(8)) {
                    *x = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
                }
            }
            None => err = Some(Error::Checkpoint(format!("payload too short for tensor {name}"))),
        }
    });
    err.map_or(Ok(()), Err)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let man_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {:?}", manifest.format)));
    }
    let bin = dir.join("model.bin");
    let payload = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if payload.get(..8) != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint payload", bin.display())));
    }
    let digest = sha256_hex(&payload);
    if digest != manifest.sha256 {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: manifest {}, payload {digest}",
            manifest.sha256
        )));
    }
    let mut model = EndemicModel::new(manifest.dims, manifest.p_drop, 0)?;
    let mut entries = manifest.tensors.iter();
    restore(&mut model, &mut entries, &payload)?;
    let sage = match &manifest.sage_dims {
        Some(dims) => {
            let mut s = SageParams::new(dims, &mut seeded_rng(&[0]))?;
            restore(&mut s, &mut entries, &payload)?;
            Some(s)
        }
        None => None,
    };
    if entries.next().is_some() {
        return Err(Error::Checkpoint("manifest lists more tensors than the model has".into()));
    }
    Ok(Checkpoint { model, sage, manifest })
}
