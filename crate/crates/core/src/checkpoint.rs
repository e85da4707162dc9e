//! Named-tensor checkpoints: a JSON manifest plus a little-endian `f64` blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::io::write_bytes;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into the blob, in `f64` elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
    /// Model-specific metadata (vocabularies, hyper-parameters).
    #[serde(default)]
    pub meta: serde_json::Value,
}

const FORMAT: &str = "named-f64-le/1";

/// Writes `<stem>.json` and `<stem>.bin` into `dir`.
pub fn save(dir: &Path, stem: &str, params: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let mut blob = Vec::with_capacity(params.num_scalars() * 8);
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in params.iter() {
        tensors.push(TensorEntry { name: name.to_string(), shape: [t.rows, t.cols], offset });
        for v in &t.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.len();
    }
    let manifest = Manifest { format: FORMAT.into(), blob: format!("{stem}.bin"), tensors, meta };
    write_bytes(&dir.join(format!("{stem}.bin")), &blob)?;
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    write_bytes(&dir.join(format!("{stem}.json")), &json)
}

/// Reads a checkpoint written by [`save`].
pub fn load(dir: &Path, stem: &str) -> Result<(ParamStore, serde_json::Value)> {
    let mpath = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {}", manifest.format)));
    }
    let bpath = dir.join(&manifest.blob);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    if blob.len() % 8 != 0 {
        return Err(Error::Checkpoint("blob length is not a multiple of 8".into()));
    }
    let values: Vec<f64> =
        blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let mut params = ParamStore::new();
    for t in &manifest.tensors {
        let n = t.shape[0] * t.shape[1];
        let slice = values
            .get(t.offset..t.offset + n)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {} exceeds blob", t.name)))?;
        params.insert(t.name.clone(), Tensor::from_vec(t.shape[0], t.shape[1], slice.to_vec()));
    }
    Ok((params, manifest.meta))
}
