//! Checkpoint file: JSON manifest plus named f32 parameter arrays.
//!
//! ```text
//! magic "WAMC" | u16 version | u32 manifest_len | manifest JSON
//! arrays, f32 little-endian, in manifest order, each CRC32-checked
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{build_layout, ParamStore};
use super::{ModelConfig, WamError};
use crate::data::NormStats;
use crate::num::Scalar;

const MAGIC: &[u8; 4] = b"WAMC";
const VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    crc32: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    norm: NormStats,
    seed: u64,
    step: usize,
    arrays: Vec<ArrayEntry>,
}

/// A trained model as stored on disk.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub norm: NormStats,
    pub seed: u64,
    pub step: usize,
    pub store: ParamStore<f32>,
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    config: &ModelConfig,
    norm: &NormStats,
    seed: u64,
    step: usize,
    store: &ParamStore<T>,
) -> Result<(), WamError> {
    let store32: ParamStore<f32> = store.cast();
    let mut arrays = Vec::new();
    let mut blobs: Vec<Vec<u8>> = Vec::new();
    for spec in &store32.layout.specs {
        let slice = &store32.data[spec.offset..spec.offset + spec.len];
        let mut bytes = Vec::with_capacity(slice.len() * 4);
        for v in slice {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        arrays.push(ArrayEntry {
            name: spec.name.clone(),
            shape: spec.shape.clone(),
            crc32: crc32fast::hash(&bytes),
        });
        blobs.push(bytes);
    }
    let manifest = Manifest {
        config: config.clone(),
        norm: norm.clone(),
        seed,
        step,
        arrays,
    };
    let mjson = serde_json::to_vec(&manifest).map_err(|e| WamError::Checkpoint(e.to_string()))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(mjson.len() as u32).to_le_bytes())?;
    w.write_all(&mjson)?;
    for b in &blobs {
        w.write_all(b)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, WamError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(WamError::Checkpoint("bad magic".into()));
    }
    let mut vb = [0u8; 2];
    r.read_exact(&mut vb)?;
    let version = u16::from_le_bytes(vb);
    if version != VERSION {
        return Err(WamError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut lb = [0u8; 4];
    r.read_exact(&mut lb)?;
    let mlen = u32::from_le_bytes(lb) as usize;
    let mut mjson = vec![0u8; mlen];
    r.read_exact(&mut mjson)?;
    let manifest: Manifest =
        serde_json::from_slice(&mjson).map_err(|e| WamError::Checkpoint(e.to_string()))?;

    let (layout, _) = build_layout(&manifest.config);
    let mut store = ParamStore::<f32>::zeros(layout.clone());
    for entry in &manifest.arrays {
        let p = layout.by_name(&entry.name).ok_or_else(|| {
            WamError::Checkpoint(format!("unknown array {} for this config", entry.name))
        })?;
        let spec = layout.spec(p).clone();
        if spec.shape != entry.shape {
            return Err(WamError::Checkpoint(format!(
                "array {} has shape {:?}, layout wants {:?}",
                entry.name, entry.shape, spec.shape
            )));
        }
        let mut bytes = vec![0u8; spec.len * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| WamError::Checkpoint(format!("truncated in array {}", entry.name)))?;
        if crc32fast::hash(&bytes) != entry.crc32 {
            return Err(WamError::ArrayChecksum {
                name: entry.name.clone(),
            });
        }
        for (i, c) in bytes.chunks_exact(4).enumerate() {
            store.data[spec.offset + i] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
    }
    Ok(Checkpoint {
        config: manifest.config,
        norm: manifest.norm,
        seed: manifest.seed,
        step: manifest.step,
        store,
    })
}
