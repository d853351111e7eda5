//! Dataset directory: trajectory files plus an `index.json` carrying the
//! file list and the normalization statistics.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_trajectory, DataError, NormStats, TrajectoryRecord};
use crate::env::EnvConfig;

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub path: String,
    pub seed: u64,
    pub mode: String,
    /// When set, this episode contributes only the video prediction
    /// objective during training; its action labels are ignored.
    #[serde(default)]
    pub video_only: bool,
    pub t_v: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub files: Vec<DatasetEntry>,
    pub norm: NormStats,
    pub env: EnvConfig,
}

/// An eagerly loaded dataset. Desk-scale corpora fit in memory comfortably.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub index: DatasetIndex,
    pub records: Vec<TrajectoryRecord>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self, DataError> {
        let raw = fs::read(root.join(INDEX_FILE))
            .map_err(|e| DataError::Index(format!("{}: {e}", root.display())))?;
        let index: DatasetIndex =
            serde_json::from_slice(&raw).map_err(|e| DataError::Index(e.to_string()))?;
        let mut records = Vec::with_capacity(index.files.len());
        for entry in &index.files {
            records.push(read_trajectory(&root.join(&entry.path))?);
        }
        if records.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        Ok(Self {
            root: root.to_path_buf(),
            index,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_video_only(&self, i: usize) -> bool {
        self.index.files[i].video_only
    }
}

/// Write a dataset directory from in-memory records.
pub fn write_dataset(
    root: &Path,
    records: &[(TrajectoryRecord, bool)],
    norm: NormStats,
    env: EnvConfig,
    mode: &str,
) -> Result<(), DataError> {
    fs::create_dir_all(root)?;
    let mut files = Vec::new();
    for (i, (rec, video_only)) in records.iter().enumerate() {
        let name = format!("episode_{i:05}.wamt");
        super::write_trajectory(&root.join(&name), rec)?;
        files.push(DatasetEntry {
            path: name,
            seed: rec.seed,
            mode: mode.to_string(),
            video_only: *video_only,
            t_v: rec.frames.len(),
        });
    }
    let index = DatasetIndex { files, norm, env };
    let json = serde_json::to_vec_pretty(&index).map_err(|e| DataError::Index(e.to_string()))?;
    fs::write(root.join(INDEX_FILE), json)?;
    Ok(())
}
