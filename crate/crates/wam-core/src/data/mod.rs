//! Trajectory persistence, idle filtering, normalization, and chunk slicing.

mod chunk;
mod dataset;
mod filter;
mod norm;
mod trajectory;

pub use chunk::{chunk_trajectory, valid_chunk_starts, ChunkBatch, ChunkData};
pub use dataset::{write_dataset, Dataset, DatasetEntry, DatasetIndex, INDEX_FILE};
pub use filter::filter_idle;
pub use norm::{compute_norm_stats, NormStats};
pub use trajectory::{read_trajectory, write_trajectory, SegmentBoundary, TrajectoryRecord};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic: not a trajectory file")]
    BadMagic,
    #[error("unsupported trajectory file version {found}")]
    Version { found: u16 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("file truncated while reading {array}")]
    Truncated { array: &'static str },
    #[error("payload checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("trajectory too short after idle filtering: {frames} latent frames < {min_frames} required")]
    TooShortAfterFilter { frames: usize, min_frames: usize },
    #[error("trajectory too short to slice even one chunk ({available} latent frames from start {start}, chunk is {k})")]
    TooShortToChunk {
        available: usize,
        start: usize,
        k: usize,
    },
    #[error("alignment invariant violated: {actions} actions vs {frames} frames at r={r}")]
    Misaligned {
        actions: usize,
        frames: usize,
        r: usize,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset index error: {0}")]
    Index(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
