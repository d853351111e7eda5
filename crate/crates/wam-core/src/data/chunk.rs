//! Slicing a trajectory into the chunked training layout.
//!
//! A chunk is `K` consecutive latent frames plus the `H = K * r` actions
//! covering the same wall-clock span (each frame's trailing control
//! interval). The final frame of a record anchors the last interval and is
//! therefore never itself chunkable: `T_v` frames offer `T_v - 1` latent
//! frames of chunkable material.

use ndarray::{Array1, Array2};

use super::{DataError, NormStats, TrajectoryRecord};
use crate::env::Instruction;
use crate::model::patchify_frame;
use crate::num::Scalar;

/// One chunk of clean training material.
#[derive(Debug, Clone)]
pub struct ChunkData<T> {
    /// Clean video latents, `(K * tokens_per_frame, d_patch)`.
    pub video: Array2<T>,
    /// Clean normalized actions, `(H, action_dim)`.
    pub actions: Array2<T>,
    /// Raw proprioception at the chunk's first control tick.
    pub state: Array1<T>,
}

/// A trajectory window sliced into `M_eff <= M` contiguous chunks.
#[derive(Debug, Clone)]
pub struct ChunkBatch<T> {
    pub chunks: Vec<ChunkData<T>>,
    /// Latent-frame index of the first chunk's first frame.
    pub start_latent_frame: usize,
    pub instruction: Instruction,
    pub k: usize,
    pub h: usize,
}

impl<T> ChunkBatch<T> {
    pub fn m_eff(&self) -> usize {
        self.chunks.len()
    }
}

/// Start indices `l` that leave at least one full chunk of frames *and*
/// actions.
pub fn valid_chunk_starts(traj: &TrajectoryRecord, k: usize) -> std::ops::RangeInclusive<usize> {
    let usable = traj.frames.len().saturating_sub(1);
    0..=usable.saturating_sub(k)
}

/// Slice `M_eff = min(M, floor((T_v - 1 - l) / K))` chunks starting at
/// latent frame `l`, normalizing actions with `norm`.
pub fn chunk_trajectory<T: Scalar>(
    traj: &TrajectoryRecord,
    k: usize,
    m: usize,
    norm: &NormStats,
    l: usize,
    patch: usize,
) -> Result<ChunkBatch<T>, DataError> {
    traj.validate_alignment()?;
    let t_v = traj.frames.len();
    let usable = t_v.saturating_sub(1).saturating_sub(l);
    let m_eff = m.min(usable / k);
    if m_eff == 0 {
        return Err(DataError::TooShortToChunk {
            available: usable,
            start: l,
            k,
        });
    }
    let r = traj.ticks_per_frame();
    let h = k * r;

    let mut chunks = Vec::with_capacity(m_eff);
    for j in 0..m_eff {
        let f0 = l + j * k;
        let mut video_rows: Option<Array2<T>> = None;
        for f in f0..f0 + k {
            let toks = patchify_frame::<T>(&traj.frames[f], patch);
            video_rows = Some(match video_rows {
                None => toks,
                Some(acc) => ndarray::concatenate(ndarray::Axis(0), &[acc.view(), toks.view()])
                    .expect("token widths match"),
            });
        }
        let t0 = f0 * r;
        let mut actions = Array2::<T>::zeros((h, norm.dim()));
        for (row, tick) in (t0..t0 + h).enumerate() {
            let raw = traj.actions[tick].as_array();
            for d in 0..norm.dim() {
                actions[[row, d]] = T::of(norm.normalize(d, raw[d]) as f64);
            }
        }
        let q = traj.states[t0];
        let state = Array1::from_iter(q.iter().map(|&v| T::of(v as f64)));
        chunks.push(ChunkData {
            video: video_rows.unwrap(),
            actions,
            state,
        });
    }

    Ok(ChunkBatch {
        chunks,
        start_latent_frame: l,
        instruction: traj.instruction_at_tick((l * r) as u64),
        k,
        h,
    })
}
