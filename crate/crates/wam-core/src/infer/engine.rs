//! The inference engine: dual conditional/unconditional caches, frame
//! injection on the chunk grid, and chunk prediction.
//!
//! Ground-truth injection is the default: after a chunk executes, the real
//! post-execution frames enter the cache and the model's own predictions
//! are discarded. The open-loop mode (used by the drift experiment) feeds
//! the predicted latents back instead.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use super::cache::KvCacheState;
use super::denoise::{denoise_chunk, ChunkPrediction, DenoiseConfig};
use super::InferError;
use crate::env::{Frame, Instruction};
use crate::model::checkpoint::Checkpoint;
use crate::model::{build_layout, patchify_frame, Cond, ModelConfig, ParamStore, WamHandles};
use crate::data::NormStats;
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionMode {
    /// Real observations replace predictions in the cache (the default).
    GroundTruth,
    /// Test-only open-loop mode: the model's predicted latents enter the
    /// cache; real frames are ignored after bootstrap.
    Predicted,
}

pub struct Engine<T: Scalar> {
    pub store: ParamStore<T>,
    pub handles: WamHandles,
    pub model_cfg: ModelConfig,
    pub norm: NormStats,
    pub denoise_cfg: DenoiseConfig,
    pub instruction: Instruction,
    pub injection: InjectionMode,
    cond_cache: KvCacheState<T>,
    uncond_cache: Option<KvCacheState<T>>,
    /// Frames observed but not yet grouped into a full cached chunk.
    pending: Vec<(usize, Array2<T>)>,
    /// Latest predicted latents per frame index (for open-loop injection).
    predicted: BTreeMap<usize, Array2<T>>,
    next_frame: usize,
    pub total_network_evals: usize,
    pub total_chunks: usize,
}

impl<T: Scalar> Engine<T> {
    pub fn new(
        store: ParamStore<T>,
        handles: WamHandles,
        model_cfg: ModelConfig,
        norm: NormStats,
        instruction: Instruction,
        denoise_cfg: DenoiseConfig,
    ) -> Self {
        let cond_cache = KvCacheState::new(&store, &handles, &model_cfg, Cond::Instr(instruction));
        let uncond_cache = denoise_cfg
            .cfg_enabled
            .then(|| KvCacheState::new(&store, &handles, &model_cfg, Cond::Null));
        Self {
            store,
            handles,
            model_cfg,
            norm,
            denoise_cfg,
            instruction,
            injection: InjectionMode::GroundTruth,
            cond_cache,
            uncond_cache,
            pending: Vec::new(),
            predicted: BTreeMap::new(),
            next_frame: 0,
            total_network_evals: 0,
            total_chunks: 0,
        }
    }

    pub fn from_checkpoint(
        ck: &Checkpoint,
        instruction: Instruction,
        denoise_cfg: DenoiseConfig,
    ) -> Self {
        let (_, handles) = build_layout(&ck.config);
        let store: ParamStore<T> = ck.store.cast();
        Self::new(
            store,
            handles,
            ck.config.clone(),
            ck.norm.clone(),
            instruction,
            denoise_cfg,
        )
    }

    pub fn context_chunks(&self) -> usize {
        self.cond_cache.context_chunks()
    }

    pub fn context_frames(&self) -> usize {
        self.cond_cache.context_frames()
    }

    /// Frame index the next prediction will start at.
    pub fn next_prediction_frame(&self) -> usize {
        self.cond_cache.next_start_frame()
    }

    fn prefill_both(&mut self, latents: &Array2<T>, start_frame: usize) -> Result<(), InferError> {
        self.cond_cache.prefill(
            &self.store,
            &self.handles,
            &self.model_cfg,
            latents,
            start_frame,
        )?;
        if let Some(un) = &mut self.uncond_cache {
            un.prefill(&self.store, &self.handles, &self.model_cfg, latents, start_frame)?;
        }
        Ok(())
    }

    /// Observe the frame at the next frame index. The first frame enters the
    /// cache immediately as a partial bootstrap chunk; later frames are
    /// grouped into full chunks of K before prefilling. In open-loop mode
    /// the model's own predicted latents replace the observation.
    pub fn observe_frame(&mut self, frame: &Frame) -> Result<(), InferError> {
        let idx = self.next_frame;
        self.next_frame += 1;
        let real = patchify_frame::<T>(frame, self.model_cfg.patch);
        let latents = if self.injection == InjectionMode::Predicted && idx > 0 {
            self.predicted.get(&idx).cloned().unwrap_or(real)
        } else {
            real
        };
        self.pending.push((idx, latents));

        if self.context_chunks() == 0 && !self.pending.is_empty() {
            // Bootstrap: a single-frame partial chunk is allowed.
            let (i0, l0) = self.pending.remove(0);
            self.prefill_both(&l0.clone(), i0)?;
        }
        while self.pending.len() >= self.model_cfg.k {
            let group: Vec<(usize, Array2<T>)> =
                self.pending.drain(0..self.model_cfg.k).collect();
            let start = group[0].0;
            let views: Vec<_> = group.iter().map(|(_, l)| l.view()).collect();
            let stacked = ndarray::concatenate(ndarray::Axis(0), &views).expect("same widths");
            self.prefill_both(&stacked, start)?;
        }
        Ok(())
    }

    /// Denoise the next chunk after the cached context.
    pub fn predict_chunk<R: Rng + ?Sized>(
        &mut self,
        q: &[f32],
        rng: &mut R,
    ) -> Result<ChunkPrediction, InferError> {
        let pred = denoise_chunk(
            &self.store,
            &self.handles,
            &self.model_cfg,
            &self.norm,
            &self.cond_cache,
            self.uncond_cache.as_ref(),
            q,
            &self.denoise_cfg,
            rng,
        )?;
        self.total_network_evals += pred.diagnostics.network_evals;
        self.total_chunks += 1;
        // Remember predicted latents for the open-loop injection mode.
        let n_tok = self.model_cfg.tokens_per_frame();
        for f in 0..self.model_cfg.k {
            let rows = pred
                .latents
                .slice(ndarray::s![f * n_tok..(f + 1) * n_tok, ..])
                .mapv(|v| T::of(v as f64));
            self.predicted.insert(pred.start_frame + f, rows);
        }
        // Keep the map small; anything older than the cache window is dead.
        let horizon = pred.start_frame.saturating_sub(4 * self.model_cfg.k);
        self.predicted = self.predicted.split_off(&horizon);
        Ok(pred)
    }
}


impl<T: Scalar> crate::exec::ChunkSource for Engine<T> {
    fn observe(&mut self, frame_index: usize, frame: &Frame) -> Result<(), InferError> {
        debug_assert_eq!(frame_index, self.next_frame, "frames must arrive in order");
        self.observe_frame(frame)
    }

    fn predict(
        &mut self,
        proprio: [f32; 3],
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<crate::exec::PredictedChunk, InferError> {
        let pred = self.predict_chunk(&proprio, rng)?;
        Ok(crate::exec::PredictedChunk {
            predicted_frames: pred
                .frames
                .iter()
                .enumerate()
                .map(|(i, f)| (pred.start_frame + i, f.clone()))
                .collect(),
            actions: pred.actions,
            network_evals: pred.diagnostics.network_evals,
            wall_s: pred.diagnostics.wall_s,
        })
    }

    fn horizon(&self) -> usize {
        self.model_cfg.h
    }
}
