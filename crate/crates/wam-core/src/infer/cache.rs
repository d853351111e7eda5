//! KV-cache lifecycle: text prefill, clean-chunk prefill, sliding-window
//! eviction.
//!
//! The cache holds per-layer key/value rows for the text span and for clean
//! video chunks only — never noisy tokens, never action or state tokens.
//! Context is capped at `M - 1` chunks (the deepest clean context seen in
//! training); the oldest chunk is evicted beyond the latent-frame budget.

use ndarray::Array2;

use super::InferError;
use crate::model::forward::{
    block_forward_cached, clean_video_token_matrix, text_token_matrix, timestep_embedding_rows,
};
use crate::model::{Cond, ModelConfig, ParamStore, WamHandles};
use crate::num::Scalar;

#[derive(Debug, Clone)]
pub struct LayerKv<T> {
    pub k: Array2<T>,
    pub v: Array2<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CachedChunk {
    pub start_frame: usize,
    pub frames: usize,
    pub tokens: usize,
}

/// Cached clean context for one conditioning (text + clean video chunks).
#[derive(Debug, Clone)]
pub struct KvCacheState<T> {
    pub layers: Vec<LayerKv<T>>,
    pub cond: Cond,
    text_len: usize,
    chunks: Vec<CachedChunk>,
    /// Latent-frame budget for cached chunks.
    budget_frames: usize,
}

impl<T: Scalar> KvCacheState<T> {
    /// Initialize with the text span prefilled for `cond`.
    pub fn new(
        store: &ParamStore<T>,
        handles: &WamHandles,
        cfg: &ModelConfig,
        cond: Cond,
    ) -> Self {
        let mut x = text_token_matrix(store, handles, cfg, cond);
        let t_rows = vec![T::one(); x.nrows()];
        let temb = timestep_embedding_rows(store, handles, cfg, &t_rows);
        let mut layers = Vec::with_capacity(cfg.layers);
        for blk in &handles.blocks {
            let (k, v) = block_forward_cached(store, blk, cfg, &mut x, &temb, None, None);
            layers.push(LayerKv { k, v });
        }
        Self {
            layers,
            cond,
            text_len: cfg.n_text,
            chunks: Vec::new(),
            budget_frames: cfg.max_cached_frames(),
        }
    }

    pub fn context_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn context_frames(&self) -> usize {
        self.chunks.iter().map(|c| c.frames).sum()
    }

    pub fn chunks(&self) -> &[CachedChunk] {
        &self.chunks
    }

    /// Latent-frame index right after the cached context.
    pub fn next_start_frame(&self) -> usize {
        self.chunks
            .last()
            .map(|c| c.start_frame + c.frames)
            .unwrap_or(0)
    }

    /// Append one clean chunk of `latents` (`frames * tokens_per_frame`
    /// rows) observed at `start_frame`, then evict beyond the budget.
    pub fn prefill(
        &mut self,
        store: &ParamStore<T>,
        handles: &WamHandles,
        cfg: &ModelConfig,
        latents: &Array2<T>,
        start_frame: usize,
    ) -> Result<(), InferError> {
        let n_tok = cfg.tokens_per_frame();
        if latents.nrows() % n_tok != 0
            || latents.nrows() == 0
            || latents.nrows() / n_tok > cfg.k
            || latents.ncols() != cfg.d_patch()
        {
            return Err(InferError::LatentShape {
                rows: latents.nrows(),
                cols: latents.ncols(),
            });
        }
        let frames = latents.nrows() / n_tok;

        let mut x = clean_video_token_matrix(store, handles, cfg, latents, start_frame);
        let t_rows = vec![T::one(); x.nrows()];
        let temb = timestep_embedding_rows(store, handles, cfg, &t_rows);
        for (li, blk) in handles.blocks.iter().enumerate() {
            let layer = &self.layers[li];
            let (k_new, v_new) = block_forward_cached(
                store,
                blk,
                cfg,
                &mut x,
                &temb,
                Some(&layer.k),
                Some(&layer.v),
            );
            let layer = &mut self.layers[li];
            layer.k = ndarray::concatenate(ndarray::Axis(0), &[layer.k.view(), k_new.view()])
                .expect("widths match");
            layer.v = ndarray::concatenate(ndarray::Axis(0), &[layer.v.view(), v_new.view()])
                .expect("widths match");
        }
        self.chunks.push(CachedChunk {
            start_frame,
            frames,
            tokens: latents.nrows(),
        });
        self.evict();
        Ok(())
    }

    fn evict(&mut self) {
        while self.context_frames() > self.budget_frames && self.chunks.len() > 1 {
            let old = self.chunks.remove(0);
            for layer in &mut self.layers {
                let keep_rows: Vec<usize> = (0..layer.k.nrows())
                    .filter(|&r| r < self.text_len || r >= self.text_len + old.tokens)
                    .collect();
                layer.k = layer.k.select(ndarray::Axis(0), &keep_rows);
                layer.v = layer.v.select(ndarray::Axis(0), &keep_rows);
            }
        }
    }
}
