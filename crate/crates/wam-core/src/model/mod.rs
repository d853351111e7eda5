//! The chunk-causal joint video-action diffusion transformer: token layout,
//! attention mask, encoders/decoders, and velocity prediction.

pub mod checkpoint;
mod codec;
pub mod forward;
pub mod layout;
mod mask;
pub mod net;
pub mod params;

pub use codec::{frame_mse, patch_dim, patchify_frame, tokens_per_frame, unpatchify_frame};
pub use forward::{
    backward_batch, forward_batch, BatchTrace, CleanChunkInput, Cond, NoisyChunkInput, WamInput,
    WamOutput,
};
pub use layout::{spans_may_attend, SequenceLayout, Span, SpanKind};
pub use mask::build_attention_mask;
pub use params::{build_layout, init_params, ParamLayout, ParamStore, WamHandles, P};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{N_COLORS, N_REGIONS, N_VERBS};

#[derive(Debug, Error)]
pub enum WamError {
    #[error("shape mismatch for {what}: got {got}, want {want}")]
    Shape {
        what: &'static str,
        got: String,
        want: String,
    },
    #[error("non-finite activation in transformer block {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("array {name} failed its checksum")]
    ArrayChecksum { name: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture and chunking constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Transformer width.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Learned text tokens: verb, color, region, register.
    pub n_text: usize,
    /// Sinusoidal timestep feature dimension.
    pub time_dim: usize,
    pub mlp_ratio: usize,
    /// Pixel patch edge for the fixed codec.
    pub patch: usize,
    pub frame_w: usize,
    pub frame_h: usize,
    /// Latent frames per chunk (K).
    pub k: usize,
    /// Maximum chunks per training window (M).
    pub m: usize,
    /// Actions per chunk (H = K * control-ticks-per-frame).
    pub h: usize,
    pub action_dim: usize,
    pub state_dim: usize,
    pub n_verbs: usize,
    pub n_colors: usize,
    pub n_regions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 128,
            layers: 4,
            heads: 4,
            n_text: 4,
            time_dim: 64,
            mlp_ratio: 4,
            patch: 8,
            frame_w: 32,
            frame_h: 32,
            k: 2,
            m: 4,
            h: 4,
            action_dim: 3,
            state_dim: 3,
            n_verbs: N_VERBS,
            n_colors: N_COLORS,
            n_regions: N_REGIONS,
        }
    }
}

impl ModelConfig {
    pub fn tokens_per_frame(&self) -> usize {
        tokens_per_frame(self.frame_w, self.frame_h, self.patch)
    }

    pub fn d_patch(&self) -> usize {
        patch_dim(self.patch)
    }

    pub fn video_tokens_per_chunk(&self) -> usize {
        self.k * self.tokens_per_frame()
    }

    /// Clean chunks an inference cache may hold: matches the deepest clean
    /// context any noisy chunk sees during training.
    pub fn max_cached_chunks(&self) -> usize {
        self.m.saturating_sub(1).max(1)
    }

    /// Cached latent-frame budget backing `max_cached_chunks`.
    pub fn max_cached_frames(&self) -> usize {
        self.max_cached_chunks() * self.k
    }

    pub fn head_dim(&self) -> usize {
        assert!(self.width % self.heads == 0);
        self.width / self.heads
    }

    pub fn training_layout(&self, m_eff: usize) -> SequenceLayout {
        SequenceLayout::training(m_eff, self.video_tokens_per_chunk(), self.h, self.n_text)
    }
}
