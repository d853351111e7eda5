//! KV-cached joint denoising: cache lifecycle, classifier-free guidance,
//! velocity reuse, the Euler solver, single-step flash inference, action
//! smoothing, and ground-truth injection.

mod cache;
mod denoise;
mod engine;
mod smooth;

pub use cache::{CachedChunk, KvCacheState, LayerKv};
pub use denoise::{
    cache_decide, cfg_combine, denoise_chunk, CachePolicy, ChunkDiagnostics, ChunkPrediction,
    DenoiseConfig, SmoothConfig,
};
pub use engine::{Engine, InjectionMode};
pub use smooth::{cubic_upsample_2x, savgol_coefficients, savgol_filter, smooth_actions};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferError {
    #[error(transparent)]
    Model(#[from] crate::model::WamError),
    #[error("latent block has bad shape ({rows}, {cols})")]
    LatentShape { rows: usize, cols: usize },
    #[error("denoising requires at least one cached clean chunk")]
    EmptyCache,
    #[error("classifier-free guidance enabled but no unconditional cache present")]
    MissingUncondCache,
    #[error("non-finite velocity at denoising step {step}")]
    NonFiniteVelocity { step: usize },
    #[error("invalid denoise configuration: {0}")]
    BadConfig(String),
    #[error("smoothing window {window} must be odd and exceed polyorder {polyorder}")]
    SmoothingConfig { window: usize, polyorder: usize },
    #[error("smoothing window {window} too large for upsampled length {upsampled}")]
    SmoothingWindowTooLarge { window: usize, upsampled: usize },
}
