//! A desk-scale world-action-model pipeline: joint video-action flow
//! matching over a deterministic 2D push-world, trained chunk-autoregressively
//! with teacher forcing and executed closed-loop through a KV-cached
//! denoising engine under a simulated real-time latency contract.
//!
//! Modules follow the pipeline: [`env`] generates and simulates the world,
//! [`data`] persists and slices trajectories, [`model`] is the joint
//! diffusion transformer, [`train`] the flow-matching trainer, [`infer`] the
//! KV-cached denoiser, [`exec`] the asynchronous closed-loop executor, and
//! [`eval`] the benchmarking harness.
//!
//! The numeric core is generic over [`num::Scalar`] (`f32` or `f64`); the
//! aliases below pin the everyday `f32` instantiations.

pub mod config;
pub mod data;
pub mod env;
pub mod eval;
pub mod exec;
pub mod infer;
pub mod model;
pub mod num;
pub mod train;

/// Default scalar type for training and inference.
pub type Real = f32;

pub type ParamStoreF32 = model::ParamStore<Real>;
pub type WamInputF32 = model::WamInput<Real>;
pub type ChunkBatchF32 = data::ChunkBatch<Real>;
