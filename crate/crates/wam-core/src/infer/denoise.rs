//! Joint chunk denoising: Euler integration of the learned velocity field
//! with classifier-free guidance, cosine-gated velocity reuse, the
//! single-step flash mode, and action smoothing.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cache::KvCacheState;
use super::smooth::smooth_actions;
use super::InferError;
use crate::data::NormStats;
use crate::env::{Action, Frame};
use crate::model::forward::{
    block_forward_cached, heads_on_noisy_group, noisy_group_token_matrix,
    timestep_embedding_rows,
};
use crate::model::{unpatchify_frame, ModelConfig, NoisyChunkInput, ParamStore, WamHandles};
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CachePolicy {
    pub enabled: bool,
    /// Cosine-similarity threshold between successive evaluated velocities.
    pub tau: f64,
    /// Maximum consecutive reuses after an evaluation.
    pub window: usize,
}

impl Default for CachePolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            tau: 0.99,
            window: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothConfig {
    pub enabled: bool,
    pub window: usize,
    pub polyorder: usize,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window: 5,
            polyorder: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseConfig {
    /// Euler steps over t in [0, 1].
    pub steps: usize,
    pub cfg_enabled: bool,
    pub cfg_scale: f64,
    pub cache_policy: CachePolicy,
    /// Single-step mode: one evaluation with the video timestep pinned at 0,
    /// integrated across the full interval.
    pub flash: bool,
    pub smoothing: SmoothConfig,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            steps: 16,
            cfg_enabled: true,
            cfg_scale: 3.0,
            cache_policy: CachePolicy::default(),
            flash: false,
            smoothing: SmoothConfig::default(),
        }
    }
}

impl DenoiseConfig {
    pub fn effective_steps(&self) -> usize {
        if self.flash {
            1
        } else {
            self.steps.max(1)
        }
    }

    pub fn validate(&self) -> Result<(), InferError> {
        if self.steps == 0 {
            return Err(InferError::BadConfig("steps must be >= 1".into()));
        }
        if self.cache_policy.enabled && !(self.cache_policy.tau <= 1.0) {
            return Err(InferError::BadConfig(
                "cache policy tau must be <= 1 when enabled".into(),
            ));
        }
        if self.smoothing.enabled
            && (self.smoothing.window % 2 == 0 || self.smoothing.polyorder >= self.smoothing.window)
        {
            return Err(InferError::BadConfig(
                "smoothing window must be odd and exceed the polynomial order".into(),
            ));
        }
        Ok(())
    }
}

/// Per-chunk inference diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChunkDiagnostics {
    /// Network forward passes (conditional and unconditional counted
    /// separately; prefills excluded).
    pub network_evals: usize,
    /// Euler steps that ran the network (vs. reused a cached velocity).
    pub evaluated_steps: usize,
    pub reused_steps: usize,
    /// Cosine similarity between successive evaluated velocities.
    pub step_cosines: Vec<f64>,
    pub wall_s: f64,
}

/// Output of denoising one chunk.
#[derive(Debug, Clone)]
pub struct ChunkPrediction {
    /// Predicted clean latents, `(K * tokens_per_frame, d_patch)`. Returned
    /// for logging and the drift experiment; never entered into the cache.
    pub latents: Array2<f32>,
    /// Predicted frames decoded from the latents.
    pub frames: Vec<Frame>,
    /// Denormalized, smoothed actions ready for execution.
    pub actions: Vec<Action>,
    /// Latent-frame index the chunk starts at.
    pub start_frame: usize,
    pub diagnostics: ChunkDiagnostics,
}

/// Decide whether an Euler step may reuse the previously evaluated velocity.
///
/// Steps 0 and 1 always evaluate (two velocities are needed for a cosine);
/// afterwards a step reuses iff the last two evaluated velocities have
/// cosine above `tau` and fewer than `window` consecutive reuses have
/// happened since the last evaluation.
pub fn cache_decide(
    step: usize,
    last_cosine: Option<f64>,
    consecutive_reuses: usize,
    policy: &CachePolicy,
) -> bool {
    if !policy.enabled || step < 2 {
        return false;
    }
    match last_cosine {
        Some(c) => c > policy.tau && consecutive_reuses < policy.window,
        None => false,
    }
}

/// Standard classifier-free guidance combination.
pub fn cfg_combine<T: Scalar>(v_cond: &Array2<T>, v_uncond: &Array2<T>, scale: T) -> Array2<T> {
    let mut out = v_cond - v_uncond;
    out.mapv_inplace(|d| d * scale);
    out + v_uncond
}

fn cosine<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.cast_f64(), y.cast_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// One joint network evaluation of the noisy group against a cache.
fn evaluate_velocity<T: Scalar>(
    store: &ParamStore<T>,
    handles: &WamHandles,
    cfg: &ModelConfig,
    cache: &KvCacheState<T>,
    chunk: &NoisyChunkInput<T>,
) -> (Array2<T>, Array2<T>) {
    let (mut x, t_rows) = noisy_group_token_matrix(store, handles, cfg, chunk);
    let temb = timestep_embedding_rows(store, handles, cfg, &t_rows);
    for (li, blk) in handles.blocks.iter().enumerate() {
        let layer = &cache.layers[li];
        let _ = block_forward_cached(
            store,
            blk,
            cfg,
            &mut x,
            &temb,
            Some(&layer.k),
            Some(&layer.v),
        );
    }
    heads_on_noisy_group(store, handles, cfg, &x, &temb, &chunk.video)
}

/// Denoise one chunk with Euler steps `x_{t+dt} = x_t + dt * v(x_t, t)`,
/// `t_i = i / N`. Returns the prediction and diagnostics; the caller owns
/// cache updates (ground-truth injection happens elsewhere).
#[allow(clippy::too_many_arguments)]
pub fn denoise_chunk<T: Scalar, R: Rng + ?Sized>(
    store: &ParamStore<T>,
    handles: &WamHandles,
    cfg: &ModelConfig,
    norm: &NormStats,
    cond_cache: &KvCacheState<T>,
    uncond_cache: Option<&KvCacheState<T>>,
    q: &[f32],
    config: &DenoiseConfig,
    rng: &mut R,
) -> Result<ChunkPrediction, InferError> {
    config.validate()?;
    if cond_cache.context_chunks() == 0 {
        return Err(InferError::EmptyCache);
    }
    let start = std::time::Instant::now();
    let n = config.effective_steps();
    let vtok = cfg.video_tokens_per_chunk();
    let dp = cfg.d_patch();
    let start_frame = cond_cache.next_start_frame();

    let mut z = Array2::<T>::from_shape_fn((vtok, dp), |_| T::standard_normal(rng));
    let mut a = Array2::<T>::from_shape_fn((cfg.h, cfg.action_dim), |_| T::standard_normal(rng));
    let state = Array1::from_iter(q.iter().map(|&v| T::of(v as f64)));

    let mut diagnostics = ChunkDiagnostics {
        network_evals: 0,
        evaluated_steps: 0,
        reused_steps: 0,
        step_cosines: Vec::new(),
        wall_s: 0.0,
    };
    let mut last_v: Option<(Array2<T>, Array2<T>)> = None;
    let mut prev_flat: Option<Vec<T>> = None;
    let mut last_cosine: Option<f64> = None;
    let mut consecutive_reuses = 0usize;
    let dt = T::of(1.0 / n as f64);

    for i in 0..n {
        let t = T::of(i as f64 / n as f64);
        // Flash mode pins the video timestep at pure noise for its single
        // full-interval step.
        let t_video = if config.flash { T::zero() } else { t };
        let reuse = cache_decide(i, last_cosine, consecutive_reuses, &config.cache_policy)
            && last_v.is_some();
        let (vz, va) = if reuse {
            consecutive_reuses += 1;
            diagnostics.reused_steps += 1;
            last_v.clone().expect("reuse requires a stored velocity")
        } else {
            let chunk = NoisyChunkInput {
                video: z.clone(),
                state: state.clone(),
                actions: a.clone(),
                t_video,
                t_action: t,
                start_frame,
            };
            let (vz_c, va_c) = evaluate_velocity(store, handles, cfg, cond_cache, &chunk);
            diagnostics.network_evals += 1;
            let (vz, va) = if config.cfg_enabled {
                let uncache = uncond_cache.ok_or(InferError::MissingUncondCache)?;
                let (vz_u, va_u) = evaluate_velocity(store, handles, cfg, uncache, &chunk);
                diagnostics.network_evals += 1;
                let s = T::of(config.cfg_scale);
                (cfg_combine(&vz_c, &vz_u, s), cfg_combine(&va_c, &va_u, s))
            } else {
                (vz_c, va_c)
            };
            if !vz.sum().is_finite() || !va.sum().is_finite() {
                return Err(InferError::NonFiniteVelocity { step: i });
            }
            let flat: Vec<T> = vz.iter().chain(va.iter()).cloned().collect();
            if let Some(prev) = &prev_flat {
                let c = cosine(prev, &flat);
                diagnostics.step_cosines.push(c);
                last_cosine = Some(c);
            }
            prev_flat = Some(flat);
            consecutive_reuses = 0;
            diagnostics.evaluated_steps += 1;
            last_v = Some((vz.clone(), va.clone()));
            (vz, va)
        };
        z.zip_mut_with(&vz, |x, &v| *x = *x + dt * v);
        a.zip_mut_with(&va, |x, &v| *x = *x + dt * v);
    }

    // Decode actions: clip to the normalized box, denormalize, smooth.
    let mut raw = Array2::<f32>::zeros((cfg.h, cfg.action_dim));
    for i in 0..cfg.h {
        for d in 0..cfg.action_dim {
            let zn = a[[i, d]].cast_f64().clamp(-1.0, 1.0) as f32;
            raw[[i, d]] = norm.denormalize(d, zn);
        }
    }
    let smoothed = if config.smoothing.enabled {
        let s = smooth_actions(&raw, config.smoothing.window, config.smoothing.polyorder)?;
        // Smoothing may overshoot slightly; keep within the denormalization
        // bounds.
        let mut s = s;
        for d in 0..cfg.action_dim {
            for i in 0..cfg.h {
                s[[i, d]] = s[[i, d]].clamp(norm.lo[d], norm.hi[d]);
            }
        }
        s
    } else {
        raw
    };
    let actions: Vec<Action> = (0..cfg.h)
        .map(|i| Action::new(smoothed[[i, 0]], smoothed[[i, 1]], smoothed[[i, 2]]))
        .collect();

    // Decode predicted frames for logging; never cached.
    let z32: Array2<f32> = z.mapv(|v| v.cast_f64() as f32);
    let n_tok = cfg.tokens_per_frame();
    let mut frames = Vec::with_capacity(cfg.k);
    for f in 0..cfg.k {
        let toks = z32.slice(ndarray::s![f * n_tok..(f + 1) * n_tok, ..]).to_owned();
        frames.push(
            unpatchify_frame(&toks, cfg.frame_w, cfg.frame_h, cfg.patch)
                .map_err(InferError::Model)?,
        );
    }

    diagnostics.wall_s = start.elapsed().as_secs_f64();
    Ok(ChunkPrediction {
        latents: z32,
        frames,
        actions,
        start_frame,
        diagnostics,
    })
}
