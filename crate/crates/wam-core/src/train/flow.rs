//! Flow-matching primitives: linear interpolation, the velocity target, and
//! the chunk-weighted loss.
//!
//! Convention: `t = 1` is clean data, `t = 0` is pure noise, so
//! `x_t = t * clean + (1 - t) * noise` and the regression target is
//! `v = clean - noise`, the time derivative of the interpolation.

use ndarray::Array2;

use crate::model::WamError;
use crate::num::Scalar;

fn check_shapes<T>(a: &Array2<T>, b: &Array2<T>, what: &'static str) -> Result<(), WamError> {
    if a.dim() != b.dim() {
        return Err(WamError::Shape {
            what,
            got: format!("{:?}", b.dim()),
            want: format!("{:?}", a.dim()),
        });
    }
    Ok(())
}

/// `t * clean + (1 - t) * noise`, elementwise.
pub fn interpolate<T: Scalar>(
    clean: &Array2<T>,
    noise: &Array2<T>,
    t: T,
) -> Result<Array2<T>, WamError> {
    check_shapes(clean, noise, "interpolate operands")?;
    let mut out = clean.mapv(|c| c * t);
    let omt = T::one() - t;
    out.zip_mut_with(noise, |o, &n| *o = *o + n * omt);
    Ok(out)
}

/// `v = clean - noise`.
pub fn velocity_target<T: Scalar>(
    clean: &Array2<T>,
    noise: &Array2<T>,
) -> Result<Array2<T>, WamError> {
    check_shapes(clean, noise, "velocity operands")?;
    Ok(clean - noise)
}

/// Loss contributions of one chunk: predictions and targets for both
/// modalities, the chunk weight `w(t_k)`, and whether action terms are
/// excluded (video-only objective).
#[derive(Debug, Clone)]
pub struct ChunkLossTerm<T> {
    pub pred_video: Array2<T>,
    pub target_video: Array2<T>,
    pub pred_action: Array2<T>,
    pub target_action: Array2<T>,
    pub weight: T,
    pub video_only: bool,
}

fn sq_err_mean<T: Scalar>(pred: &Array2<T>, tgt: &Array2<T>) -> T {
    let sum = pred
        .iter()
        .zip(tgt.iter())
        .map(|(&p, &t)| {
            let d = p - t;
            d * d
        })
        .fold(T::zero(), |a, b| a + b);
    sum / T::of(pred.len() as f64)
}

/// `(1 / n_chunks) * sum_k w_k * chunk_mean_k`, where the chunk mean
/// balances the two modalities: the per-element video and action means are
/// averaged rather than pooled, so the small action slice is not drowned by
/// the video tokens. Video-only chunks use the video mean alone. Loss
/// magnitude is invariant to K, H, and token dims.
pub fn flow_matching_loss<T: Scalar>(chunks: &[ChunkLossTerm<T>]) -> T {
    let m = T::of(chunks.len() as f64);
    let half = T::of(0.5);
    let mut total = T::zero();
    for c in chunks {
        let mv = sq_err_mean(&c.pred_video, &c.target_video);
        let term = if c.video_only {
            mv
        } else {
            (mv + sq_err_mean(&c.pred_action, &c.target_action)) * half
        };
        total += c.weight * term;
    }
    total / m
}

/// Loss plus per-chunk gradients w.r.t. the predictions. Action gradients
/// are exactly zero for video-only chunks.
#[allow(clippy::type_complexity)]
pub fn flow_matching_loss_grad<T: Scalar>(
    chunks: &[ChunkLossTerm<T>],
) -> (T, Vec<(Array2<T>, Array2<T>)>) {
    let loss = flow_matching_loss(chunks);
    let m = T::of(chunks.len() as f64);
    let two = T::of(2.0);
    let half = T::of(0.5);
    let grads = chunks
        .iter()
        .map(|c| {
            let wv = if c.video_only { c.weight } else { c.weight * half };
            let sv = two * wv / (T::of(c.pred_video.len() as f64) * m);
            let mut dv = &c.pred_video - &c.target_video;
            dv.mapv_inplace(|x| x * sv);
            let da = if c.video_only {
                Array2::zeros(c.pred_action.raw_dim())
            } else {
                let sa = two * c.weight * half / (T::of(c.pred_action.len() as f64) * m);
                let mut da = &c.pred_action - &c.target_action;
                da.mapv_inplace(|x| x * sa);
                da
            };
            (dv, da)
        })
        .collect();
    (loss, grads)
}
