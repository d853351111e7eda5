//! Fixed invertible pixel codec: patch rearrangement with affine scaling.
//!
//! Replaces a learned VAE at this scale. A frame is scaled from bytes to
//! `[-1, 1]` and rearranged into non-overlapping `patch x patch` tokens;
//! `unpatchify` inverts exactly (bytes recovered by rounding the inverse
//! affine map).

use ndarray::Array2;

use super::WamError;
use crate::env::Frame;
use crate::num::Scalar;

/// Tokens per frame for a given patch size.
pub fn tokens_per_frame(width: usize, height: usize, patch: usize) -> usize {
    (width / patch) * (height / patch)
}

/// Dimension of one patch token.
pub fn patch_dim(patch: usize) -> usize {
    patch * patch * 3
}

#[inline]
fn scale_px<T: Scalar>(byte: u8) -> T {
    T::of(byte as f64 / 255.0 * 2.0 - 1.0)
}

#[inline]
fn unscale_px<T: Scalar>(v: T) -> u8 {
    let x = (v.cast_f64() + 1.0) / 2.0 * 255.0;
    x.round().clamp(0.0, 255.0) as u8
}

/// Frame -> latent token grid `(tokens_per_frame, patch_dim)`, row-major
/// over patch cells.
pub fn patchify_frame<T: Scalar>(frame: &Frame, patch: usize) -> Array2<T> {
    assert!(
        frame.width % patch == 0 && frame.height % patch == 0,
        "frame {}x{} not divisible by patch {patch}",
        frame.width,
        frame.height
    );
    let (gw, gh) = (frame.width / patch, frame.height / patch);
    let mut out = Array2::zeros((gw * gh, patch_dim(patch)));
    for gy in 0..gh {
        for gx in 0..gw {
            let tok = gy * gw + gx;
            let mut c = 0;
            for py in 0..patch {
                for px in 0..patch {
                    let x = gx * patch + px;
                    let y = gy * patch + py;
                    let o = (y * frame.width + x) * 3;
                    for ch in 0..3 {
                        out[[tok, c]] = scale_px(frame.data[o + ch]);
                        c += 1;
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify_frame`].
pub fn unpatchify_frame<T: Scalar>(
    tokens: &Array2<T>,
    width: usize,
    height: usize,
    patch: usize,
) -> Result<Frame, WamError> {
    let want = (tokens_per_frame(width, height, patch), patch_dim(patch));
    if tokens.dim() != want {
        return Err(WamError::Shape {
            what: "latent tokens",
            got: format!("{:?}", tokens.dim()),
            want: format!("{want:?}"),
        });
    }
    let gw = width / patch;
    let mut frame = Frame::filled(width, height, [0, 0, 0]);
    for (tok, row) in tokens.outer_iter().enumerate() {
        let gx = tok % gw;
        let gy = tok / gw;
        let mut c = 0;
        for py in 0..patch {
            for px in 0..patch {
                let x = gx * patch + px;
                let y = gy * patch + py;
                let o = (y * width + x) * 3;
                for ch in 0..3 {
                    frame.data[o + ch] = unscale_px(row[c]);
                    c += 1;
                }
            }
        }
    }
    Ok(frame)
}

/// Mean squared error between two frames in scaled pixel space, the metric
/// used for prediction-alignment reporting.
pub fn frame_mse(a: &Frame, b: &Frame) -> f64 {
    assert_eq!(a.data.len(), b.data.len());
    let n = a.data.len() as f64;
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let dx = (x as f64 - y as f64) / 127.5;
            dx * dx
        })
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_frame_maps_to_constant_tokens() {
        let f = Frame::filled(32, 32, [0, 0, 0]);
        let t = patchify_frame::<f32>(&f, 8);
        let v = t[[0, 0]];
        assert!((v + 1.0).abs() < 1e-6);
        assert!(t.iter().all(|&x| x == v));
    }

    #[test]
    fn round_trip_is_exact_on_random_frames() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..4 {
            let mut f = Frame::filled(32, 32, [0, 0, 0]);
            for b in &mut f.data {
                *b = rng.random();
            }
            let t = patchify_frame::<f32>(&f, 8);
            let back = unpatchify_frame(&t, 32, 32, 8).unwrap();
            assert_eq!(f, back);
        }
    }

    #[test]
    fn single_pixel_touches_single_token() {
        let mut f = Frame::filled(32, 32, [0, 0, 0]);
        f.data[0] = 255;
        f.data[1] = 255;
        f.data[2] = 255;
        let t = patchify_frame::<f32>(&f, 8);
        let base = patchify_frame::<f32>(&Frame::filled(32, 32, [0, 0, 0]), 8);
        let mut differing = 0;
        for tok in 0..t.nrows() {
            if t.row(tok) != base.row(tok) {
                differing += 1;
            }
        }
        assert_eq!(differing, 1);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let t = Array2::<f32>::zeros((4, 192));
        assert!(unpatchify_frame(&t, 32, 32, 8).is_err());
    }
}
