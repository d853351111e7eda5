//! Action chunk smoothing: 2x cubic upsampling, a Savitzky-Golay pass, and
//! decimation back to the original rate.
//!
//! The upsampler is a not-a-knot cubic spline, which reproduces polynomials
//! up to degree three exactly; combined with a degree-3 Savitzky-Golay
//! filter the whole pipeline leaves cubic trajectories untouched away from
//! the edges while attenuating high-frequency noise.

use ndarray::Array2;

use super::InferError;
use crate::num::Scalar;

/// Solve a dense linear system in f64 by Gaussian elimination with partial
/// pivoting. Sizes here are tiny (spline systems, polynomial fits).
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) {
    let n = b.len();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        debug_assert!(d.abs() > 1e-12, "singular smoothing system");
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    for i in 0..n {
        b[i] /= a[i][i];
    }
}

/// Interpolate `y` to double resolution with 4-point Lagrange cubic
/// interpolation: `2n - 1` outputs at the half-integer grid over
/// `[0, n - 1]`, so even outputs copy the inputs and no point is
/// extrapolated. Exact for polynomials of degree <= 3 and local, so
/// ringing stays bounded.
pub fn cubic_upsample_2x(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    match n {
        0 => return Vec::new(),
        1 => return vec![y[0]],
        2 => {
            return (0..3)
                .map(|j| {
                    let x = j as f64 / 2.0;
                    y[0] + (y[1] - y[0]) * x
                })
                .collect();
        }
        3 => {
            return (0..5)
                .map(|j| {
                    let x = j as f64 / 2.0;
                    let c = y[0];
                    let b = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / 2.0;
                    let a = (y[0] - 2.0 * y[1] + y[2]) / 2.0;
                    a * x * x + b * x + c
                })
                .collect();
        }
        _ => {}
    }
    let mut out = Vec::with_capacity(2 * n - 1);
    for i in 0..n {
        out.push(y[i]);
        if i + 1 < n {
            let s0 = (i.saturating_sub(1)).min(n - 4);
            out.push(lagrange4(&y[s0..s0 + 4], s0, i as f64 + 0.5));
        }
    }
    out
}

/// Cubic Lagrange interpolation over four consecutive unit-spaced samples
/// starting at `s0`, evaluated at `x`.
fn lagrange4(w: &[f64], s0: usize, x: f64) -> f64 {
    let t = x - s0 as f64;
    let mut acc = 0.0;
    for (k, &wk) in w.iter().enumerate() {
        let mut l = 1.0;
        for m in 0..4 {
            if m != k {
                l *= (t - m as f64) / (k as f64 - m as f64);
            }
        }
        acc += wk * l;
    }
    acc
}

/// Least-squares polynomial fit of degree `p` over `pts = (offset, value)`,
/// evaluated at offset zero.
fn polyfit_at_zero(pts: &[(f64, f64)], p: usize) -> f64 {
    let deg = p.min(pts.len() - 1);
    let mut ata = vec![vec![0.0; deg + 1]; deg + 1];
    let mut atb = vec![0.0; deg + 1];
    for &(x, v) in pts {
        let mut xi = vec![1.0; deg + 1];
        for k in 1..=deg {
            xi[k] = xi[k - 1] * x;
        }
        for r in 0..=deg {
            for c in 0..=deg {
                ata[r][c] += xi[r] * xi[c];
            }
            atb[r] += xi[r] * v;
        }
    }
    solve_dense(&mut ata, &mut atb);
    atb[0]
}

/// Centered Savitzky-Golay convolution coefficients for an odd window and
/// polynomial order, derived from the least-squares projection.
pub fn savgol_coefficients(window: usize, polyorder: usize) -> Vec<f64> {
    debug_assert!(window % 2 == 1 && polyorder < window);
    let half = (window / 2) as i64;
    let mut coeffs = vec![0.0; window];
    // The coefficient of sample k is the fit-at-zero of a unit impulse at k.
    for (i, c) in coeffs.iter_mut().enumerate() {
        let pts: Vec<(f64, f64)> = (-half..=half)
            .enumerate()
            .map(|(j, off)| (off as f64, if j == i { 1.0 } else { 0.0 }))
            .collect();
        *c = polyfit_at_zero(&pts, polyorder);
    }
    coeffs
}

/// Savitzky-Golay filter with truncated-window polynomial fits at the edges.
pub fn savgol_filter(y: &[f64], window: usize, polyorder: usize) -> Vec<f64> {
    let n = y.len();
    debug_assert!(window % 2 == 1 && polyorder < window && window <= n);
    let half = window / 2;
    let coeffs = savgol_coefficients(window, polyorder);
    let mut out = vec![0.0; n];
    for i in 0..n {
        if i >= half && i + half < n {
            let mut acc = 0.0;
            for (j, c) in coeffs.iter().enumerate() {
                acc += c * y[i - half + j];
            }
            out[i] = acc;
        } else {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let pts: Vec<(f64, f64)> = (lo..hi)
                .map(|j| (j as f64 - i as f64, y[j]))
                .collect();
            // Keep the truncated fit strictly least-squares (never an
            // interpolation) so the filter stays low-pass at the edges.
            let deg = polyorder.min(pts.len().saturating_sub(2));
            out[i] = polyfit_at_zero(&pts, deg);
        }
    }
    out
}

/// Full smoothing pipeline over an `(H, dim)` action chunk: upsample each
/// dimension to `2H`, filter, and take every second point.
pub fn smooth_actions<T: Scalar>(
    actions: &Array2<T>,
    window: usize,
    polyorder: usize,
) -> Result<Array2<T>, InferError> {
    let h = actions.nrows();
    if window % 2 == 0 || polyorder >= window {
        return Err(InferError::SmoothingConfig { window, polyorder });
    }
    let upsampled = 2 * h - 1;
    if window > upsampled {
        return Err(InferError::SmoothingWindowTooLarge {
            window,
            upsampled,
        });
    }
    let mut out = actions.clone();
    for d in 0..actions.ncols() {
        let col: Vec<f64> = actions.column(d).iter().map(|v| v.cast_f64()).collect();
        let up = cubic_upsample_2x(&col);
        let filtered = savgol_filter(&up, window, polyorder);
        for (i, v) in filtered.iter().step_by(2).enumerate() {
            out[[i, d]] = T::of(*v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// Oracle: direct least-squares polynomial fit per window, written with
    /// its own Vandermonde solve (no shared code path with the convolution
    /// coefficients).
    fn oracle_savgol(y: &[f64], window: usize, p: usize) -> Vec<f64> {
        let n = y.len();
        let half = window / 2;
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(n);
                let deg = if i >= half && i + half < n {
                    p
                } else {
                    p.min((hi - lo).saturating_sub(2))
                };
                // Normal equations built explicitly.
                let mut g = vec![vec![0.0; deg + 2]; deg + 1];
                for r in 0..=deg {
                    for c in 0..=deg {
                        g[r][c] = (lo..hi)
                            .map(|j| (j as f64 - i as f64).powi(r as i32 + c as i32))
                            .sum();
                    }
                    g[r][deg + 1] = (lo..hi)
                        .map(|j| (j as f64 - i as f64).powi(r as i32) * y[j])
                        .sum();
                }
                // Gauss-Jordan on the augmented system.
                for col in 0..=deg {
                    let piv = (col..=deg).max_by(|&a, &b| {
                        g[a][col].abs().partial_cmp(&g[b][col].abs()).unwrap()
                    }).unwrap();
                    g.swap(col, piv);
                    let d = g[col][col];
                    for c in 0..=deg + 1 {
                        g[col][c] /= d;
                    }
                    for r in 0..=deg {
                        if r != col {
                            let f = g[r][col];
                            for c in 0..=deg + 1 {
                                g[r][c] -= f * g[col][c];
                            }
                        }
                    }
                }
                g[0][deg + 1]
            })
            .collect()
    }

    #[test]
    fn constant_sequences_are_unchanged() {
        let a = Array2::from_elem((8, 3), 0.7f32);
        let s = smooth_actions(&a, 5, 3).unwrap();
        for v in s.iter() {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn cubic_polynomials_pass_through_interior() {
        let h = 12;
        let poly = |x: f64| 0.3 * x * x * x - 1.2 * x * x + 0.5 * x - 2.0;
        let mut a = Array2::<f64>::zeros((h, 1));
        for i in 0..h {
            a[[i, 0]] = poly(i as f64);
        }
        let s = smooth_actions(&a, 5, 3).unwrap();
        for i in 2..h - 2 {
            assert!(
                (s[[i, 0]] - a[[i, 0]]).abs() < 1e-6,
                "interior point {i}: {} vs {}",
                s[[i, 0]],
                a[[i, 0]]
            );
        }
    }

    #[test]
    fn filter_matches_independent_least_squares_oracle() {
        let y: Vec<f64> = (0..24)
            .map(|i| {
                let x = i as f64 * 0.35;
                x.sin() + 0.2 * (3.1 * x).cos()
            })
            .collect();
        for (w, p) in [(5usize, 3usize), (7, 2), (9, 3)] {
            let got = savgol_filter(&y, w, p);
            let want = oracle_savgol(&y, w, p);
            for (g, t) in got.iter().zip(&want) {
                assert!((g - t).abs() < 1e-9, "savgol differs from oracle");
            }
        }
    }

    #[test]
    fn nyquist_alternation_is_attenuated() {
        let h = 12;
        let mut a = Array2::<f64>::zeros((h, 1));
        for i in 0..h {
            a[[i, 0]] = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let s = smooth_actions(&a, 5, 3).unwrap();
        let max = s.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(max < 1.0, "alternating amplitude not attenuated: {max}");
    }

    #[test]
    fn upsampling_is_exact_on_cubics_everywhere() {
        let poly = |x: f64| -0.1 * x * x * x + 0.4 * x * x - x + 3.0;
        let y: Vec<f64> = (0..10).map(|i| poly(i as f64)).collect();
        let up = cubic_upsample_2x(&y);
        for (j, v) in up.iter().enumerate() {
            let x = j as f64 / 2.0;
            assert!((v - poly(x)).abs() < 1e-9, "spline missed cubic at {x}");
        }
    }

    #[test]
    fn config_validation() {
        let a = Array2::<f32>::zeros((4, 3));
        assert!(matches!(
            smooth_actions(&a, 4, 2),
            Err(InferError::SmoothingConfig { .. })
        ));
        assert!(matches!(
            smooth_actions(&a, 5, 5),
            Err(InferError::SmoothingConfig { .. })
        ));
        assert!(matches!(
            smooth_actions(&a, 9, 3),
            Err(InferError::SmoothingWindowTooLarge { .. })
        ));
        assert!(smooth_actions(&a, 5, 3).is_ok());
    }
}
