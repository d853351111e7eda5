//! Dense primitives with hand-written backward passes.
//!
//! Everything operates on `(rows, features)` matrices so the heavy lifting
//! stays inside GEMM calls.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::num::Scalar;

pub const LN_EPS: f64 = 1e-5;

/// `y = x W + b`
pub fn linear_fwd<T: Scalar>(x: &Array2<T>, w: &ArrayView2<T>, b: &ArrayView1<T>) -> Array2<T> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Returns `(dx, dw, db)` for `y = x W + b`.
pub fn linear_bwd<T: Scalar>(
    x: &Array2<T>,
    w: &ArrayView2<T>,
    dy: &Array2<T>,
) -> (Array2<T>, Array2<T>, Array1<T>) {
    let dx = dy.dot(&w.t());
    let dw = x.t().dot(dy);
    let db = dy.sum_axis(Axis(0));
    (dx, dw, db)
}

/// Accumulating variant: adds `dw`/`db` into the provided gradient views.
pub fn linear_bwd_acc<T: Scalar>(
    x: &Array2<T>,
    w: &ArrayView2<T>,
    dy: &Array2<T>,
    mut dw: ndarray::ArrayViewMut2<T>,
    mut db: ndarray::ArrayViewMut1<T>,
) -> Array2<T> {
    dw += &x.t().dot(dy);
    db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

/// Non-affine layer norm over the feature axis.
/// Returns `(y, rstd)` where `y` is the normalized activation.
pub fn layer_norm_fwd<T: Scalar>(x: &Array2<T>) -> (Array2<T>, Array1<T>) {
    let n = x.ncols();
    let inv_n = T::of(1.0 / n as f64);
    let eps = T::of(LN_EPS);
    let mut y = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in y.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() * inv_n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b) * inv_n;
        let inv = (var + eps).sqrt().recip();
        row.mapv_inplace(|v| v * inv);
        *r = inv;
    }
    (y, rstd)
}

/// Backward of non-affine layer norm given the normalized output `y`.
pub fn layer_norm_bwd<T: Scalar>(y: &Array2<T>, rstd: &Array1<T>, dy: &Array2<T>) -> Array2<T> {
    let n = y.ncols();
    let inv_n = T::of(1.0 / n as f64);
    let mut dx = Array2::zeros(y.raw_dim());
    for i in 0..y.nrows() {
        let yr = y.row(i);
        let dyr = dy.row(i);
        let mean_dy = dyr.sum() * inv_n;
        let mean_dyy = yr
            .iter()
            .zip(dyr.iter())
            .map(|(&a, &b)| a * b)
            .fold(T::zero(), |a, b| a + b)
            * inv_n;
        let r = rstd[i];
        for j in 0..n {
            dx[[i, j]] = r * (dyr[j] - mean_dy - yr[j] * mean_dyy);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu_fwd<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    x.mapv(|v| {
        let u = c * (v + a * v * v * v);
        half * v * (T::one() + u.tanh())
    })
}

pub fn gelu_bwd<T: Scalar>(x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let c = T::of(GELU_C);
    let a3 = T::of(3.0 * GELU_A);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let mut dx = x.clone();
    dx.zip_mut_with(dy, |v, &g| {
        let u = c * (*v + a * *v * *v * *v);
        let t = u.tanh();
        let sech2 = T::one() - t * t;
        let du = c * (T::one() + a3 * *v * *v);
        *v = g * (half * (T::one() + t) + half * *v * sech2 * du);
    });
    dx
}

/// Timestep-conditioned modulation `y = x * (1 + scale) + shift`.
pub fn modulate_fwd<T: Scalar>(x: &Array2<T>, shift: &Array2<T>, scale: &Array2<T>) -> Array2<T> {
    let mut y = x.clone();
    y.zip_mut_with(scale, |v, &s| *v = *v * (T::one() + s));
    y += shift;
    y
}

/// Backward of modulation: returns `dx`; accumulates `dshift`/`dscale`.
pub fn modulate_bwd<T: Scalar>(
    x: &Array2<T>,
    scale: &Array2<T>,
    dy: &Array2<T>,
    dshift: &mut Array2<T>,
    dscale: &mut Array2<T>,
) -> Array2<T> {
    *dshift += dy;
    let mut ds = dy.clone();
    ds.zip_mut_with(x, |v, &xv| *v = *v * xv);
    *dscale += &ds;
    let mut dx = dy.clone();
    dx.zip_mut_with(scale, |v, &s| *v = *v * (T::one() + s));
    dx
}

/// Sinusoidal position features of dimension `dim` (even).
pub fn sinusoid<T: Scalar>(pos: f64, dim: usize, max_period: f64) -> Array1<T> {
    let mut out = Array1::zeros(dim);
    let half = dim / 2;
    for i in 0..half {
        let freq = (-(i as f64) / half as f64 * max_period.ln()).exp();
        out[2 * i] = T::of((pos * freq).sin());
        out[2 * i + 1] = T::of((pos * freq).cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn randn(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((r, c), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn linear_matches_manual() {
        let x = array![[1.0f64, 2.0], [0.5, -1.0]];
        let w = array![[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]];
        let b = array![0.1, 0.2, 0.3];
        let y = linear_fwd(&x, &w.view(), &b.view());
        assert!((y[[0, 2]] - (1.0 * 2.0 + 2.0 * -1.0 + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = randn(5, 16, 1);
        let (y, _) = layer_norm_fwd(&x);
        for row in y.rows() {
            let mean: f64 = row.mean().unwrap();
            let var: f64 = row.iter().map(|v| v * v).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    /// Central-difference checks for each primitive's input gradient.
    #[test]
    fn primitive_backward_matches_finite_differences() {
        let eps = 1e-6;
        let x = randn(3, 8, 2);
        let dy = randn(3, 8, 3);

        // gelu
        let dx = gelu_bwd(&x, &dy);
        for &(i, j) in &[(0usize, 0usize), (1, 3), (2, 7)] {
            let mut xp = x.clone();
            xp[[i, j]] += eps;
            let mut xm = x.clone();
            xm[[i, j]] -= eps;
            let fp = (gelu_fwd(&xp) * &dy).sum();
            let fm = (gelu_fwd(&xm) * &dy).sum();
            let num = (fp - fm) / (2.0 * eps);
            assert!((dx[[i, j]] - num).abs() < 1e-6, "gelu grad mismatch");
        }

        // layer norm
        let (y, rstd) = layer_norm_fwd(&x);
        let dxln = layer_norm_bwd(&y, &rstd, &dy);
        for &(i, j) in &[(0usize, 1usize), (2, 5)] {
            let mut xp = x.clone();
            xp[[i, j]] += eps;
            let mut xm = x.clone();
            xm[[i, j]] -= eps;
            let fp = (layer_norm_fwd(&xp).0 * &dy).sum();
            let fm = (layer_norm_fwd(&xm).0 * &dy).sum();
            let num = (fp - fm) / (2.0 * eps);
            assert!((dxln[[i, j]] - num).abs() < 1e-5, "ln grad mismatch");
        }
    }

    #[test]
    fn sinusoid_is_bounded_and_distinct() {
        let a = sinusoid::<f64>(3.0, 32, 10_000.0);
        let b = sinusoid::<f64>(4.0, 32, 10_000.0);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
    }
}
