//! Dense building blocks with explicit forward caches and backward passes.
//!
//! Every activation is a row-major `m × k` matrix, one row per input position.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `x · w + b` with `w` stored as `in × out`.
pub(crate) fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates `dW += xᵀ·dy`, `db += Σ dy` and returns `dx = dy·wᵀ`.
pub(crate) fn linear_backward(
    x: &Array2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

pub(crate) struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub(crate) fn layer_norm(
    x: &Array2<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, istd) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *istd = 1.0 / (var + LN_EPS).sqrt();
        row *= *istd;
    }
    let mut y = &xhat * gamma;
    y += beta;
    (y, LayerNormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &Array1<f64>,
    dy: &Array2<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    *dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbeta += &dy.sum_axis(Axis(0));
    let dxhat = dy * gamma;
    let mut dx = Array2::zeros(dy.raw_dim());
    Zip::from(dx.rows_mut())
        .and(dxhat.rows())
        .and(cache.xhat.rows())
        .and(&cache.inv_std)
        .for_each(|mut out, g, xh, &istd| {
            let sum_g = g.sum();
            let sum_gx = g.dot(&xh);
            Zip::from(&mut out)
                .and(&g)
                .and(&xh)
                .for_each(|o, &gi, &xi| *o = istd / d * (d * gi - sum_g - xi * sum_gx));
        });
    dx
}

pub(crate) fn gelu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
}

pub(crate) fn gelu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|g, &v| {
        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
        *g *= 0.5 * (1.0 + t) + 0.5 * v * dt;
    });
    dx
}

/// Numerically stable softmax of a single vector.
pub fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let max = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = z.mapv(|v| (v - max).exp());
    let s = e.sum();
    e /= s;
    e
}

pub(crate) fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Given row-softmax output `a` and upstream `da`, returns the gradient with
/// respect to the pre-softmax scores.
pub(crate) fn softmax_rows_backward(a: ArrayView2<f64>, da: &Array2<f64>) -> Array2<f64> {
    let mut ds = da.clone();
    Zip::from(ds.rows_mut()).and(a.rows()).for_each(|mut g, p| {
        let dot = g.dot(&p);
        Zip::from(&mut g).and(&p).for_each(|gi, &pi| *gi = pi * (*gi - dot));
    });
    ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_scalar(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &v in &[-3.0, -0.7, 0.0, 0.3, 2.5] {
            let x = array![[v]];
            let analytic = gelu_backward(&x, &array![[1.0]])[[0, 0]];
            let numeric = fd_scalar(|t| gelu(&array![[t]])[[0, 0]], v);
            assert!((analytic - numeric).abs() < 1e-8, "{v}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = array![[1.0, 2.0, 3.0, 4.0], [10.0, -10.0, 0.0, 5.0]];
        let (y, _) = layer_norm(&x, &Array1::ones(4), &Array1::zeros(4));
        for row in y.rows() {
            assert!(row.mean().unwrap().abs() < 1e-12);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(array![1000.0, 1000.0, -1000.0].view());
        assert!((p.sum() - 1.0).abs() < 1e-15);
        assert!((p[0] - 0.5).abs() < 1e-15);
    }
}
