use nalgebra::DMatrix;
use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Squared singular values of the column-centred data, descending.
pub fn explained_variance<F: Scalar>(x: ArrayView2<F>) -> Result<Vec<f64>> {
    let (n, f) = x.dim();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 rows, got {n}")));
    }
    let mut m = DMatrix::<f64>::from_fn(n, f, |i, j| x[[i, j]].to_f64_lossy());
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let mut ev: Vec<f64> = m.singular_values().iter().map(|s| s * s).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// Smallest number of leading components whose share of total variance
/// reaches `threshold`. Zero-variance data needs no components.
pub fn pca_components_for_variance<F: Scalar>(x: ArrayView2<F>, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    let ev = explained_variance(x)?;
    let total: f64 = ev.iter().sum();
    if total <= 0.0 {
        return Ok(0);
    }
    let mut acc = 0.0;
    for (r, v) in ev.iter().enumerate() {
        acc += v;
        if acc / total >= threshold {
            return Ok(r + 1);
        }
    }
    Ok(ev.len())
}
