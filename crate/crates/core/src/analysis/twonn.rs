//! TWO-NN intrinsic dimension: the ratio `mu = r2 / r1` of second to first
//! neighbour distance is Pareto distributed with exponent `d` on a locally
//! uniform manifold.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::neighbors::knn;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MIN_DISTINCT_ROWS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdMethod {
    /// Least squares of `-ln(1 - F(mu))` on `ln mu` through the origin.
    LinearFit,
    /// Maximum likelihood `n / sum ln mu`.
    Mle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdEstimate {
    pub d_hat: f64,
    /// Ratios entering the estimate (after dedup and tail discard).
    pub n_used: usize,
    pub n_distinct: usize,
    pub discard_fraction: f64,
    pub method: IdMethod,
    pub subsample_fraction: f64,
    pub repeats: usize,
}

/// Indices of the first occurrence of every distinct row, in row order.
pub fn distinct_rows<F: Scalar>(x: ArrayView2<F>) -> Vec<usize> {
    let mut keyed: Vec<(Vec<u64>, usize)> = x
        .outer_iter()
        .enumerate()
        .map(|(i, r)| (r.iter().map(|v| (v.to_f64_lossy() + 0.0).to_bits()).collect(), i))
        .collect();
    keyed.sort();
    let mut keep: Vec<usize> = Vec::with_capacity(keyed.len());
    for (j, (key, i)) in keyed.iter().enumerate() {
        if j == 0 || keyed[j - 1].0 != *key {
            keep.push(*i);
        }
    }
    keep.sort_unstable();
    keep
}

pub fn twonn_id<F: Scalar>(x: ArrayView2<F>, discard_fraction: f64, method: IdMethod) -> Result<IdEstimate> {
    if !(0.0..1.0).contains(&discard_fraction) {
        return Err(Error::InvalidArgument(format!(
            "discard fraction must lie in [0, 1), got {discard_fraction}"
        )));
    }
    let keep = distinct_rows(x);
    if keep.len() < MIN_DISTINCT_ROWS {
        return Err(Error::InvalidArgument(format!(
            "TWO-NN needs at least {MIN_DISTINCT_ROWS} distinct rows, got {}",
            keep.len()
        )));
    }
    let xd: Array2<F> = x.select(Axis(0), &keep);
    let n = xd.nrows();
    let mut mu: Vec<f64> = knn(xd.view(), 2)
        .into_iter()
        .map(|nn| (nn[1].1 / nn[0].1).sqrt())
        .collect();
    mu.sort_by(f64::total_cmp);

    let d_hat = match method {
        IdMethod::LinearFit => {
            // empirical CDF F_i = i / n for the i-th smallest (1-based)
            let n_used = ((n as f64) * (1.0 - discard_fraction)) as usize;
            let mut sxx = 0.0;
            let mut sxy = 0.0;
            for (i, &m) in mu[..n_used].iter().enumerate() {
                let xl = m.ln();
                let yl = -(1.0 - (i + 1) as f64 / n as f64).ln();
                sxx += xl * xl;
                sxy += xl * yl;
            }
            (sxy / sxx, n_used)
        }
        IdMethod::Mle => {
            let n_used = ((n as f64) * (1.0 - discard_fraction)) as usize;
            let s: f64 = mu[..n_used].iter().map(|m| m.ln()).sum();
            (n_used as f64 / s, n_used)
        }
    };
    let (d, n_used) = d_hat;
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::Numerical(format!("degenerate neighbour ratios (estimate {d})")));
    }
    Ok(IdEstimate {
        d_hat: d,
        n_used,
        n_distinct: n,
        discard_fraction,
        method,
        subsample_fraction: 1.0,
        repeats: 1,
    })
}

/// Mean TWO-NN estimate over `repeats` subsamples of `round(N * fraction)`
/// rows drawn without replacement (rows kept in original order).
pub fn id_with_subsampling<F: Scalar>(
    x: ArrayView2<F>,
    fraction: f64,
    repeats: usize,
    seed: u64,
    discard_fraction: f64,
    method: IdMethod,
) -> Result<IdEstimate> {
    if !(fraction > 0.0 && fraction <= 1.0) || repeats == 0 {
        return Err(Error::InvalidArgument(format!(
            "need fraction in (0, 1] and repeats >= 1, got {fraction} / {repeats}"
        )));
    }
    let n = x.nrows();
    let m = ((n as f64 * fraction).round() as usize).clamp(1, n.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d_sum = 0.0;
    let mut n_used = usize::MAX;
    let mut n_distinct = usize::MAX;
    for _ in 0..repeats {
        let mut idx = if m == n { (0..n).collect() } else { sample(&mut rng, n, m).into_vec() };
        idx.sort_unstable();
        let est = twonn_id(x.select(Axis(0), &idx).view(), discard_fraction, method)?;
        d_sum += est.d_hat;
        n_used = n_used.min(est.n_used);
        n_distinct = n_distinct.min(est.n_distinct);
    }
    Ok(IdEstimate {
        d_hat: d_sum / repeats as f64,
        n_used,
        n_distinct,
        discard_fraction,
        method,
        subsample_fraction: fraction,
        repeats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cube(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || rng.random::<f64>())
    }

    #[test]
    fn recovers_cube_dimension() {
        let est = twonn_id(cube(2000, 5, 3).view(), 0.1, IdMethod::LinearFit).unwrap();
        assert!((4.25..=5.75).contains(&est.d_hat), "{est:?}");
        assert_eq!(est.n_used, 1800);
        let mle = twonn_id(cube(2000, 5, 3).view(), 0.1, IdMethod::Mle).unwrap();
        assert!(mle.d_hat > 0.0);
    }

    #[test]
    fn line_segment_is_one_dimensional() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let x = Array2::from_shape_fn((500, 3), |(i, j)| t[i] * [1.0, -2.0, 0.5][j]);
        let est = twonn_id(x.view(), 0.1, IdMethod::LinearFit).unwrap();
        assert!((0.8..=1.2).contains(&est.d_hat), "{est:?}");
    }

    #[test]
    fn duplicates_collapse() {
        let base = cube(30, 2, 0);
        let mut x = Array2::zeros((60, 2));
        x.slice_mut(ndarray::s![..30, ..]).assign(&base);
        x.slice_mut(ndarray::s![30.., ..]).assign(&base);
        let a = twonn_id(x.view(), 0.1, IdMethod::LinearFit).unwrap();
        let b = twonn_id(base.view(), 0.1, IdMethod::LinearFit).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_distinct, 30);
    }

    #[test]
    fn too_few_rows() {
        assert!(twonn_id(cube(19, 2, 0).view(), 0.1, IdMethod::LinearFit).is_err());
    }

    #[test]
    fn full_subsample_matches_plain_estimate() {
        let x = cube(300, 4, 9);
        let a = twonn_id(x.view(), 0.1, IdMethod::LinearFit).unwrap();
        let b = id_with_subsampling(x.view(), 1.0, 1, 5, 0.1, IdMethod::LinearFit).unwrap();
        assert_eq!(a, b);
        let c = id_with_subsampling(x.view(), 0.25, 3, 5, 0.1, IdMethod::LinearFit).unwrap();
        let d = id_with_subsampling(x.view(), 0.25, 3, 5, 0.1, IdMethod::LinearFit).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.repeats, 3);
    }
}
