use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::scalar::Scalar;

/// Exact k nearest neighbours of every row (self excluded), as
/// `(index, squared distance)` sorted by distance then index.
pub fn knn<F: Scalar>(x: ArrayView2<F>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = x.nrows();
    let k = k.min(n.saturating_sub(1));
    (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut d: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let s: f64 = xi
                        .iter()
                        .zip(x.row(j))
                        .map(|(&a, &b)| {
                            let t = (a - b).to_f64_lossy();
                            t * t
                        })
                        .sum();
                    (j, s)
                })
                .collect();
            let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
            if k < d.len() && k > 0 {
                d.select_nth_unstable_by(k - 1, cmp);
                d.truncate(k);
            } else {
                d.truncate(k);
            }
            d.sort_unstable_by(cmp);
            d
        })
        .collect()
}
