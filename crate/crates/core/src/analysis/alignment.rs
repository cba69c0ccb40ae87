use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::neighbors::knn;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub value: f64,
    pub k: usize,
    pub n: usize,
}

fn l2_normalized<F: Scalar>(x: ArrayView2<F>) -> Array2<f64> {
    let mut out = x.mapv(|v| v.to_f64_lossy());
    for mut row in out.outer_iter_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

fn neighbor_sets<F: Scalar>(x: ArrayView2<F>, k: usize) -> Vec<Vec<usize>> {
    knn(l2_normalized(x).view(), k)
        .into_iter()
        .map(|nn| {
            let mut s: Vec<usize> = nn.into_iter().map(|(j, _)| j).collect();
            s.sort_unstable();
            s
        })
        .collect()
}

/// Mean overlap of the k-nearest-neighbour sets of each sample in the two
/// spaces. Rows are L2-normalized first, so only directions matter.
pub fn mutual_knn<F: Scalar, G: Scalar>(x: ArrayView2<F>, y: ArrayView2<G>, k: usize) -> Result<AlignmentScore> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::Shape(format!("{n} rows against {}", y.nrows())));
    }
    if k == 0 || n <= k + 1 {
        return Err(Error::InvalidArgument(format!(
            "mutual k-NN needs 0 < k and N > k + 1, got k={k}, N={n}"
        )));
    }
    let nx = neighbor_sets(x, k);
    let ny = neighbor_sets(y, k);
    let mut total = 0usize;
    for (a, b) in nx.iter().zip(&ny) {
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    total += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    Ok(AlignmentScore {
        value: total as f64 / (n * k) as f64,
        k,
        n,
    })
}
