use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::logreg::check_labels;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Nearest class mean under Euclidean distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestCentroid<F> {
    centroids: Array2<F>,
    /// Classes with at least one training row; others are never predicted.
    present: Vec<bool>,
}

impl<F: Scalar> NearestCentroid<F> {
    pub fn fit(x: ArrayView2<F>, y: &[usize], n_classes: usize) -> Result<Self> {
        check_labels(x.nrows(), y, n_classes)?;
        if x.nrows() == 0 {
            return Err(Error::Shape("no training rows".into()));
        }
        let mut centroids = Array2::<F>::zeros((n_classes, x.ncols()));
        let mut counts = vec![0usize; n_classes];
        for (row, &l) in x.outer_iter().zip(y) {
            let mut c = centroids.row_mut(l);
            c += &row;
            counts[l] += 1;
        }
        for (mut c, &n) in centroids.outer_iter_mut().zip(&counts) {
            if n > 0 {
                let nf = F::of_usize(n);
                c.mapv_inplace(|v| v / nf);
            }
        }
        Ok(Self {
            centroids,
            present: counts.iter().map(|&n| n > 0).collect(),
        })
    }

    pub fn centroids(&self) -> &Array2<F> {
        &self.centroids
    }

    /// Closest centroid per row; ties go to the lowest class index.
    pub fn predict(&self, x: ArrayView2<F>) -> Result<Vec<usize>> {
        if x.ncols() != self.centroids.ncols() {
            return Err(Error::Shape(format!(
                "centroids have {} features, got {}",
                self.centroids.ncols(),
                x.ncols()
            )));
        }
        Ok(x
            .outer_iter()
            .map(|row| {
                let mut best = (usize::MAX, F::infinity());
                for (c, centre) in self.centroids.outer_iter().enumerate() {
                    if !self.present[c] {
                        continue;
                    }
                    let d: F = row.iter().zip(centre).map(|(&a, &b)| (a - b) * (a - b)).sum();
                    if best.0 == usize::MAX || d < best.1 {
                        best = (c, d);
                    }
                }
                best.0
            })
            .collect())
    }
}
