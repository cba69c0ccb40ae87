use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Standard deviations at or below this count as zero variance.
pub const STD_FLOOR: f64 = 1e-12;

/// Per-feature standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<F> {
    mean: Array1<F>,
    std: Array1<F>,
    /// `1 / std`, or zero for zero-variance features.
    inv_std: Array1<F>,
}

impl<F: Scalar> Standardizer<F> {
    pub fn fit(x: ArrayView2<F>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Shape("cannot standardize zero rows".into()));
        }
        let n = F::of_usize(x.nrows());
        let mean = x.sum_axis(Axis(0)).mapv(|s| s / n);
        let mut var = Array1::<F>::zeros(x.ncols());
        for row in x.outer_iter() {
            for ((v, &a), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (a - m) * (a - m);
            }
        }
        let floor = F::of(STD_FLOOR);
        let raw = var.mapv(|v| (v / n).sqrt());
        let inv_std = raw.mapv(|s| if s > floor { F::one() / s } else { F::zero() });
        let std = raw.mapv(|s| s.max(floor));
        Ok(Self { mean, std, inv_std })
    }

    pub fn mean(&self) -> &Array1<F> {
        &self.mean
    }

    pub fn std(&self) -> &Array1<F> {
        &self.std
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} features, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        let mut out = x.to_owned();
        for mut row in out.outer_iter_mut() {
            for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *v = (*v - m) * s;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn standardizes_columns() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(x.view()).unwrap();
        assert_eq!(s.mean(), &array![2.0, 5.0]);
        assert_eq!(s.std()[0], 1.0);
        assert_eq!(s.apply(x.view()).unwrap(), array![[-1.0, 0.0], [1.0, 0.0]]);
        // constant training column stays at zero whatever the test value
        assert_eq!(s.apply(array![[2.0, 100.0]].view()).unwrap(), array![[0.0, 0.0]]);
    }

    #[test]
    fn checks_width() {
        let s = Standardizer::fit(array![[1.0f32, 2.0]].view()).unwrap();
        assert!(s.apply(array![[1.0f32]].view()).is_err());
        assert!(s.std().iter().all(|&v| v >= 1e-12));
    }
}
