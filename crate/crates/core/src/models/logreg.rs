//! Multinomial logistic regression with an L2 penalty on the weights.
//!
//! Parameters are packed as `C x D` weights (row-major) followed by `C`
//! biases. The objective is the mean cross-entropy plus `lambda/2 ||W||^2`;
//! biases are not penalized.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::lbfgs::{minimize, LbfgsConfig};
use super::scaler::Standardizer;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Scalar>(logits: &mut Array2<F>) {
    for mut row in logits.outer_iter_mut() {
        let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

fn unpack<F: Scalar>(params: ArrayView1<F>, n_classes: usize, dim: usize) -> (ArrayView2<F>, ArrayView1<F>) {
    let w = params
        .slice_move(s![..n_classes * dim])
        .into_shape_with_order((n_classes, dim))
        .expect("contiguous parameter vector");
    let b = params.slice_move(s![n_classes * dim..]);
    (w, b)
}

/// Objective value and gradient at `params`.
pub fn loss_and_grad<F: Scalar>(
    params: ArrayView1<F>,
    x: ArrayView2<F>,
    y: &[usize],
    n_classes: usize,
    lambda: F,
) -> (F, Array1<F>) {
    let (n, dim) = x.dim();
    let (w, b) = unpack(params, n_classes, dim);
    let mut logits = x.dot(&w.t());
    logits += &b;
    let mut loss = F::zero();
    for (row, &label) in logits.outer_iter().zip(y) {
        let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<F>().ln();
        loss += lse - row[label];
    }
    let nf = F::of_usize(n);
    loss = loss / nf + F::of(0.5) * lambda * w.iter().map(|&v| v * v).sum::<F>();

    // logits become the residual P - Y, scaled by 1/N
    softmax_rows(&mut logits);
    for (mut row, &label) in logits.outer_iter_mut().zip(y) {
        row[label] -= F::one();
    }
    logits.mapv_inplace(|v| v / nf);
    let mut grad = Array1::<F>::zeros(n_classes * dim + n_classes);
    {
        let gw = logits.t().dot(&x) + &(w.to_owned() * lambda);
        grad.slice_mut(s![..n_classes * dim])
            .assign(&Array1::from_iter(gw.iter().copied()));
        grad.slice_mut(s![n_classes * dim..]).assign(&logits.sum_axis(Axis(0)));
    }
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub standardize: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            max_iter: 1000,
            tol: 1e-4,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub lambda: f64,
    /// Classes with exactly one training sample.
    pub singleton_classes: Vec<usize>,
    /// Classes absent from the training rows.
    pub empty_classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression<F> {
    weights: Array2<F>,
    bias: Array1<F>,
    scaler: Option<Standardizer<F>>,
    info: FitInfo,
}

pub(crate) fn check_labels(n_rows: usize, y: &[usize], n_classes: usize) -> Result<()> {
    if y.len() != n_rows {
        return Err(Error::Shape(format!("{n_rows} rows but {} labels", y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    Ok(())
}

impl<F: Scalar> LogisticRegression<F> {
    /// Fits on raw features; with `standardize` the scaler is fitted on `x`
    /// and stored in the model. Weights start at zero, so the fit is
    /// deterministic.
    pub fn fit(x: ArrayView2<F>, y: &[usize], n_classes: usize, opts: &TrainOptions) -> Result<Self> {
        let (n, dim) = x.dim();
        check_labels(n, y, n_classes)?;
        if n_classes < 2 || n < n_classes {
            return Err(Error::InvalidArgument(format!(
                "need at least as many rows as classes (>= 2), got {n} rows for {n_classes} classes"
            )));
        }
        if !(opts.lambda >= 0.0) || !opts.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", opts.lambda)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature values".into()));
        }
        let scaler = if opts.standardize {
            Some(Standardizer::fit(x)?)
        } else {
            None
        };
        let xs = match &scaler {
            Some(s) => s.apply(x)?,
            None => x.to_owned(),
        };
        let mut counts = vec![0usize; n_classes];
        for &l in y {
            counts[l] += 1;
        }
        let lambda = F::of(opts.lambda);
        let cfg = LbfgsConfig {
            max_iter: opts.max_iter,
            grad_tol: opts.tol,
            ..LbfgsConfig::default()
        };
        let out = minimize(
            |p: &Array1<F>| loss_and_grad(p.view(), xs.view(), y, n_classes, lambda),
            Array1::zeros(n_classes * dim + n_classes),
            &cfg,
        )?;
        let (w, b) = unpack(out.x.view(), n_classes, dim);
        Ok(Self {
            weights: w.to_owned(),
            bias: b.to_owned(),
            scaler,
            info: FitInfo {
                iterations: out.iterations,
                converged: out.converged,
                final_loss: out.value.to_f64_lossy(),
                lambda: opts.lambda,
                singleton_classes: (0..n_classes).filter(|&c| counts[c] == 1).collect(),
                empty_classes: (0..n_classes).filter(|&c| counts[c] == 0).collect(),
            },
        })
    }

    pub fn weights(&self) -> &Array2<F> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<F> {
        &self.bias
    }

    pub fn scaler(&self) -> Option<&Standardizer<F>> {
        self.scaler.as_ref()
    }

    pub fn info(&self) -> &FitInfo {
        &self.info
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn decision_function(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        if x.ncols() != self.weights.ncols() {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.weights.ncols(),
                x.ncols()
            )));
        }
        let xs = match &self.scaler {
            Some(s) => s.apply(x)?,
            None => x.to_owned(),
        };
        let mut z = xs.dot(&self.weights.t());
        z += &self.bias;
        Ok(z)
    }

    pub fn predict_proba(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        let mut z = self.decision_function(x)?;
        softmax_rows(&mut z);
        Ok(z)
    }

    /// Most probable class per row; ties go to the lowest index.
    pub fn predict(&self, x: ArrayView2<F>) -> Result<Vec<usize>> {
        let z = self.decision_function(x)?;
        Ok(z.outer_iter().map(|row| argmax(row)).collect())
    }
}

pub(crate) fn argmax<F: Scalar>(row: ArrayView1<F>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / pred.len() as f64
}
