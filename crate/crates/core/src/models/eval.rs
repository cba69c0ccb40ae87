//! Train/validate/test protocol over several seeds.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::centroid::NearestCentroid;
use super::logreg::{accuracy, LogisticRegression, TrainOptions};
use crate::dataset::split_indices;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
/// Used when the validation split has fewer than two samples of some class.
pub const FALLBACK_LAMBDA: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Logistic,
    NearestCentroid,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Logistic => "logistic",
            ClassifierKind::NearestCentroid => "nearest_centroid",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" | "logreg" => Ok(ClassifierKind::Logistic),
            "nearest_centroid" | "centroid" => Ok(ClassifierKind::NearestCentroid),
            _ => Err(Error::InvalidArgument(format!("unknown classifier `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub classifier: ClassifierKind,
    pub lambda_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub val_fraction: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub standardize: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            classifier: ClassifierKind::Logistic,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            seeds: vec![0, 1, 2],
            val_fraction: 0.2,
            max_iter: 1000,
            tol: 1e-4,
            standardize: true,
        }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if self.classifier == ClassifierKind::Logistic && self.lambda_grid.is_empty() {
            return Err(Error::InvalidArgument("lambda grid is empty".into()));
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid lambda {l}")));
        }
        Ok(())
    }

    fn train_options(&self, lambda: f64) -> TrainOptions {
        TrainOptions {
            lambda,
            max_iter: self.max_iter,
            tol: self.tol,
            standardize: self.standardize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Chosen regularization (logistic only).
    pub lambda: Option<f64>,
    /// Best validation accuracy, absent when validation was degenerate.
    pub val_accuracy: Option<f64>,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    pub classifier: ClassifierKind,
    pub per_seed: Vec<SeedResult>,
    pub mean_accuracy: f64,
    /// Population standard deviation over seeds.
    pub std_accuracy: f64,
}

pub const CSV_HEADER: &str = "dataset,model,classifier,seed,lambda,split,accuracy";

impl EvalReport {
    /// Long-format rows under [`CSV_HEADER`]: validation and test rows per
    /// seed, then `mean` and `std` rows for the test split.
    pub fn csv_rows(&self) -> Vec<String> {
        let head = format!("{},{},{}", self.dataset, self.model, self.classifier.as_str());
        let lam = |l: Option<f64>| l.map(|v| format!("{v:e}")).unwrap_or_default();
        let mut rows = Vec::new();
        for r in &self.per_seed {
            if let Some(v) = r.val_accuracy {
                rows.push(format!("{head},{},{},val,{v:.6}", r.seed, lam(r.lambda)));
            }
            rows.push(format!("{head},{},{},test,{:.6}", r.seed, lam(r.lambda), r.test_accuracy));
        }
        rows.push(format!("{head},mean,,test,{:.6}", self.mean_accuracy));
        rows.push(format!("{head},std,,test,{:.6}", self.std_accuracy));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in self.csv_rows() {
            out.push_str(&r);
            out.push('\n');
        }
        out
    }
}

fn select_rows<F: Scalar>(x: ArrayView2<F>, idx: &[usize]) -> Array2<F> {
    x.select(Axis(0), idx)
}

fn pick(y: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| y[i]).collect()
}

fn degenerate_validation(val_y: &[usize], train_y: &[usize], n_classes: usize) -> bool {
    let mut val = vec![0usize; n_classes];
    let mut train = vec![0usize; n_classes];
    for &l in val_y {
        val[l] += 1;
    }
    for &l in train_y {
        train[l] += 1;
    }
    (0..n_classes).any(|c| train[c] + val[c] > 0 && val[c] < 2)
}

/// Fits on `x` and scores `tx`.
fn fit_score<F: Scalar>(
    kind: ClassifierKind,
    opts: &TrainOptions,
    x: ArrayView2<F>,
    y: &[usize],
    tx: ArrayView2<F>,
    ty: &[usize],
    n_classes: usize,
) -> Result<f64> {
    let pred = match kind {
        ClassifierKind::Logistic => LogisticRegression::fit(x, y, n_classes, opts)?.predict(tx)?,
        ClassifierKind::NearestCentroid => NearestCentroid::fit(x, y, n_classes)?.predict(tx)?,
    };
    Ok(accuracy(&pred, ty))
}

fn run_seed<F: Scalar>(
    train_x: ArrayView2<F>,
    train_y: &[usize],
    test_x: ArrayView2<F>,
    test_y: &[usize],
    n_classes: usize,
    protocol: &Protocol,
    seed: u64,
) -> Result<SeedResult> {
    let (tr, va) = split_indices(train_y, n_classes, protocol.val_fraction, seed)?;
    let (xtr, ytr) = (select_rows(train_x, &tr), pick(train_y, &tr));
    let (xva, yva) = (select_rows(train_x, &va), pick(train_y, &va));
    match protocol.classifier {
        ClassifierKind::NearestCentroid => {
            let opts = protocol.train_options(0.0);
            let val = fit_score(protocol.classifier, &opts, xtr.view(), &ytr, xva.view(), &yva, n_classes)?;
            let test = fit_score(protocol.classifier, &opts, train_x, train_y, test_x, test_y, n_classes)?;
            Ok(SeedResult {
                seed,
                lambda: None,
                val_accuracy: Some(val),
                test_accuracy: test,
            })
        }
        ClassifierKind::Logistic => {
            let (lambda, val_accuracy) = if degenerate_validation(&yva, &ytr, n_classes) {
                (FALLBACK_LAMBDA, None)
            } else {
                let mut best: Option<(f64, f64)> = None;
                // first grid entry wins ties
                for &l in &protocol.lambda_grid {
                    let acc = fit_score(
                        protocol.classifier,
                        &protocol.train_options(l),
                        xtr.view(),
                        &ytr,
                        xva.view(),
                        &yva,
                        n_classes,
                    )?;
                    if best.is_none_or(|(_, b)| acc > b) {
                        best = Some((l, acc));
                    }
                }
                let (l, acc) = best.expect("non-empty grid");
                (l, Some(acc))
            };
            let test = fit_score(
                protocol.classifier,
                &protocol.train_options(lambda),
                train_x,
                train_y,
                test_x,
                test_y,
                n_classes,
            )?;
            Ok(SeedResult {
                seed,
                lambda: Some(lambda),
                val_accuracy,
                test_accuracy: test,
            })
        }
    }
}

/// Runs the protocol for every seed (in parallel) and summarizes.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<F: Scalar>(
    train_x: ArrayView2<F>,
    train_y: &[usize],
    test_x: ArrayView2<F>,
    test_y: &[usize],
    n_classes: usize,
    protocol: &Protocol,
    dataset: &str,
    model: &str,
) -> Result<EvalReport> {
    protocol.validate()?;
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::Shape(format!(
            "train has {} features, test has {}",
            train_x.ncols(),
            test_x.ncols()
        )));
    }
    if test_y.len() != test_x.nrows() || test_y.is_empty() {
        return Err(Error::Shape(format!(
            "{} test rows with {} labels",
            test_x.nrows(),
            test_y.len()
        )));
    }
    let per_seed = protocol
        .seeds
        .par_iter()
        .map(|&seed| run_seed(train_x, train_y, test_x, test_y, n_classes, protocol, seed))
        .collect::<Result<Vec<_>>>()?;
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().map(|r| r.test_accuracy).sum::<f64>() / n;
    let var = per_seed.iter().map(|r| (r.test_accuracy - mean).powi(2)).sum::<f64>() / n;
    Ok(EvalReport {
        dataset: dataset.to_owned(),
        model: model.to_owned(),
        classifier: protocol.classifier,
        per_seed,
        mean_accuracy: mean,
        std_accuracy: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize, offset: usize) -> (Array2<f64>, Vec<usize>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let t = ((i + offset) * 2654435761 % 1000) as f64 / 1000.0;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            rows.extend([sign * 2.0 + t - 0.5, t]);
            y.push(c);
        }
        (Array2::from_shape_vec((n, 2), rows).unwrap(), y)
    }

    #[test]
    fn logistic_protocol_is_deterministic() {
        let (x, y) = data(40, 0);
        let (tx, ty) = data(20, 7);
        let p = Protocol::default();
        let a = evaluate(x.view(), &y, tx.view(), &ty, 2, &p, "d", "m").unwrap();
        let b = evaluate(x.view(), &y, tx.view(), &ty, 2, &p, "d", "m").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_seed.len(), 3);
        assert!(a.mean_accuracy > 0.95);
        assert!(a.per_seed.iter().all(|r| r.lambda.is_some()));
        let csv = a.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + 3 * 2 + 2);
    }

    #[test]
    fn degenerate_validation_uses_fallback() {
        let (x, y) = data(6, 0);
        let (tx, ty) = data(4, 1);
        let r = evaluate(x.view(), &y, tx.view(), &ty, 2, &Protocol::default(), "d", "m").unwrap();
        assert!(r.per_seed.iter().all(|s| s.lambda == Some(FALLBACK_LAMBDA) && s.val_accuracy.is_none()));
    }

    #[test]
    fn centroid_protocol() {
        let (x, y) = data(40, 0);
        let (tx, ty) = data(20, 3);
        let p = Protocol {
            classifier: ClassifierKind::NearestCentroid,
            ..Protocol::default()
        };
        let r = evaluate(x.view(), &y, tx.view(), &ty, 2, &p, "d", "m").unwrap();
        assert_eq!(r.std_accuracy, 0.0);
        assert!(r.per_seed.iter().all(|s| s.lambda.is_none()));
    }

    #[test]
    fn empty_seed_list_rejected() {
        let (x, y) = data(10, 0);
        let p = Protocol {
            seeds: vec![],
            ..Protocol::default()
        };
        assert!(evaluate(x.view(), &y, x.view(), &y, 2, &p, "d", "m").is_err());
    }
}
