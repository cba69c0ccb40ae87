//! Linear probes and nearest-centroid classification on fixed features.

mod centroid;
mod eval;
pub mod lbfgs;
mod logreg;
mod scaler;

pub use centroid::NearestCentroid;
pub use eval::{
    evaluate, ClassifierKind, EvalReport, Protocol, SeedResult, CSV_HEADER, DEFAULT_LAMBDA_GRID,
    FALLBACK_LAMBDA,
};
pub use logreg::{accuracy, loss_and_grad, softmax_rows, FitInfo, LogisticRegression, TrainOptions};
pub use scaler::{Standardizer, STD_FLOOR};
