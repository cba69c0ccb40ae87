//! Time series classification through frozen vision-transformer features.
//!
//! A series is robust-scaled, cut into overlapping patches and stacked into a
//! square grayscale image ([`imaging`]). An image backend turns each image
//! into per-layer vectors ([`embedding`]), which feed linear probes and
//! nearest-centroid classifiers ([`models`]) and geometric analyses
//! ([`analysis`]). [`theory`] holds an exact checker for the 1D-vs-2D
//! patching relevance result on synthetic two-class instances.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the theory module
//! works over any exact ordered field such as `Ratio<i64>`.

pub mod analysis;
pub mod dataset;
pub mod embedding;
mod error;
pub mod imaging;
pub mod models;
mod scalar;
pub mod theory;

pub use error::{Error, ErrorCategory, Result};
pub use scalar::{Exact, Scalar};

pub use dataset::{Sample, Split, TimeSeriesDataset};
pub use embedding::{Aggregation, EmbeddingMatrix, ImageEmbedder, Source};
pub use imaging::{PatchGeometry, PatchingConfig};

pub type ImagePlaneF32 = imaging::ImagePlane<f32>;
pub type ImagePlaneF64 = imaging::ImagePlane<f64>;
pub type LogisticRegressionF32 = models::LogisticRegression<f32>;
pub type LogisticRegressionF64 = models::LogisticRegression<f64>;
pub type NearestCentroidF32 = models::NearestCentroid<f32>;
pub type NearestCentroidF64 = models::NearestCentroid<f64>;
pub type StandardizerF64 = models::Standardizer<f64>;
/// Exact rational used by the theory checker.
pub type Rational = num_rational::Ratio<i64>;
