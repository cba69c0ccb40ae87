//! Geometry of embedding spaces: intrinsic dimension, cross-space
//! neighbourhood alignment and PCA variance counts.

mod alignment;
mod neighbors;
mod pca;
mod twonn;

pub use alignment::{mutual_knn, AlignmentScore};
pub use neighbors::knn;
pub use pca::{explained_variance, pca_components_for_variance};
pub use twonn::{distinct_rows, id_with_subsampling, twonn_id, IdEstimate, IdMethod, MIN_DISTINCT_ROWS};
