//! Floating-point abstraction shared by the numeric modules.
//!
//! Everything that does real-valued math (imaging, classifiers, geometry
//! estimators) is written against [`Scalar`] so it runs in `f32` or `f64`.
//! The label-relevance simulator in [`crate::theory`] needs less than a
//! float (only ring operations and ordering) and is generic over
//! [`Exact`] instead, which also admits rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::{FromPrimitive, Num, ToPrimitive};

pub trait Scalar:
    NdFloat + FromPrimitive + ToPrimitive + Default + Sum + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; used for literals and configuration values.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Ring elements with a total-enough order: floats and exact rationals.
pub trait Exact: Num + Clone + PartialOrd + Debug + Display + Send + Sync {}

impl<T> Exact for T where T: Num + Clone + PartialOrd + Debug + Display + Send + Sync {}
