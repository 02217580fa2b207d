//! Scalar traits shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Real scalar used by the classifier and the statistics code.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar converts to f64")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
}

/// A ratio of counts. Floats qualify, and so do exact rationals such as
/// [`num::BigRational`], which makes count-derived metrics comparable with `==`.
pub trait Fraction: Num + FromPrimitive + Clone + PartialOrd + Debug {
    fn from_count(v: u64) -> Self {
        Self::from_u64(v).expect("count is representable")
    }

    fn ratio(num: u64, den: u64) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }
}

impl<T> Fraction for T where T: Num + FromPrimitive + Clone + PartialOrd + Debug {}
