//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to any float")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sum in f64 regardless of the element type.
pub fn sum_f64<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.f64()).sum()
}

/// Mean in f64; zero for an empty slice.
pub fn mean_f64<T: Scalar>(x: &[T]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        sum_f64(x) / x.len() as f64
    }
}

/// Population variance in f64.
pub fn variance_f64<T: Scalar>(x: &[T]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean_f64(x);
    x.iter().map(|v| (v.f64() - m).powi(2)).sum::<f64>() / x.len() as f64
}
