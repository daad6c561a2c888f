//! Floating-point scalar abstraction shared by the vector and ranking math.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar type the numeric routines are generic over (`f32` or `f64`).
///
/// Providers and the cache always work in `f64`; narrower scalars are reached
/// through [`EmbeddingVector::cast`](crate::EmbeddingVector::cast).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Converts a finite `f64`. Panics only if the value is not representable,
    /// which cannot happen for `f32`/`f64`.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 value representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
