use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type shared by every tensor, graph and model in the crate.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Converts an `f64` constant; every `Scalar` can represent (an approximation of) any f64.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Floor used for `log` inputs and guarded denominators.
    fn tiny() -> Self {
        Self::of(1e-12)
    }
}

impl Scalar for f32 {
    fn tiny() -> Self {
        // 1e-12 is representable as a normal f32
        1e-12
    }
}

impl Scalar for f64 {}
