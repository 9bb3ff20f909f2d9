use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Element type for all kernel numerics.
///
/// Implemented for `f32` and `f64`. The bound set is the intersection of
/// what the tensor ops, the reverse-mode graph, and the finite-difference
/// checks need: full float arithmetic, conversion from literals, and the
/// usual utility traits for diagnostics.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from `f64` for constants and tolerances.
    fn from_f64_lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 literal converts to any Scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_of_squares<S: Scalar>(xs: &[S]) -> S {
        xs.iter().fold(S::zero(), |acc, &x| acc + x * x)
    }

    #[test]
    fn generic_helpers_work_for_both_widths() {
        let a32: [f32; 3] = [1.0, 2.0, 3.0];
        let a64: [f64; 3] = [1.0, 2.0, 3.0];
        assert_eq!(sum_of_squares(&a32), 14.0f32);
        assert_eq!(sum_of_squares(&a64), 14.0f64);
    }

    #[test]
    fn literal_conversion_round_trips() {
        assert_eq!(f64::from_f64_lit(0.25), 0.25);
        assert_eq!(f32::from_f64_lit(0.25), 0.25f32);
    }
}
