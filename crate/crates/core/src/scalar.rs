//! Numeric abstraction for reward and score arithmetic.
//!
//! All reward weights are small integer fractions, so every quantity can be
//! computed exactly with a rational type. Pipelines that persist values use
//! `f64`; oracles and brute-force checks use [`num_rational::Ratio`].

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Scalar usable for reward units and block scores.
pub trait Scalar:
    Num + Copy + PartialOrd + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar")
    }

    /// `num / den` as a scalar. `den` must be non-zero.
    fn fraction(num: u64, den: u64) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Num + Copy + PartialOrd + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

/// Sum of an iterator of scalars.
pub fn sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    values.into_iter().fold(T::zero(), |acc, v| acc + v)
}
