//! Floating-point scalar abstraction shared by the numeric parts of the engine.
//!
//! Counts, timestamps and satoshi amounts are stored as integers. Everything
//! derived from them (measure values, histogram edges, k-means coordinates,
//! glyph positions) is computed in a [`Scalar`], which is `f64` by default and
//! `f32` where memory matters more than precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    fn of_u64(v: u64) -> Self {
        Self::from_u64(v).expect("u64 is representable in a float scalar")
    }

    fn of_i64(v: i64) -> Self {
        Self::from_i64(v).expect("i64 is representable in a float scalar")
    }

    fn of_f64(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in a float scalar")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable in a float scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn half() -> Self {
        Self::of_f64(0.5)
    }

    /// Largest representable value strictly below `self`.
    fn next_below(self) -> Self;
}

impl Scalar for f64 {
    fn next_below(self) -> Self {
        self.next_down()
    }
}

impl Scalar for f32 {
    fn next_below(self) -> Self {
        self.next_down()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn next_below_is_adjacent() {
        let x = 3.0f64;
        assert!(x.next_below() < x);
        assert_eq!(x.next_below().next_up(), x);
        let y = 3.0f32;
        assert!(y.next_below() < y);
    }

    #[test]
    fn conversions() {
        assert_eq!(f64::of_u64(2_000_000), 2_000_000.0);
        assert_eq!(f32::of_i64(-3), -3.0);
        assert_eq!(f32::half().as_f64(), 0.5);
    }
}
