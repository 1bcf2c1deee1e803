//! Scalar abstraction shared by the numeric parts of the pipeline.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the geometry, feature and classifier code is
/// written against. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts a literal. Every finite `f64` has a nearest value in the
    /// supported types, so this cannot fail for them.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub fn logistic<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Least-squares slope of `ys` against x = 0, 1, .., n-1.
pub fn least_squares_slope<T: Scalar>(ys: &[T]) -> Option<T> {
    if ys.len() < 2 {
        return None;
    }
    let n = T::from_usize(ys.len())?;
    let two = T::of(2.0);
    let mean_x = (n - T::one()) / two;
    let mean_y = ys.iter().fold(T::zero(), |acc, &y| acc + y) / n;
    let mut num = T::zero();
    let mut den = T::zero();
    for (i, &y) in ys.iter().enumerate() {
        let dx = T::from_usize(i)? - mean_x;
        num = num + dx * (y - mean_y);
        den = den + dx * dx;
    }
    Some(num / den)
}

/// Nearest-rank percentile of an ascending slice, `p` in [0, 100].
pub fn percentile<T: Copy>(sorted: &[T], p: f64) -> Option<T> {
    if sorted.is_empty() || !(0.0..=100.0).contains(&p) {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_lines() {
        let ys: Vec<f64> = (0..7).map(|i| 3.0 - i as f64).collect();
        assert!((least_squares_slope(&ys).unwrap() + 1.0).abs() < 1e-12);
        let flat = [2.5f32; 7];
        assert_eq!(least_squares_slope(&flat).unwrap(), 0.0);
        assert_eq!(least_squares_slope::<f64>(&[1.0]), None);
    }

    #[test]
    fn logistic_midpoint_and_order() {
        assert_eq!(logistic(0.0f64), 0.5);
        assert!(logistic(2.0f32) > logistic(1.0f32));
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<u32> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), Some(50));
        assert_eq!(percentile(&v, 99.0), Some(99));
        assert_eq!(percentile(&v, 100.0), Some(100));
        assert_eq!(percentile(&v, 0.0), Some(1));
        assert_eq!(percentile(&[7u32], 99.0), Some(7));
        assert_eq!(percentile::<u32>(&[], 50.0), None);
    }
}
