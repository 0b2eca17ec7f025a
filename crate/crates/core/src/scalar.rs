//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Real scalar the analytic routines are generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumCast + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn c(x: f64) -> Self;

    /// Lossy conversion to `f64`.
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn of_usize(n: usize) -> Self {
        Self::c(n as f64)
    }

    /// Absolute tolerance that is at least `tol` and never below a few ulps.
    fn tol(tol: f64) -> Self {
        Self::c(tol).max(Self::epsilon() * Self::c(64.0))
    }
}

impl Scalar for f64 {
    #[inline]
    fn c(x: f64) -> Self {
        x
    }
}

impl Scalar for f32 {
    #[inline]
    fn c(x: f64) -> Self {
        x as f32
    }
}

/// `log(sum(exp(xs)))`, exact for `-inf` entries and empty input.
pub fn log_sum_exp<T: Scalar>(xs: impl IntoIterator<Item = T> + Clone) -> T {
    let max = xs
        .clone()
        .into_iter()
        .fold(T::neg_infinity(), |m, x| if x > m { x } else { m });
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    let s: T = xs.into_iter().map(|x| (x - max).exp()).sum();
    max + s.ln()
}

/// `log(sum_k w_k exp(x_k))` for nonnegative weights; zero weights drop out.
pub fn weighted_log_sum_exp<T: Scalar>(weights: &[T], logs: &[T]) -> T {
    debug_assert_eq!(weights.len(), logs.len());
    let terms: Vec<T> = weights
        .iter()
        .zip(logs)
        .map(|(&w, &x)| if w > T::zero() { w.ln() + x } else { T::neg_infinity() })
        .collect();
    log_sum_exp(terms.iter().copied())
}
