//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the estimators are generic over.
///
/// Besides the arithmetic bounds, each precision carries the default
/// convergence tolerances of the logistic solver, since the `f64` targets are
/// not reachable in single precision.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Max-norm of the score vector below which a fit counts as converged.
    const GRADIENT_TOL: f64;
    /// Relative log-likelihood change below which a fit counts as converged.
    const LOGLIK_REL_TOL: f64;

    /// Converts an `f64` literal. Never fails for the implemented types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

macro_rules! impl_scalar {
    ($t:ty, $grad:expr, $ll:expr) => {
        impl Scalar for $t {
            const GRADIENT_TOL: f64 = $grad;
            const LOGLIK_REL_TOL: f64 = $ll;
        }
    };
}

impl_scalar!(f64, 1e-8, 1e-10);
impl_scalar!(f32, 1e-3, 1e-6);

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn expit<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn log1p_exp<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Empirical quantile by linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_type7<T: Scalar>(sorted: &[T], p: f64) -> T {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n || frac == 0.0 {
        return sorted[lo.min(n - 1)];
    }
    let f = T::lit(frac);
    sorted[lo] + f * (sorted[lo + 1] - sorted[lo])
}

/// Empirical quantile by the inverse empirical CDF (Hyndman-Fan type 1):
/// the order statistic of rank `ceil(n p)`, clamped to `[1, n]`.
pub fn quantile_nearest_rank<T: Scalar>(sorted: &[T], p: f64) -> T {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((n as f64) * p.clamp(0.0, 1.0)).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}
