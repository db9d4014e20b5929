//! Inverse probability of treatment weights.

use serde::{Deserialize, Serialize};

use super::{PsError, PsVector};
use crate::num::{quantile_nearest_rank, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightVariant {
    Plain,
    Truncated,
    Stabilized,
    TruncatedStabilized,
}

impl WeightVariant {
    pub fn stabilized(self) -> bool {
        matches!(self, WeightVariant::Stabilized | WeightVariant::TruncatedStabilized)
    }

    pub fn truncated(self) -> bool {
        matches!(self, WeightVariant::Truncated | WeightVariant::TruncatedStabilized)
    }
}

/// Positive, finite subject weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T> {
    values: Vec<T>,
    variant: WeightVariant,
    truncation_percentile: Option<f64>,
    /// Clamp bounds applied by the last truncation.
    bounds: Option<(T, T)>,
}

impl<T: Scalar> WeightVector<T> {
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn variant(&self) -> WeightVariant {
        self.variant
    }

    pub fn truncation_percentile(&self) -> Option<f64> {
        self.truncation_percentile
    }

    pub fn bounds(&self) -> Option<(T, T)> {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    /// Clamps the weights to their empirical `p` and `1 - p` percentiles.
    ///
    /// Percentiles are order statistics of rank `ceil(n p)` and
    /// `ceil(n (1 - p))` (inverse empirical CDF), so each bound is an
    /// attained weight and truncating twice at the same `p` changes nothing.
    pub fn truncate(self, p: f64) -> Result<Self, PsError> {
        if !(p > 0.0 && p < 0.5) {
            return Err(PsError::InvalidPercentile(p));
        }
        let mut sorted = self.values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));
        let lo = quantile_nearest_rank(&sorted, p);
        let hi = quantile_nearest_rank(&sorted, 1.0 - p);
        let values = self.values.iter().map(|&w| w.max(lo).min(hi)).collect();
        let variant = if self.variant.stabilized() {
            WeightVariant::TruncatedStabilized
        } else {
            WeightVariant::Truncated
        };
        Ok(Self {
            values,
            variant,
            truncation_percentile: Some(p),
            bounds: Some((lo, hi)),
        })
    }
}

/// Weights `1 / P(A_i | W_i)`; stabilized variants multiply by the sample
/// share of the arm received, truncated variants then clamp at the `p` and
/// `1 - p` percentiles of the weights. `truncation_percentile` is ignored
/// by untruncated variants.
pub fn ipw_weights<T: Scalar>(
    ps: &PsVector<T>,
    treatment: &[bool],
    variant: WeightVariant,
    truncation_percentile: f64,
) -> Result<WeightVector<T>, PsError> {
    if ps.len() != treatment.len() {
        return Err(PsError::ShapeMismatch {
            what: "treatment",
            expected: ps.len(),
            found: treatment.len(),
        });
    }
    let n = treatment.len();
    let treated_share = T::lit(treatment.iter().filter(|&&a| a).count() as f64 / n.max(1) as f64);
    let (num1, num0) = if variant.stabilized() {
        (treated_share, T::one() - treated_share)
    } else {
        (T::one(), T::one())
    };
    let values = ps
        .values()
        .iter()
        .zip(treatment)
        .map(|(&p, &a)| if a { num1 / p } else { num0 / (T::one() - p) })
        .collect();
    let base = WeightVector {
        values,
        variant: if variant.stabilized() {
            WeightVariant::Stabilized
        } else {
            WeightVariant::Plain
        },
        truncation_percentile: None,
        bounds: None,
    };
    if variant.truncated() {
        base.truncate(truncation_percentile)
    } else {
        Ok(base)
    }
}
