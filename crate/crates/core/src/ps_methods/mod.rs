//! Propensity-score adjustment: estimation of the score, caliper matching,
//! inverse probability weighting and stratification.

mod matching;
mod stratify;
mod weighting;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort_gen::Cohort;
use crate::glm::{self, DesignSpec, FitOptions, GlmError};
use crate::num::Scalar;

pub use matching::{compute_caliper, match_in_order, match_nearest, MatchedSet};
pub use stratify::{stratify, StratMethod, StratumAssignment};
pub use weighting::{ipw_weights, WeightVariant, WeightVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PsError {
    #[error("propensity model fit failed: {0}")]
    Glm(#[from] GlmError),
    #[error("propensity model must not contain the treatment term")]
    TreatmentInModel,
    #[error("propensity model did not converge in {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("{arm} arm has {count} subject(s); its PS variance is undefined")]
    UndefinedVariance { arm: &'static str, count: usize },
    #[error("{what}: expected length {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("propensity score {value} at subject {index} is outside (0, 1)")]
    InvalidScore { index: usize, value: f64 },
    #[error("cannot form {k} strata from {n} subjects")]
    TooFewSubjects { n: usize, k: usize },
    #[error("truncation percentile {0} must lie in (0, 0.5)")]
    InvalidPercentile(f64),
    #[error("caliper {0} must be finite and non-negative")]
    InvalidCaliper(f64),
}

/// Where a score vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsSource {
    Estimated,
    True,
}

/// Propensity scores strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PsVector<T> {
    values: Vec<T>,
    source: PsSource,
}

impl<T: Scalar> PsVector<T> {
    pub fn new(values: Vec<T>, source: PsSource) -> Result<Self, PsError> {
        if let Some((index, v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > T::zero() && v < T::one()))
        {
            return Err(PsError::InvalidScore {
                index,
                value: v.as_f64(),
            });
        }
        Ok(Self { values, source })
    }

    /// The generating scores recorded in a cohort.
    pub fn from_true(cohort: &Cohort<T>) -> Self {
        Self::new(cohort.true_ps().to_vec(), PsSource::True).expect("cohort scores lie in (0, 1)")
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn source(&self) -> PsSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fits `A ~ model` by maximum likelihood and returns the fitted scores,
/// clipped one machine epsilon away from 0 and 1.
pub fn estimate_ps<T: Scalar>(cohort: &Cohort<T>, model: &DesignSpec) -> Result<PsVector<T>, PsError> {
    if model.uses_treatment() {
        return Err(PsError::TreatmentInModel);
    }
    let fit = glm::fit_logistic(
        model,
        cohort.covariates(),
        None,
        cohort.treatment(),
        None,
        &FitOptions::for_scalar::<T>(),
    )?;
    if !fit.converged {
        return Err(PsError::NotConverged {
            iterations: fit.iterations,
        });
    }
    let lo = T::epsilon();
    let hi = T::one() - T::epsilon();
    let values = glm::predict_proba(&fit, model, cohort.covariates(), None)?
        .into_iter()
        .map(|p| p.max(lo).min(hi))
        .collect();
    PsVector::new(values, PsSource::Estimated)
}

/// The seven adjustment variants compared by the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "PSM")]
    Psm,
    #[serde(rename = "IPW")]
    Ipw,
    #[serde(rename = "IPW-trunc")]
    IpwTruncated,
    #[serde(rename = "IPW-stab")]
    IpwStabilized,
    #[serde(rename = "IPW-trunc-stab")]
    IpwTruncatedStabilized,
    #[serde(rename = "PSS-quantile")]
    PssQuantile,
    #[serde(rename = "PSS-psvalue")]
    PssPsValue,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Psm,
        Method::Ipw,
        Method::IpwTruncated,
        Method::IpwStabilized,
        Method::IpwTruncatedStabilized,
        Method::PssQuantile,
        Method::PssPsValue,
    ];

    /// Short identifier, also accepted by [`FromStr`].
    pub fn id(self) -> &'static str {
        match self {
            Method::Psm => "PSM",
            Method::Ipw => "IPW",
            Method::IpwTruncated => "IPW-trunc",
            Method::IpwStabilized => "IPW-stab",
            Method::IpwTruncatedStabilized => "IPW-trunc-stab",
            Method::PssQuantile => "PSS-quantile",
            Method::PssPsValue => "PSS-psvalue",
        }
    }

    /// Row label in the summary table.
    pub fn display_name(self) -> &'static str {
        match self {
            Method::Psm => "PSM",
            Method::Ipw => "IPW",
            Method::IpwTruncated => "IPW (truncated)",
            Method::IpwStabilized => "IPW (stabilized)",
            Method::IpwTruncatedStabilized => "IPW (trunc & stab)",
            Method::PssQuantile => "PSS (by quantile)",
            Method::PssPsValue => "PSS (by PS value)",
        }
    }

    pub fn weight_variant(self) -> Option<WeightVariant> {
        match self {
            Method::Ipw => Some(WeightVariant::Plain),
            Method::IpwTruncated => Some(WeightVariant::Truncated),
            Method::IpwStabilized => Some(WeightVariant::Stabilized),
            Method::IpwTruncatedStabilized => Some(WeightVariant::TruncatedStabilized),
            _ => None,
        }
    }

    pub fn strat_method(self) -> Option<StratMethod> {
        match self {
            Method::PssQuantile => Some(StratMethod::Quantile),
            Method::PssPsValue => Some(StratMethod::PsValue),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error(
    "unknown method `{0}`; valid methods are PSM, IPW, IPW-trunc, IPW-stab, IPW-trunc-stab, PSS-quantile, PSS-psvalue"
)]
pub struct UnknownMethod(pub String);

impl FromStr for Method {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.id().to_ascii_lowercase() == key)
            .ok_or_else(|| UnknownMethod(s.to_string()))
    }
}
