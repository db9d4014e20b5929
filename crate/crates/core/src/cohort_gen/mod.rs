//! Synthetic observational cohorts.
//!
//! Ten latent standard normals with a configurable correlation structure are
//! drawn per subject; W1, W3, W5, W6, W8 and W9 are then dichotomized at 0.
//! Treatment follows a scenario-specific logistic model of W1..W7, and the
//! binary outcome a logistic model of W1..W4, W8..W10 and the treatment.

mod config;
mod csv;
mod scenario;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{Cholesky, SquareMatrix};
use crate::num::{expit, Scalar};
use crate::rng::{self, Purpose, Stream, StreamKey};

pub use config::{ConfigError, ParameterFile, DEFAULT_PARAMETERS};
pub use csv::{read_cohort_csv, write_cohort_csv, COHORT_CSV_HEADER};
pub use scenario::{InteractionTerm, ScenarioLabel, ScenarioSpec, UnknownScenario, INTERACTION_TERMS, QUADRATIC_TERMS};

pub const NUM_COVARIATES: usize = 10;

/// Zero-based columns that are dichotomized: W1, W3, W5, W6, W8, W9.
pub const BINARY_COLUMNS: [usize; 6] = [0, 2, 4, 5, 7, 8];

/// Zero-based columns left continuous: W2, W4, W7, W10.
pub const CONTINUOUS_COLUMNS: [usize; 4] = [1, 3, 6, 9];

pub type CovariateRow<T> = [T; NUM_COVARIATES];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CohortError {
    #[error("correlation entry ({row}, {col}) = {value}: {reason}")]
    InvalidCorrelation {
        row: usize,
        col: usize,
        value: f64,
        reason: &'static str,
    },
    #[error("correlation matrix is not positive definite: leading minor of order {minor} is not positive")]
    NotPositiveDefinite { minor: usize },
    #[error("coefficient `{name}` is not finite")]
    NonFiniteCoefficient { name: String },
    #[error("{what}: expected length {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("cohort must contain at least one subject")]
    Empty,
    #[error("probability at subject {index} is {value}, outside (0, 1)")]
    InvalidProbability { index: usize, value: f64 },
}

/// Correlations of the ten latent normals. Symmetric with unit diagonal and
/// entries in [-1, 1]; positive definiteness is checked when factorized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    entries: Vec<f64>,
}

impl CorrelationMatrix {
    /// `entries` is row-major 10x10.
    pub fn new(entries: Vec<f64>) -> Result<Self, CohortError> {
        let d = NUM_COVARIATES;
        if entries.len() != d * d {
            return Err(CohortError::ShapeMismatch {
                what: "correlation entries",
                expected: d * d,
                found: entries.len(),
            });
        }
        for i in 0..d {
            for j in 0..d {
                let value = entries[i * d + j];
                let bad = |reason| CohortError::InvalidCorrelation {
                    row: i,
                    col: j,
                    value,
                    reason,
                };
                if !value.is_finite() || value.abs() > 1.0 {
                    return Err(bad("must be a finite value in [-1, 1]"));
                }
                if i == j && value != 1.0 {
                    return Err(bad("diagonal must be 1"));
                }
                if (value - entries[j * d + i]).abs() > 1e-12 {
                    return Err(bad("matrix must be symmetric"));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn identity() -> Self {
        let m = SquareMatrix::<f64>::identity(NUM_COVARIATES);
        Self {
            entries: m.as_slice().to_vec(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * NUM_COVARIATES + col]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn factor(&self) -> Result<Cholesky<f64>, CohortError> {
        let m = SquareMatrix::from_row_major(NUM_COVARIATES, self.entries.clone());
        Cholesky::factor(&m, 0.0).map_err(|e| CohortError::NotPositiveDefinite { minor: e.pivot + 1 })
    }
}

impl Default for CorrelationMatrix {
    fn default() -> Self {
        ParameterFile::defaults()
            .correlation()
            .expect("built-in correlation is valid")
    }
}

/// Treatment (`beta`) and outcome (`alpha`, `gamma1`) model coefficients on
/// the log-odds scale. `alpha[5..8]` multiply W8, W9, W10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub beta: [f64; 8],
    pub alpha: [f64; 8],
    pub gamma1: f64,
}

impl CoefficientSet {
    pub fn new(beta: [f64; 8], alpha: [f64; 8], gamma1: f64) -> Result<Self, CohortError> {
        let check = |name: String, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(CohortError::NonFiniteCoefficient { name })
            }
        };
        for i in 0..8 {
            check(format!("beta{i}"), beta[i])?;
            check(format!("alpha{i}"), alpha[i])?;
        }
        check("gamma1".into(), gamma1)?;
        Ok(Self { beta, alpha, gamma1 })
    }

    pub fn with_gamma1(mut self, gamma1: f64) -> Self {
        self.gamma1 = gamma1;
        self
    }

    /// Outcome-model linear predictor for a subject with treatment `a`.
    pub fn outcome_logit<T: Scalar>(&self, row: &CovariateRow<T>, treated: bool) -> T {
        const OUTCOME_COLUMNS: [usize; 7] = [0, 1, 2, 3, 7, 8, 9];
        let a = &self.alpha;
        let mut eta = T::lit(a[0]);
        for (k, &c) in OUTCOME_COLUMNS.iter().enumerate() {
            eta = eta + T::lit(a[k + 1]) * row[c];
        }
        if treated {
            eta = eta + T::lit(self.gamma1);
        }
        eta
    }
}

impl Default for CoefficientSet {
    fn default() -> Self {
        ParameterFile::defaults()
            .coefficients()
            .expect("built-in coefficients are valid")
    }
}

/// A simulated cohort. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort<T> {
    covariates: Vec<CovariateRow<T>>,
    treatment: Vec<bool>,
    outcome: Vec<bool>,
    true_ps: Vec<T>,
}

impl<T: Scalar> Cohort<T> {
    pub fn from_parts(
        covariates: Vec<CovariateRow<T>>,
        treatment: Vec<bool>,
        outcome: Vec<bool>,
        true_ps: Vec<T>,
    ) -> Result<Self, CohortError> {
        let n = covariates.len();
        if n == 0 {
            return Err(CohortError::Empty);
        }
        for (what, len) in [
            ("treatment", treatment.len()),
            ("outcome", outcome.len()),
            ("true_ps", true_ps.len()),
        ] {
            if len != n {
                return Err(CohortError::ShapeMismatch {
                    what,
                    expected: n,
                    found: len,
                });
            }
        }
        if let Some((index, p)) = true_ps
            .iter()
            .enumerate()
            .find(|(_, &p)| !(p > T::zero() && p < T::one()))
        {
            return Err(CohortError::InvalidProbability {
                index,
                value: p.as_f64(),
            });
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
            true_ps,
        })
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn covariates(&self) -> &[CovariateRow<T>] {
        &self.covariates
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[bool] {
        &self.outcome
    }

    pub fn true_ps(&self) -> &[T] {
        &self.true_ps
    }

    pub fn treated_fraction(&self) -> f64 {
        self.treatment.iter().filter(|&&a| a).count() as f64 / self.len() as f64
    }

    /// The subjects at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Cohort<T> {
        Cohort {
            covariates: indices.iter().map(|&i| self.covariates[i]).collect(),
            treatment: indices.iter().map(|&i| self.treatment[i]).collect(),
            outcome: indices.iter().map(|&i| self.outcome[i]).collect(),
            true_ps: indices.iter().map(|&i| self.true_ps[i]).collect(),
        }
    }
}

/// Draws `n` correlated rows and dichotomizes the binary columns at 0.
pub fn sample_covariates<T: Scalar>(
    n: usize,
    corr: &CorrelationMatrix,
    stream: &mut Stream,
) -> Result<Vec<CovariateRow<T>>, CohortError> {
    if n == 0 {
        return Err(CohortError::Empty);
    }
    let chol = corr.factor()?;
    let mut z = [0.0f64; NUM_COVARIATES];
    let mut x = [0.0f64; NUM_COVARIATES];
    let rows = (0..n)
        .map(|_| {
            for v in z.iter_mut() {
                *v = stream.sample(StandardNormal);
            }
            chol.mul_lower(&z, &mut x);
            for &c in &BINARY_COLUMNS {
                x[c] = if x[c] > 0.0 { 1.0 } else { 0.0 };
            }
            x.map(T::lit)
        })
        .collect();
    Ok(rows)
}

/// True propensity scores under the scenario's treatment model. W8..W10
/// never enter.
pub fn true_ps<T: Scalar>(spec: &ScenarioSpec, covariates: &[CovariateRow<T>]) -> Vec<T> {
    covariates.iter().map(|row| expit(spec.treatment_logit(row))).collect()
}

/// Independent Bernoulli draws, one per propensity score.
pub fn assign_treatment<T: Scalar>(ps: &[T], stream: &mut Stream) -> Vec<bool> {
    ps.iter().map(|p| stream.random::<f64>() < p.as_f64()).collect()
}

/// Outcome probabilities under the outcome model. W5..W7 never enter.
pub fn outcome_probabilities<T: Scalar>(
    treatment: &[bool],
    covariates: &[CovariateRow<T>],
    coeffs: &CoefficientSet,
) -> Vec<T> {
    covariates
        .iter()
        .zip(treatment)
        .map(|(row, &a)| expit(coeffs.outcome_logit(row, a)))
        .collect()
}

pub fn generate_outcome<T: Scalar>(
    treatment: &[bool],
    covariates: &[CovariateRow<T>],
    coeffs: &CoefficientSet,
    stream: &mut Stream,
) -> Result<Vec<bool>, CohortError> {
    if treatment.len() != covariates.len() {
        return Err(CohortError::ShapeMismatch {
            what: "treatment",
            expected: covariates.len(),
            found: treatment.len(),
        });
    }
    Ok(outcome_probabilities(treatment, covariates, coeffs)
        .into_iter()
        .map(|p| stream.random::<f64>() < p.as_f64())
        .collect())
}

/// The base cohort (cohort index 0) for `spec` under `seed`.
pub fn generate_cohort<T: Scalar>(spec: &ScenarioSpec, seed: u64) -> Result<Cohort<T>, CohortError> {
    generate_cohort_at(spec, seed, 0)
}

/// Cohort number `cohort_index` under `seed`. Covariate draws depend only on
/// `(seed, cohort_index)`, so every scenario sees the same covariates.
pub fn generate_cohort_at<T: Scalar>(
    spec: &ScenarioSpec,
    seed: u64,
    cohort_index: u64,
) -> Result<Cohort<T>, CohortError> {
    let key = |p| StreamKey::new(p).cohort(cohort_index);
    let covariates = sample_covariates(
        spec.n,
        &spec.correlation,
        &mut rng::stream(seed, key(Purpose::Covariates)),
    )?;
    // Clip into the open interval; expit saturates to exactly 0 or 1 far out.
    let ps: Vec<T> = true_ps::<T>(spec, &covariates)
        .into_iter()
        .map(|p| p.max(T::min_positive_value()).min(T::one() - T::epsilon()))
        .collect();
    let treatment = assign_treatment(&ps, &mut rng::stream(seed, key(Purpose::Treatment)));
    let outcome = generate_outcome(
        &treatment,
        &covariates,
        &spec.coefficients,
        &mut rng::stream(seed, key(Purpose::Outcome)),
    )?;
    Cohort::from_parts(covariates, treatment, outcome, ps)
}
