//! Simulation laboratory for propensity-score treatment-effect estimators.
//!
//! Cohorts are simulated under seven confounding scenarios ([`cohort_gen`]),
//! propensity scores are estimated with a weighted logistic regression
//! ([`glm`]), and the adjustment methods of [`ps_methods`] are compared on
//! the marginal log-odds ratio they recover ([`effect_est`]) over repeated
//! subsamples ([`sim_harness`]).
//!
//! The numerical modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the precision to `f64`.

// `!(x > 0)` is how the numerical code rejects NaN along with non-positives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort_gen;
pub mod effect_est;
pub mod glm;
pub mod linalg;
pub mod num;
pub mod ps_methods;
pub mod rng;
pub mod sim_harness;

pub use num::Scalar;

pub type Cohort = cohort_gen::Cohort<f64>;
pub type Cohort32 = cohort_gen::Cohort<f32>;
pub type LogisticFit = glm::LogisticFit<f64>;
pub type LogisticFit32 = glm::LogisticFit<f32>;
pub type PsVector = ps_methods::PsVector<f64>;
pub type WeightVector = ps_methods::WeightVector<f64>;
pub type MatchedSet = ps_methods::MatchedSet<f64>;
pub type StratumAssignment = ps_methods::StratumAssignment<f64>;
pub type EffectEstimate = effect_est::EffectEstimate<f64>;
pub type MethodResult = sim_harness::MethodResult<f64>;

pub use cohort_gen::{CoefficientSet, CorrelationMatrix, ScenarioLabel, ScenarioSpec};
pub use effect_est::TruthReport;
pub use glm::{DesignSpec, Term};
pub use ps_methods::Method;
pub use sim_harness::{ExperimentConfig, ExperimentSummary};
