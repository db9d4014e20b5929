//! Marginal treatment-effect estimation and the counterfactual truth oracle.
//!
//! After adjustment, the effect is the treatment coefficient of the
//! saturated model `logit P(Y = 1 | A) = g0 + g1 A`. Its maximum-likelihood
//! estimate has the closed form `logit(p1) - logit(p0)` with `pa` the
//! (weighted) outcome share in arm `a`, which is what gets computed here.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort_gen::{self, Cohort, CohortError, ScenarioSpec};
use crate::num::Scalar;
use crate::ps_methods::{MatchedSet, Method, StratumAssignment, WeightVector};
use crate::rng::{self, Purpose, StreamKey};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EffectError {
    #[error("{arm} arm is empty")]
    EmptyArm { arm: &'static str },
    #[error("separation: every {arm} outcome is {value}; the log-odds ratio is infinite")]
    Separation { arm: &'static str, value: u8 },
    #[error("matching produced no pairs")]
    NoMatches,
    #[error("all {k} strata were dropped; no stratum has both arms with both outcomes")]
    AllStrataDropped { k: usize },
    #[error("{what}: expected length {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("weights must be finite and non-negative")]
    InvalidWeights,
}

/// One adjusted estimate of the marginal log-odds ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate<T> {
    pub gamma1_hat: T,
    pub method: Option<Method>,
    pub n_used: usize,
    pub strata_dropped: usize,
}

impl<T> EffectEstimate<T> {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = Some(method);
        self
    }
}

/// Closed-form treatment coefficient of the (weighted) saturated model.
pub fn marginal_effect<T: Scalar>(
    treatment: &[bool],
    outcome: &[bool],
    weights: Option<&WeightVector<T>>,
) -> Result<EffectEstimate<T>, EffectError> {
    marginal_effect_raw(treatment, outcome, weights.map(|w| w.values()))
}

/// [`marginal_effect`] with bare weights.
pub fn marginal_effect_raw<T: Scalar>(
    treatment: &[bool],
    outcome: &[bool],
    weights: Option<&[T]>,
) -> Result<EffectEstimate<T>, EffectError> {
    let n = treatment.len();
    if outcome.len() != n {
        return Err(EffectError::ShapeMismatch {
            what: "outcome",
            expected: n,
            found: outcome.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(EffectError::ShapeMismatch {
                what: "weights",
                expected: n,
                found: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(EffectError::InvalidWeights);
        }
    }
    // [arm][outcome] weighted counts.
    let mut mass = [[T::zero(); 2]; 2];
    for i in 0..n {
        let w = weights.map_or(T::one(), |w| w[i]);
        let cell = &mut mass[usize::from(treatment[i])][usize::from(outcome[i])];
        *cell = *cell + w;
    }
    let log_odds = |arm: usize, name: &'static str| -> Result<T, EffectError> {
        let [neg, pos] = mass[arm];
        if !(neg + pos > T::zero()) {
            return Err(EffectError::EmptyArm { arm: name });
        }
        if !(pos > T::zero()) {
            return Err(EffectError::Separation { arm: name, value: 0 });
        }
        if !(neg > T::zero()) {
            return Err(EffectError::Separation { arm: name, value: 1 });
        }
        Ok((pos / neg).ln())
    };
    let gamma1_hat = log_odds(1, "treated")? - log_odds(0, "control")?;
    Ok(EffectEstimate {
        gamma1_hat,
        method: None,
        n_used: n,
        strata_dropped: 0,
    })
}

/// Unweighted effect over the matched subjects only.
pub fn matched_effect<T: Scalar>(
    cohort: &Cohort<T>,
    matches: &MatchedSet<T>,
) -> Result<EffectEstimate<T>, EffectError> {
    if matches.is_empty() {
        return Err(EffectError::NoMatches);
    }
    let (a, y): (Vec<bool>, Vec<bool>) = matches
        .pairs
        .iter()
        .flat_map(|&(t, c)| [t, c])
        .map(|i| (cohort.treatment()[i], cohort.outcome()[i]))
        .unzip();
    let est = marginal_effect_raw::<T>(&a, &y, None)?;
    Ok(EffectEstimate {
        method: Some(Method::Psm),
        ..est
    })
}

/// Size-weighted mean of the stratum-specific effects. Strata without both
/// arms, or with an arm whose outcomes are all equal, are dropped and the
/// weights renormalized over the rest.
pub fn stratified_effect<T: Scalar>(
    cohort: &Cohort<T>,
    strata: &StratumAssignment<T>,
) -> Result<EffectEstimate<T>, EffectError> {
    if strata.stratum_of.len() != cohort.len() {
        return Err(EffectError::ShapeMismatch {
            what: "stratum labels",
            expected: cohort.len(),
            found: strata.stratum_of.len(),
        });
    }
    let mut members: Vec<(Vec<bool>, Vec<bool>)> = vec![(Vec::new(), Vec::new()); strata.k];
    for (i, &s) in strata.stratum_of.iter().enumerate() {
        members[s - 1].0.push(cohort.treatment()[i]);
        members[s - 1].1.push(cohort.outcome()[i]);
    }
    let surviving: Vec<(usize, T)> = members
        .iter()
        .filter_map(|(a, y)| {
            marginal_effect_raw::<T>(a, y, None)
                .ok()
                .map(|est| (a.len(), est.gamma1_hat))
        })
        .collect();
    let gamma1_hat = pool_strata(&surviving).ok_or(EffectError::AllStrataDropped { k: strata.k })?;
    let method = match strata.method {
        crate::ps_methods::StratMethod::Quantile => Method::PssQuantile,
        crate::ps_methods::StratMethod::PsValue => Method::PssPsValue,
    };
    Ok(EffectEstimate {
        gamma1_hat,
        method: Some(method),
        n_used: surviving.iter().map(|s| s.0).sum(),
        strata_dropped: strata.k - surviving.len(),
    })
}

/// Mean of stratum effects weighted by stratum size.
fn pool_strata<T: Scalar>(parts: &[(usize, T)]) -> Option<T> {
    let n: usize = parts.iter().map(|p| p.0).sum();
    if n == 0 {
        return None;
    }
    let total = parts
        .iter()
        .fold(T::zero(), |acc, &(size, effect)| acc + T::lit(size as f64) * effect);
    Some(total / T::lit(n as f64))
}

/// Ground truth for one scenario on the scale of the effect model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    /// The conditional log-odds ratio fed to the outcome model.
    pub conditional_gamma1: f64,
    pub marginal_ate: f64,
    pub marginal_ate_se: f64,
    pub marginal_att: f64,
    pub marginal_att_se: f64,
    /// Number of simulated cohorts.
    pub mc_reps: usize,
    /// Total simulated subjects (`mc_reps * n`).
    pub subject_draws: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct PotentialOutcomeCounts {
    n: u64,
    y1: u64,
    y0: u64,
    both: u64,
}

impl PotentialOutcomeCounts {
    fn add(self, o: Self) -> Self {
        Self {
            n: self.n + o.n,
            y1: self.y1 + o.y1,
            y0: self.y0 + o.y0,
            both: self.both + o.both,
        }
    }

    /// Log-odds contrast and its delta-method standard error.
    fn contrast(&self) -> (f64, f64) {
        let n = self.n as f64;
        let (m1, m0, m10) = (self.y1 as f64 / n, self.y0 as f64 / n, self.both as f64 / n);
        let (v1, v0) = (m1 * (1.0 - m1), m0 * (1.0 - m0));
        let est = (m1 / (1.0 - m1)).ln() - (m0 / (1.0 - m0)).ln();
        let var = 1.0 / v1 + 1.0 / v0 - 2.0 * (m10 - m1 * m0) / (v1 * v0);
        (est, (var.max(0.0) / n).sqrt())
    }
}

/// Monte Carlo counterfactual oracle.
///
/// Simulates `mc_reps` cohorts of `spec.n` subjects and draws both potential
/// outcomes of every subject from one shared uniform, with the treatment
/// forced to 1 and to 0. The marginal ATE is the log-odds contrast of the
/// potential-outcome means over everyone, the ATT the same over subjects
/// whose realized treatment is 1.
pub fn true_marginal_effect(spec: &ScenarioSpec, mc_reps: usize, seed: u64) -> Result<TruthReport, CohortError> {
    let mc_reps = mc_reps.max(1);
    let per_cohort = (0..mc_reps as u64)
        .into_par_iter()
        .map(
            |r| -> Result<(PotentialOutcomeCounts, PotentialOutcomeCounts), CohortError> {
                let key = |sub: u64| StreamKey::new(Purpose::Oracle).cohort(r).extra(sub);
                let rows =
                    cohort_gen::sample_covariates::<f64>(spec.n, &spec.correlation, &mut rng::stream(seed, key(1)))?;
                let ps = cohort_gen::true_ps(spec, &rows);
                let treatment = cohort_gen::assign_treatment(&ps, &mut rng::stream(seed, key(2)));
                let mut uniforms = rng::stream(seed, key(3));
                let mut all = PotentialOutcomeCounts::default();
                let mut treated = PotentialOutcomeCounts::default();
                let c = &spec.coefficients;
                for (row, &a) in rows.iter().zip(&treatment) {
                    let u: f64 = uniforms.random();
                    let y1 = u < crate::num::expit(c.outcome_logit(row, true));
                    let y0 = u < crate::num::expit(c.outcome_logit(row, false));
                    let obs = PotentialOutcomeCounts {
                        n: 1,
                        y1: u64::from(y1),
                        y0: u64::from(y0),
                        both: u64::from(y1 && y0),
                    };
                    all = all.add(obs);
                    if a {
                        treated = treated.add(obs);
                    }
                }
                Ok((all, treated))
            },
        )
        .collect::<Result<Vec<_>, _>>()?;
    let (all, treated) = per_cohort.into_iter().fold(
        Default::default(),
        |(a, t): (PotentialOutcomeCounts, PotentialOutcomeCounts), (x, y)| (a.add(x), t.add(y)),
    );
    let (ate, ate_se) = all.contrast();
    let (att, att_se) = treated.contrast();
    Ok(TruthReport {
        conditional_gamma1: spec.coefficients.gamma1,
        marginal_ate: ate,
        marginal_ate_se: ate_se,
        marginal_att: att,
        marginal_att_se: att_se,
        mc_reps,
        subject_draws: all.n,
    })
}
