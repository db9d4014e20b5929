//! The resampling experiment.
//!
//! One base cohort is simulated per scenario; each replicate draws a simple
//! random subsample without replacement, fits the propensity model on it
//! once, and runs every selected method on the same scores. Per method, the
//! replicate estimates are summarized by their mean and the 2.5th/97.5th
//! empirical percentiles.
//!
//! Each replicate derives its streams from `(master_seed, replicate)`, and
//! results are gathered in replicate order, so summaries do not depend on
//! the number of worker threads.

mod export;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort_gen::{self, CoefficientSet, Cohort, CohortError, CorrelationMatrix, ScenarioLabel, ScenarioSpec};
use crate::effect_est::{self, EffectEstimate, TruthReport};
use crate::glm::DesignSpec;
use crate::num::{quantile_type7, Scalar};
use crate::ps_methods::{self, Method, PsVector};
use crate::rng::{self, Purpose, StreamKey};

pub use export::{to_csv, to_json, to_markdown, to_plot_csv};

/// Share of failed replicates above which a cell is flagged.
pub const FAILURE_WARNING_FRACTION: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error("could not start worker pool: {0}")]
    ThreadPool(String),
}

/// Which terms the estimated propensity model uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsModelChoice {
    /// Intercept and main effects of W1..W10.
    MainEffects,
    /// The scenario's own treatment model.
    TrueDesign,
    Custom(DesignSpec),
}

impl PsModelChoice {
    pub fn design_for(&self, spec: &ScenarioSpec) -> DesignSpec {
        match self {
            PsModelChoice::MainEffects => DesignSpec::all_main_effects(),
            PsModelChoice::TrueDesign => spec.design(),
            PsModelChoice::Custom(d) => d.clone(),
        }
    }
}

/// Tuning of the adjustment methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub methods: Vec<Method>,
    pub truncation_percentile: f64,
    pub strata: usize,
    pub caliper_multiplier: f64,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            truncation_percentile: 0.01,
            strata: 5,
            caliper_multiplier: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenarios: Vec<ScenarioLabel>,
    pub n: usize,
    pub reps: usize,
    pub subsample_fraction: f64,
    #[serde(flatten)]
    pub settings: MethodSettings,
    pub ps_model: PsModelChoice,
    pub master_seed: u64,
    pub coefficients: CoefficientSet,
    pub correlation: CorrelationMatrix,
    /// Where the coefficients and correlations were read from, for the record.
    pub parameter_sources: Vec<String>,
    /// Simulate a fresh cohort for every replicate instead of subsampling
    /// one fixed base cohort.
    pub regenerate_cohort: bool,
    /// Subject draws used by the truth oracle; 0 skips it.
    pub oracle_subject_draws: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenarios: ScenarioLabel::ALL.to_vec(),
            n: 20_000,
            reps: 1000,
            subsample_fraction: 0.7,
            settings: MethodSettings::default(),
            ps_model: PsModelChoice::MainEffects,
            master_seed: 1,
            coefficients: CoefficientSet::default(),
            correlation: CorrelationMatrix::default(),
            parameter_sources: vec!["<built-in defaults>".into()],
            regenerate_cohort: false,
            oracle_subject_draws: 1_000_000,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.scenarios.is_empty() {
            return bad("no scenarios selected".into());
        }
        if self.settings.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.n == 0 {
            return bad("cohort size must be at least 1".into());
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return bad(format!(
                "subsample fraction {} must lie in (0, 1]",
                self.subsample_fraction
            ));
        }
        if self.subsample_size() == 0 {
            return bad("subsample would be empty".into());
        }
        let p = self.settings.truncation_percentile;
        if !(p > 0.0 && p < 0.5) {
            return bad(format!("truncation percentile {p} must lie in (0, 0.5)"));
        }
        if self.settings.strata == 0 {
            return bad("strata must be at least 1".into());
        }
        let c = self.settings.caliper_multiplier;
        if !(c >= 0.0 && c.is_finite()) {
            return bad(format!("caliper multiplier {c} must be finite and non-negative"));
        }
        if let PsModelChoice::Custom(d) = &self.ps_model {
            if d.uses_treatment() {
                return bad("propensity model must not contain the treatment term".into());
            }
        }
        self.correlation.factor()?;
        Ok(())
    }

    pub fn subsample_size(&self) -> usize {
        (self.subsample_fraction * self.n as f64).floor() as usize
    }

    pub fn scenario_spec(&self, label: ScenarioLabel) -> ScenarioSpec {
        ScenarioSpec::new(label, self.coefficients.clone(), self.correlation.clone(), self.n)
    }

    /// Number of oracle cohorts needed for `oracle_subject_draws`.
    pub fn oracle_cohorts(&self) -> usize {
        self.oracle_subject_draws.div_ceil(self.n as u64) as usize
    }
}

/// One method's outcome in one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult<T> {
    pub method: Method,
    pub outcome: Result<EffectEstimate<T>, String>,
}

/// Runs every selected method on `cohort` with scores `ps`. The matching
/// order is drawn from `(master_seed, replicate)`.
pub fn apply_methods<T: Scalar>(
    cohort: &Cohort<T>,
    ps: &PsVector<T>,
    settings: &MethodSettings,
    master_seed: u64,
    replicate: u64,
) -> Vec<MethodResult<T>> {
    let a = cohort.treatment();
    let y = cohort.outcome();
    settings
        .methods
        .iter()
        .map(|&method| {
            let outcome = match method {
                Method::Psm => (|| {
                    let caliper = ps_methods::compute_caliper(ps, a, T::lit(settings.caliper_multiplier))
                        .map_err(|e| e.to_string())?;
                    let mut stream = rng::stream(master_seed, StreamKey::new(Purpose::Matching).replicate(replicate));
                    let matches = ps_methods::match_nearest(ps, a, caliper, &mut stream).map_err(|e| e.to_string())?;
                    effect_est::matched_effect(cohort, &matches).map_err(|e| e.to_string())
                })(),
                m if m.weight_variant().is_some() => {
                    let variant = m.weight_variant().expect("checked");
                    ps_methods::ipw_weights(ps, a, variant, settings.truncation_percentile)
                        .map_err(|e| e.to_string())
                        .and_then(|w| effect_est::marginal_effect(a, y, Some(&w)).map_err(|e| e.to_string()))
                }
                m => {
                    let strat = m.strat_method().expect("remaining methods stratify");
                    ps_methods::stratify(ps, strat, settings.strata)
                        .map_err(|e| e.to_string())
                        .and_then(|s| effect_est::stratified_effect(cohort, &s).map_err(|e| e.to_string()))
                }
            };
            MethodResult {
                method,
                outcome: outcome.map(|e| e.with_method(method)),
            }
        })
        .collect()
}

/// One subsample replicate: draw, fit the PS model, apply every method.
pub fn run_replicate<T: Scalar>(
    cohort: &Cohort<T>,
    spec: &ScenarioSpec,
    config: &ExperimentConfig,
    replicate: u64,
) -> Vec<MethodResult<T>> {
    let n = cohort.len();
    let m = ((config.subsample_fraction * n as f64).floor() as usize).clamp(1, n);
    let sub;
    let sample = if m == n {
        cohort
    } else {
        let mut stream = rng::stream(
            config.master_seed,
            StreamKey::new(Purpose::Subsample).replicate(replicate),
        );
        let mut idx = index::sample(&mut stream, n, m).into_vec();
        idx.sort_unstable();
        sub = cohort.subset(&idx);
        &sub
    };
    let model = config.ps_model.design_for(spec);
    match ps_methods::estimate_ps(sample, &model) {
        Ok(ps) => apply_methods(sample, &ps, &config.settings, config.master_seed, replicate),
        Err(e) => config
            .settings
            .methods
            .iter()
            .map(|&method| MethodResult {
                method,
                outcome: Err(e.to_string()),
            })
            .collect(),
    }
}

/// Mean and 95% percentile interval of a set of estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Mean in input order; percentiles by linear interpolation on the sorted
/// values. `None` for an empty slice.
pub fn aggregate(estimates: &[f64]) -> Option<Aggregate> {
    if estimates.is_empty() {
        return None;
    }
    // Shifted by the first value so a constant column averages to itself exactly.
    let x0 = estimates[0];
    let mean = x0 + estimates.iter().map(|&x| x - x0).sum::<f64>() / estimates.len() as f64;
    let mut sorted = estimates.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(Aggregate {
        mean,
        ci_low: quantile_type7(&sorted, 0.025),
        ci_high: quantile_type7(&sorted, 0.975),
    })
}

/// One (scenario, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    /// `None` when every replicate failed.
    pub estimate: Option<Aggregate>,
    pub successes: usize,
    pub failed: usize,
    /// More than 5% of replicates failed.
    pub warning: bool,
    pub first_failure: Option<String>,
    pub mean_n_used: Option<f64>,
    pub mean_strata_dropped: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub label: ScenarioLabel,
    pub nominal_gamma1: f64,
    pub truth: Option<TruthReport>,
    pub cells: Vec<CellSummary>,
}

impl ScenarioSummary {
    pub fn cell(&self, method: Method) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub precision: String,
    pub scenarios: Vec<ScenarioSummary>,
    pub warnings: Vec<String>,
}

impl ExperimentSummary {
    pub fn scenario(&self, label: ScenarioLabel) -> Option<&ScenarioSummary> {
        self.scenarios.iter().find(|s| s.label == label)
    }

    pub fn cell(&self, label: ScenarioLabel, method: Method) -> Option<&CellSummary> {
        self.scenario(label).and_then(|s| s.cell(method))
    }
}

fn summarize_cell<T: Scalar>(method: Method, results: &[Vec<MethodResult<T>>]) -> CellSummary {
    let mut estimates = Vec::with_capacity(results.len());
    let mut n_used = 0.0;
    let mut dropped = 0.0;
    let mut first_failure = None;
    let mut failed = 0;
    for rep in results {
        match rep.iter().find(|r| r.method == method).map(|r| &r.outcome) {
            Some(Ok(e)) => {
                estimates.push(e.gamma1_hat.as_f64());
                n_used += e.n_used as f64;
                dropped += e.strata_dropped as f64;
            }
            Some(Err(msg)) => {
                failed += 1;
                first_failure.get_or_insert_with(|| msg.clone());
            }
            None => failed += 1,
        }
    }
    let successes = estimates.len();
    let total = successes + failed;
    let per = |v: f64| (successes > 0).then(|| v / successes as f64);
    CellSummary {
        method,
        estimate: aggregate(&estimates),
        successes,
        failed,
        warning: total > 0 && failed as f64 > FAILURE_WARNING_FRACTION * total as f64,
        first_failure,
        mean_n_used: per(n_used),
        mean_strata_dropped: if method.strat_method().is_some() {
            per(dropped)
        } else {
            None
        },
    }
}

/// Runs the full experiment on the global rayon pool.
pub fn run_experiment<T: Scalar>(config: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    config.validate()?;
    let mut scenarios = Vec::with_capacity(config.scenarios.len());
    let mut warnings = Vec::new();
    for &label in &config.scenarios {
        let spec = config.scenario_spec(label);
        let base: Option<Cohort<T>> = if config.regenerate_cohort {
            None
        } else {
            Some(cohort_gen::generate_cohort(&spec, config.master_seed)?)
        };
        let results: Vec<Vec<MethodResult<T>>> = (0..config.reps as u64)
            .into_par_iter()
            .map(|r| -> Result<_, CohortError> {
                match &base {
                    Some(cohort) => Ok(run_replicate(cohort, &spec, config, r)),
                    None => {
                        let cohort: Cohort<T> = cohort_gen::generate_cohort_at(&spec, config.master_seed, r + 1)?;
                        Ok(run_replicate(&cohort, &spec, config, r))
                    }
                }
            })
            .collect::<Result<_, _>>()?;
        let cells: Vec<CellSummary> = config
            .settings
            .methods
            .iter()
            .map(|&m| summarize_cell(m, &results))
            .collect();
        for c in &cells {
            if c.warning || c.estimate.is_none() {
                warnings.push(format!(
                    "scenario {label}, {}: {} of {} replicates failed (first: {})",
                    c.method,
                    c.failed,
                    c.failed + c.successes,
                    c.first_failure.as_deref().unwrap_or("-")
                ));
            }
        }
        let truth = if config.oracle_subject_draws > 0 {
            Some(effect_est::true_marginal_effect(
                &spec,
                config.oracle_cohorts(),
                config.master_seed,
            )?)
        } else {
            None
        };
        scenarios.push(ScenarioSummary {
            label,
            nominal_gamma1: config.coefficients.gamma1,
            truth,
            cells,
        });
    }
    Ok(ExperimentSummary {
        config: config.clone(),
        precision: std::any::type_name::<T>().to_string(),
        scenarios,
        warnings,
    })
}

/// [`run_experiment`] on a dedicated pool of `threads` workers.
pub fn run_experiment_with_threads<T: Scalar>(
    config: &ExperimentConfig,
    threads: usize,
) -> Result<ExperimentSummary, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
    pool.install(|| run_experiment::<T>(config))
}
