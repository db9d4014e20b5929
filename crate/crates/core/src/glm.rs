//! Weighted maximum-likelihood logistic regression.
//!
//! Newton-Raphson (equivalently IRLS) on the weighted Bernoulli
//! log-likelihood, started at zero, with step-halving whenever a full step
//! lowers the likelihood. This is the only model fitter in the crate: the
//! propensity models and the treatment-effect model both go through it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort_gen::{CovariateRow, NUM_COVARIATES};
use crate::linalg::{Cholesky, SquareMatrix};
use crate::num::{expit, log1p_exp, Scalar};

/// One column of a design. Covariate indices are zero-based columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Term {
    Intercept,
    Main(usize),
    Square(usize),
    Product(usize, usize),
    Treatment,
}

impl Term {
    fn normalized(self) -> Term {
        match self {
            Term::Product(a, b) if a == b => Term::Square(a),
            Term::Product(a, b) if a > b => Term::Product(b, a),
            t => t,
        }
    }

    fn covariates(self) -> impl Iterator<Item = usize> {
        let (a, b) = match self {
            Term::Main(a) | Term::Square(a) => (Some(a), None),
            Term::Product(a, b) => (Some(a), Some(b)),
            Term::Intercept | Term::Treatment => (None, None),
        };
        a.into_iter().chain(b)
    }

    #[inline]
    pub fn evaluate<T: Scalar>(self, row: &CovariateRow<T>, treated: bool) -> T {
        match self {
            Term::Intercept => T::one(),
            Term::Main(a) => row[a],
            Term::Square(a) => row[a] * row[a],
            Term::Product(a, b) => row[a] * row[b],
            Term::Treatment => {
                if treated {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Term::Intercept => write!(f, "intercept"),
            Term::Main(a) => write!(f, "w{}", a + 1),
            Term::Square(a) => write!(f, "w{}^2", a + 1),
            Term::Product(a, b) => write!(f, "w{}*w{}", a + 1, b + 1),
            Term::Treatment => write!(f, "a"),
        }
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for Term {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl FromStr for Term {
    type Err = String;

    /// Accepts `intercept`, `a`, `wK`, `wK^2` and `wJ*wK` with K in 1..=10.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let covariate = |t: &str| -> Result<usize, String> {
            t.trim()
                .strip_prefix('w')
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|k| (1..=NUM_COVARIATES).contains(k))
                .map(|k| k - 1)
                .ok_or_else(|| format!("`{t}` is not a covariate name (w1..w10)"))
        };
        let term = match s.as_str() {
            "intercept" | "1" => Term::Intercept,
            "a" | "treatment" => Term::Treatment,
            _ => {
                if let Some(base) = s.strip_suffix("^2") {
                    Term::Square(covariate(base)?)
                } else if let Some((l, r)) = s.split_once('*') {
                    Term::Product(covariate(l)?, covariate(r)?)
                } else {
                    Term::Main(covariate(&s)?)
                }
            }
        };
        Ok(term.normalized())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GlmError {
    #[error("design lists term `{0}` more than once")]
    DuplicateTerm(Term),
    #[error("term `{term}` refers to covariate column {column}, but only {NUM_COVARIATES} exist")]
    UnknownCovariate { term: Term, column: usize },
    #[error("design uses the treatment term but no treatment vector was supplied")]
    MissingTreatment,
    #[error("{n} observations cannot identify {terms} coefficients")]
    TooFewObservations { n: usize, terms: usize },
    #[error("{what}: expected length {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("weights must be finite, non-negative and not all zero")]
    InvalidWeights,
    #[error("separation: coefficient of `{term}` reached {value:.3} at iteration {iteration}; no finite maximum-likelihood estimate")]
    Separation { term: String, value: f64, iteration: usize },
    #[error("weighted information matrix is singular: `{term}` is collinear with earlier terms")]
    RankDeficient { term: String },
    #[error("no convergence after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },
}

/// Ordered model terms with exactly one intercept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    terms: Vec<Term>,
}

impl DesignSpec {
    /// Validates and normalizes `terms`. The intercept is prepended when
    /// missing.
    pub fn new(terms: impl IntoIterator<Item = Term>) -> Result<Self, GlmError> {
        let mut out: Vec<Term> = Vec::new();
        for t in terms.into_iter().map(Term::normalized) {
            if let Some(column) = t.covariates().find(|&c| c >= NUM_COVARIATES) {
                return Err(GlmError::UnknownCovariate { term: t, column });
            }
            if out.contains(&t) {
                return Err(GlmError::DuplicateTerm(t));
            }
            out.push(t);
        }
        if !out.contains(&Term::Intercept) {
            out.insert(0, Term::Intercept);
        }
        Ok(Self { terms: out })
    }

    pub fn intercept_only() -> Self {
        Self {
            terms: vec![Term::Intercept],
        }
    }

    /// Intercept plus main effects of all ten covariates.
    pub fn all_main_effects() -> Self {
        Self::new((0..NUM_COVARIATES).map(Term::Main)).expect("distinct terms")
    }

    /// Intercept plus the treatment indicator: the effect model.
    pub fn treatment_only() -> Self {
        Self {
            terms: vec![Term::Intercept, Term::Treatment],
        }
    }

    /// Parses one term per line (or comma-separated); `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut terms = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            for item in line.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                terms.push(item.parse::<Term>().map_err(|e| format!("line {}: {e}", i + 1))?);
            }
        }
        Self::new(terms).map_err(|e| e.to_string())
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn uses_treatment(&self) -> bool {
        self.terms.contains(&Term::Treatment)
    }

    /// Evaluates every term on every subject.
    pub fn build_matrix<T: Scalar>(
        &self,
        covariates: &[CovariateRow<T>],
        treatment: Option<&[bool]>,
    ) -> Result<DesignMatrix<T>, GlmError> {
        if let Some(a) = treatment {
            if a.len() != covariates.len() {
                return Err(GlmError::ShapeMismatch {
                    what: "treatment",
                    expected: covariates.len(),
                    found: a.len(),
                });
            }
        } else if self.uses_treatment() {
            return Err(GlmError::MissingTreatment);
        }
        let p = self.terms.len();
        let mut data = Vec::with_capacity(covariates.len() * p);
        for (i, row) in covariates.iter().enumerate() {
            let treated = treatment.is_some_and(|a| a[i]);
            data.extend(self.terms.iter().map(|t| t.evaluate(row, treated)));
        }
        Ok(DesignMatrix {
            rows: covariates.len(),
            cols: p,
            data,
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(Term::to_string).collect()
    }
}

impl fmt::Display for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = self.names();
        write!(f, "{}", names.join(" + "))
    }
}

/// Row-major `rows x cols` model matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DesignMatrix<T> {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, GlmError> {
        if data.len() != rows * cols {
            return Err(GlmError::ShapeMismatch {
                what: "design matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn linear_predictor(&self, beta: &[T]) -> impl Iterator<Item = T> + '_ {
        let beta = beta.to_vec();
        (0..self.rows).map(move |i| dot(self.row(i), &beta))
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Solver settings. [`FitOptions::for_scalar`] gives the defaults for a
/// precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub loglik_rel_tol: f64,
    /// A coefficient beyond this magnitude is treated as diverging.
    pub separation_threshold: f64,
    /// Ridge penalty on non-intercept coefficients; 0 disables it.
    pub ridge: f64,
}

impl FitOptions {
    pub fn for_scalar<T: Scalar>() -> Self {
        Self {
            max_iterations: 100,
            gradient_tol: T::GRADIENT_TOL,
            loglik_rel_tol: T::LOGLIK_REL_TOL,
            separation_threshold: 30.0,
            ridge: 0.0,
        }
    }
}

impl Default for FitOptions {
    fn default() -> Self {
        Self::for_scalar::<f64>()
    }
}

/// Result of a fit. When `converged`, `final_gradient_norm` is the score
/// max-norm at `coefficients` (computed with weights rescaled to mean 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit<T> {
    pub coefficients: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: T,
    pub log_likelihood: T,
    /// Some fitted probability is within 1e-10 of 0 or 1: quasi-separation
    /// that stayed below the divergence threshold.
    pub separation_detected: bool,
}

/// Weighted Bernoulli log-likelihood `sum w_i [y_i eta_i - ln(1 + e^eta_i)]`.
pub fn log_likelihood<T: Scalar>(x: &DesignMatrix<T>, y: &[bool], weights: Option<&[T]>, beta: &[T]) -> T {
    x.linear_predictor(beta)
        .enumerate()
        .map(|(i, eta)| {
            let w = weights.map_or(T::one(), |w| w[i]);
            let yi = if y[i] { eta } else { T::zero() };
            w * (yi - log1p_exp(eta))
        })
        .sum()
}

/// Score vector `sum w_i (y_i - p_i) x_i`.
pub fn gradient<T: Scalar>(x: &DesignMatrix<T>, y: &[bool], weights: Option<&[T]>, beta: &[T]) -> Vec<T> {
    let mut g = vec![T::zero(); x.cols()];
    for (i, eta) in x.linear_predictor(beta).enumerate() {
        let w = weights.map_or(T::one(), |w| w[i]);
        let r = w * (indicator::<T>(y[i]) - expit(eta));
        for (gk, &xk) in g.iter_mut().zip(x.row(i)) {
            *gk = *gk + r * xk;
        }
    }
    g
}

#[inline]
fn indicator<T: Scalar>(b: bool) -> T {
    if b {
        T::one()
    } else {
        T::zero()
    }
}

fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Fits `y ~ design` on the given subjects. `weights`, when present, must be
/// non-negative with a positive sum; only their ratios matter.
pub fn fit_logistic<T: Scalar>(
    design: &DesignSpec,
    covariates: &[CovariateRow<T>],
    treatment: Option<&[bool]>,
    y: &[bool],
    weights: Option<&[T]>,
    options: &FitOptions,
) -> Result<LogisticFit<T>, GlmError> {
    let x = design.build_matrix(covariates, treatment)?;
    fit_matrix(&x, y, weights, options, &design.names())
}

/// Fits on an explicit model matrix. `names` label the columns in errors.
pub fn fit_matrix<T: Scalar>(
    x: &DesignMatrix<T>,
    y: &[bool],
    weights: Option<&[T]>,
    options: &FitOptions,
    names: &[String],
) -> Result<LogisticFit<T>, GlmError> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(GlmError::ShapeMismatch {
            what: "outcome",
            expected: n,
            found: y.len(),
        });
    }
    if n < p {
        return Err(GlmError::TooFewObservations { n, terms: p });
    }
    let name = |k: usize| names.get(k).cloned().unwrap_or_else(|| format!("column {k}"));

    let weights = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(GlmError::ShapeMismatch {
                    what: "weights",
                    expected: n,
                    found: w.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite() || *v < T::zero()) {
                return Err(GlmError::InvalidWeights);
            }
            let total: T = w.iter().copied().sum();
            if !(total > T::zero()) {
                return Err(GlmError::InvalidWeights);
            }
            let scale = T::lit(n as f64) / total;
            Some(w.iter().map(|&v| v * scale).collect::<Vec<T>>())
        }
        None => None,
    };
    let w = weights.as_deref();
    let ridge = T::lit(options.ridge);
    let penalized = |k: usize| ridge > T::zero() && names.get(k).is_none_or(|s| s != "intercept");

    let objective = |beta: &[T]| {
        let mut ll = log_likelihood(x, y, w, beta);
        for (k, &b) in beta.iter().enumerate() {
            if penalized(k) {
                ll = ll - ridge * b * b / T::lit(2.0);
            }
        }
        ll
    };

    let grad_tol = T::lit(options.gradient_tol);
    // Accept the gradient test only once the Newton step is small as well;
    // on separable data the score vanishes while the step does not.
    let step_tol = T::lit(options.gradient_tol.sqrt());
    let mut beta = vec![T::zero(); p];
    let mut ll = objective(&beta);
    let mut converged = false;
    let mut iterations = 0;

    // Score and information at a point.
    let newton = |beta: &[T]| -> Result<(Vec<T>, Vec<T>), GlmError> {
        let mut g = vec![T::zero(); p];
        let mut h = SquareMatrix::zeros(p);
        for (i, eta) in x.linear_predictor(beta).enumerate() {
            let wi = w.map_or(T::one(), |w| w[i]);
            let pi = expit(eta);
            let r = wi * (indicator::<T>(y[i]) - pi);
            let v = wi * pi * (T::one() - pi);
            let row = x.row(i);
            for a in 0..p {
                g[a] = g[a] + r * row[a];
                let va = v * row[a];
                for b in 0..=a {
                    h[(a, b)] = h[(a, b)] + va * row[b];
                }
            }
        }
        for a in 0..p {
            if penalized(a) {
                g[a] = g[a] - ridge * beta[a];
                h[(a, a)] = h[(a, a)] + ridge;
            }
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        let chol = Cholesky::factor(&h, T::lit(1e-12)).map_err(|e| GlmError::RankDeficient { term: name(e.pivot) })?;
        let step = chol.solve(&g);
        Ok((g, step))
    };

    let mut stopped_on_loglik = false;
    while iterations < options.max_iterations {
        let (g, step) = newton(&beta)?;
        if max_abs(&g) < grad_tol && max_abs(&step) < step_tol {
            converged = true;
            break;
        }

        iterations += 1;
        let mut t = T::one();
        let mut candidate: Vec<T>;
        let mut ll_new;
        let mut halvings = 0;
        loop {
            candidate = beta.iter().zip(&step).map(|(&b, &s)| b + t * s).collect();
            ll_new = objective(&candidate);
            if ll_new >= ll || halvings >= 30 {
                break;
            }
            t = t / T::lit(2.0);
            halvings += 1;
        }
        if let Some(k) = candidate
            .iter()
            .position(|b| !b.is_finite() || b.abs() > T::lit(options.separation_threshold))
        {
            return Err(GlmError::Separation {
                term: name(k),
                value: candidate[k].as_f64(),
                iteration: iterations,
            });
        }
        let rel_change = (ll_new - ll).abs() / (ll.abs() + T::min_positive_value());
        beta = candidate;
        ll = ll_new;
        if rel_change < T::lit(options.loglik_rel_tol) {
            converged = true;
            stopped_on_loglik = true;
            break;
        }
    }

    // The relative change test fires while the score can still be well above
    // its tolerance. A few undamped Newton steps close that gap.
    if stopped_on_loglik {
        // The likelihood is flat to rounding here, so progress is judged by the score.
        let (mut g, mut step) = newton(&beta)?;
        for _ in 0..4 {
            if max_abs(&g) < grad_tol {
                break;
            }
            let candidate: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b + s).collect();
            let (g_new, step_new) = newton(&candidate)?;
            if !(max_abs(&g_new) < max_abs(&g)) {
                break;
            }
            ll = objective(&candidate);
            beta = candidate;
            g = g_new;
            step = step_new;
        }
    }

    let mut g = gradient(x, y, w, &beta);
    for (k, gk) in g.iter_mut().enumerate() {
        if penalized(k) {
            *gk = *gk - ridge * beta[k];
        }
    }
    let edge = T::lit(1e-10);
    let separation_detected = x.linear_predictor(&beta).any(|eta| {
        let pi = expit(eta);
        pi < edge || pi > T::one() - edge
    });
    Ok(LogisticFit {
        coefficients: beta,
        converged,
        iterations,
        final_gradient_norm: max_abs(&g),
        log_likelihood: ll,
        separation_detected,
    })
}

/// Fitted probabilities `expit(x . beta)` for each subject.
pub fn predict_proba<T: Scalar>(
    fit: &LogisticFit<T>,
    design: &DesignSpec,
    covariates: &[CovariateRow<T>],
    treatment: Option<&[bool]>,
) -> Result<Vec<T>, GlmError> {
    predict_with(&fit.coefficients, design, covariates, treatment)
}

/// [`predict_proba`] from a bare coefficient vector.
pub fn predict_with<T: Scalar>(
    coefficients: &[T],
    design: &DesignSpec,
    covariates: &[CovariateRow<T>],
    treatment: Option<&[bool]>,
) -> Result<Vec<T>, GlmError> {
    if coefficients.len() != design.len() {
        return Err(GlmError::ShapeMismatch {
            what: "coefficients",
            expected: design.len(),
            found: coefficients.len(),
        });
    }
    if treatment.is_none() && design.uses_treatment() {
        return Err(GlmError::MissingTreatment);
    }
    Ok(covariates
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let treated = treatment.is_some_and(|a| a[i]);
            let eta = design
                .terms()
                .iter()
                .zip(coefficients)
                .fold(T::zero(), |s, (t, &c)| s + c * t.evaluate(row, treated));
            expit(eta)
        })
        .collect())
}
