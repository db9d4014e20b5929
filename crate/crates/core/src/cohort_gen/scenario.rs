//! The seven confounding scenarios and their treatment-model terms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CoefficientSet, CorrelationMatrix};
use crate::glm::{DesignSpec, Term};

/// Squared covariates (zero-based columns) in the order they are switched
/// on: W2², W4², W7². Each square is scaled by the main-effect coefficient
/// of the same covariate.
pub const QUADRATIC_TERMS: [usize; 3] = [1, 3, 6];

/// A two-way product `multiplier * beta[beta_index] * W_first * W_second`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionTerm {
    pub first: usize,
    pub second: usize,
    pub beta_index: usize,
    pub multiplier: f64,
}

const fn ix(first: usize, second: usize, beta_index: usize, multiplier: f64) -> InteractionTerm {
    // Columns are zero-based; covariate numbers in the names are one-based.
    InteractionTerm {
        first: first - 1,
        second: second - 1,
        beta_index,
        multiplier,
    }
}

/// The ten products of the fully non-additive model, in the order they are
/// switched on.
pub const INTERACTION_TERMS: [InteractionTerm; 10] = [
    ix(1, 3, 1, 0.5),
    ix(2, 4, 2, 0.7),
    ix(3, 5, 3, 0.5),
    ix(4, 6, 4, 0.7),
    ix(5, 7, 5, 0.5),
    ix(1, 6, 1, 0.5),
    ix(2, 3, 2, 0.7),
    ix(3, 4, 3, 0.5),
    ix(4, 5, 4, 0.5),
    ix(5, 6, 5, 0.5),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioLabel {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 7] = [
        ScenarioLabel::A,
        ScenarioLabel::B,
        ScenarioLabel::C,
        ScenarioLabel::D,
        ScenarioLabel::E,
        ScenarioLabel::F,
        ScenarioLabel::G,
    ];

    /// (number of quadratic terms, number of interaction terms).
    pub fn term_counts(self) -> (usize, usize) {
        match self {
            ScenarioLabel::A => (0, 0),
            ScenarioLabel::B => (1, 0),
            ScenarioLabel::C => (3, 0),
            ScenarioLabel::D => (0, 3),
            ScenarioLabel::E => (1, 3),
            ScenarioLabel::F => (0, 10),
            ScenarioLabel::G => (3, 10),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scenario `{0}`; valid labels are A, B, C, D, E, F, G")]
pub struct UnknownScenario(pub String);

impl FromStr for ScenarioLabel {
    type Err = UnknownScenario;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioLabel::ALL
            .into_iter()
            .find(|l| l.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownScenario(s.to_string()))
    }
}

/// Everything needed to simulate one scenario's cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub label: ScenarioLabel,
    pub coefficients: CoefficientSet,
    pub correlation: CorrelationMatrix,
    pub n: usize,
}

impl ScenarioSpec {
    pub fn new(label: ScenarioLabel, coefficients: CoefficientSet, correlation: CorrelationMatrix, n: usize) -> Self {
        Self {
            label,
            coefficients,
            correlation,
            n,
        }
    }

    /// Built-in coefficients and correlations.
    pub fn with_defaults(label: ScenarioLabel, n: usize) -> Self {
        Self::new(label, CoefficientSet::default(), CorrelationMatrix::default(), n)
    }

    pub fn quadratic_terms(&self) -> &'static [usize] {
        &QUADRATIC_TERMS[..self.label.term_counts().0]
    }

    pub fn interaction_terms(&self) -> &'static [InteractionTerm] {
        &INTERACTION_TERMS[..self.label.term_counts().1]
    }

    /// Treatment-model linear predictor for one covariate row.
    pub fn treatment_logit<T: crate::Scalar>(&self, row: &[T; super::NUM_COVARIATES]) -> T {
        let b = &self.coefficients.beta;
        let mut eta = T::lit(b[0]);
        for j in 0..7 {
            eta = eta + T::lit(b[j + 1]) * row[j];
        }
        for &c in self.quadratic_terms() {
            eta = eta + T::lit(b[c + 1]) * row[c] * row[c];
        }
        for t in self.interaction_terms() {
            eta = eta + T::lit(t.multiplier * b[t.beta_index]) * row[t.first] * row[t.second];
        }
        eta
    }

    /// The true treatment model as a regression design: intercept, W1..W7,
    /// then the scenario's squares and products.
    pub fn design(&self) -> DesignSpec {
        let mut terms = vec![Term::Intercept];
        terms.extend((0..7).map(Term::Main));
        terms.extend(self.quadratic_terms().iter().map(|&c| Term::Square(c)));
        terms.extend(
            self.interaction_terms()
                .iter()
                .map(|t| Term::Product(t.first, t.second)),
        );
        DesignSpec::new(terms).expect("scenario design has unique terms")
    }

    /// Coefficients of [`Self::design`], in the same order.
    pub fn design_coefficients(&self) -> Vec<f64> {
        let b = &self.coefficients.beta;
        let mut out = b.to_vec();
        out.extend(self.quadratic_terms().iter().map(|&c| b[c + 1]));
        out.extend(self.interaction_terms().iter().map(|t| t.multiplier * b[t.beta_index]));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_parsing() {
        assert_eq!("g".parse::<ScenarioLabel>().unwrap(), ScenarioLabel::G);
        let e = "H".parse::<ScenarioLabel>().unwrap_err();
        assert!(e.to_string().contains("A, B, C, D, E, F, G"));
    }

    #[test]
    fn composition_law() {
        let spec = |l| ScenarioSpec::with_defaults(l, 10);
        let g = spec(ScenarioLabel::G);
        let c = spec(ScenarioLabel::C);
        let f = spec(ScenarioLabel::F);
        assert_eq!(g.quadratic_terms(), c.quadratic_terms());
        assert_eq!(g.interaction_terms(), f.interaction_terms());
        assert!(c.interaction_terms().is_empty());
        assert!(f.quadratic_terms().is_empty());
        let a = spec(ScenarioLabel::A);
        assert!(a.quadratic_terms().is_empty() && a.interaction_terms().is_empty());
        assert_eq!(spec(ScenarioLabel::B).quadratic_terms(), &[1]);
        let d = spec(ScenarioLabel::D);
        assert_eq!(d.interaction_terms(), &INTERACTION_TERMS[..3]);
        assert_eq!(spec(ScenarioLabel::E).interaction_terms(), d.interaction_terms());
        assert_eq!(g.design().terms().len(), 8 + 3 + 10);
        assert_eq!(g.design_coefficients().len(), 21);
    }
}
