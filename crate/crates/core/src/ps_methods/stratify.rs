//! Propensity-score strata.

use serde::{Deserialize, Serialize};

use super::{PsError, PsVector};
use crate::num::{quantile_type7, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StratMethod {
    /// Boundaries at the `j/k` empirical quantiles: equally sized strata.
    Quantile,
    /// `k` equal-width intervals over `[min, max]`.
    PsValue,
}

/// Stratum labels `1..=k`. Stratum `j` covers `(boundaries[j-1],
/// boundaries[j]]`, the first one also includes its left end.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumAssignment<T> {
    pub stratum_of: Vec<usize>,
    pub method: StratMethod,
    pub k: usize,
    pub boundaries: Vec<T>,
    /// All scores were identical and a single stratum was formed.
    pub degenerate: bool,
}

impl<T> StratumAssignment<T> {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &s in &self.stratum_of {
            sizes[s - 1] += 1;
        }
        sizes
    }
}

pub fn stratify<T: Scalar>(ps: &PsVector<T>, method: StratMethod, k: usize) -> Result<StratumAssignment<T>, PsError> {
    let n = ps.len();
    if k == 0 || n < k {
        return Err(PsError::TooFewSubjects { n, k });
    }
    let mut sorted = ps.values().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    let (min, max) = (sorted[0], sorted[n - 1]);
    if min == max {
        return Ok(StratumAssignment {
            stratum_of: vec![1; n],
            method,
            k: 1,
            boundaries: vec![min, max],
            degenerate: true,
        });
    }
    let mut boundaries: Vec<T> = match method {
        StratMethod::Quantile => (0..=k).map(|j| quantile_type7(&sorted, j as f64 / k as f64)).collect(),
        StratMethod::PsValue => {
            let width = (max - min) / T::lit(k as f64);
            (0..=k).map(|j| min + width * T::lit(j as f64)).collect()
        }
    };
    boundaries[0] = min;
    boundaries[k] = max;
    let interior = &boundaries[1..k];
    let stratum_of = ps
        .values()
        .iter()
        .map(|&p| 1 + interior.partition_point(|&b| b < p))
        .collect();
    Ok(StratumAssignment {
        stratum_of,
        method,
        k,
        boundaries,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::super::PsSource;
    use super::*;
    use proptest::prelude::*;

    fn ps(v: &[f64]) -> PsVector<f64> {
        PsVector::new(v.to_vec(), PsSource::Estimated).unwrap()
    }

    fn even_ten() -> Vec<f64> {
        (0..10).map(|i| 0.05 + 0.1 * i as f64).collect()
    }

    #[test]
    fn quantile_even_spacing() {
        let s = stratify(&ps(&even_ten()), StratMethod::Quantile, 5).unwrap();
        assert_eq!(s.sizes(), vec![2; 5]);
        assert_eq!(s.stratum_of, vec![1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);
    }

    #[test]
    fn ps_value_even_spacing() {
        let s = stratify(&ps(&even_ten()), StratMethod::PsValue, 5).unwrap();
        let expected = [0.05, 0.23, 0.41, 0.59, 0.77, 0.95];
        for (b, e) in s.boundaries.iter().zip(expected) {
            assert!((b - e).abs() < 1e-12);
        }
        assert_eq!(s.sizes(), vec![2; 5]);
    }

    #[test]
    fn ps_value_clustered() {
        let mut v = vec![0.1; 8];
        v.extend([0.9, 0.9]);
        let s = stratify(&ps(&v), StratMethod::PsValue, 5).unwrap();
        assert_eq!(s.sizes(), vec![8, 0, 0, 0, 2]);
    }

    #[test]
    fn identical_scores_collapse() {
        let s = stratify(&ps(&[0.3; 7]), StratMethod::PsValue, 5).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.k, 1);
        assert_eq!(s.sizes(), vec![7]);
    }

    #[test]
    fn too_few_subjects() {
        assert_eq!(
            stratify(&ps(&[0.2, 0.4]), StratMethod::Quantile, 5),
            Err(PsError::TooFewSubjects { n: 2, k: 5 })
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn quantile_sizes_balanced(
            v in prop::collection::hash_set(1u32..1_000_000, 5..400),
            k in 1usize..8,
        ) {
            let v: Vec<f64> = v.into_iter().map(|x| x as f64 / 1_000_001.0).collect();
            prop_assume!(v.len() >= k);
            let s = stratify(&ps(&v), StratMethod::Quantile, k).unwrap();
            let sizes = s.sizes();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1, "{:?}", sizes);
        }

        #[test]
        fn labels_respect_boundaries(
            v in prop::collection::vec(0.001f64..0.999, 5..200),
            quantile in any::<bool>(),
        ) {
            let method = if quantile { StratMethod::Quantile } else { StratMethod::PsValue };
            let s = stratify(&ps(&v), method, 5).unwrap();
            for (&p, &j) in v.iter().zip(&s.stratum_of) {
                prop_assert!(j >= 1 && j <= s.k);
                prop_assert!(p <= s.boundaries[j]);
                if j > 1 {
                    prop_assert!(p > s.boundaries[j - 1]);
                } else {
                    prop_assert!(p >= s.boundaries[0]);
                }
            }
        }
    }
}
