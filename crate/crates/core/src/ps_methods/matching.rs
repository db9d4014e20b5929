//! Greedy 1:1 nearest-neighbour matching without replacement.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::{PsError, PsVector};
use crate::num::Scalar;
use crate::rng::Stream;

/// Treated/control index pairs, each index used at most once, every pair
/// within `caliper_width` on the PS scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSet<T> {
    pub pairs: Vec<(usize, usize)>,
    pub caliper_width: T,
}

impl<T> MatchedSet<T> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `multiplier` times the pooled standard deviation of the treated and
/// control scores.
pub fn compute_caliper<T: Scalar>(ps: &PsVector<T>, treatment: &[bool], multiplier: T) -> Result<T, PsError> {
    check_len(ps, treatment)?;
    let arm = |treated: bool| -> (usize, T) {
        let vals: Vec<T> = ps
            .values()
            .iter()
            .zip(treatment)
            .filter(|(_, &a)| a == treated)
            .map(|(&p, _)| p)
            .collect();
        let n = vals.len();
        if n < 2 {
            return (n, T::nan());
        }
        let mean = vals.iter().copied().sum::<T>() / T::lit(n as f64);
        let ss = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
        (n, ss)
    };
    let (n1, ss1) = arm(true);
    let (n0, ss0) = arm(false);
    for (name, n) in [("treated", n1), ("control", n0)] {
        if n < 2 {
            return Err(PsError::UndefinedVariance { arm: name, count: n });
        }
    }
    let pooled_var = (ss1 + ss0) / T::lit((n1 + n0 - 2) as f64);
    Ok(multiplier * pooled_var.sqrt())
}

/// Processes treated subjects in a random order drawn from `stream`; see
/// [`match_in_order`].
pub fn match_nearest<T: Scalar>(
    ps: &PsVector<T>,
    treatment: &[bool],
    caliper: T,
    stream: &mut Stream,
) -> Result<MatchedSet<T>, PsError> {
    check_len(ps, treatment)?;
    let mut order: Vec<usize> = (0..treatment.len()).filter(|&i| treatment[i]).collect();
    order.shuffle(stream);
    match_in_order(ps, treatment, caliper, &order)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Each treated subject in `order` takes the unmatched control closest in
/// PS, the lowest control index winning ties, and stays unmatched when that
/// distance exceeds `caliper`.
pub fn match_in_order<T: Scalar>(
    ps: &PsVector<T>,
    treatment: &[bool],
    caliper: T,
    order: &[usize],
) -> Result<MatchedSet<T>, PsError> {
    check_len(ps, treatment)?;
    if !(caliper >= T::zero()) || !caliper.is_finite() {
        return Err(PsError::InvalidCaliper(caliper.as_f64()));
    }
    let v = ps.values();
    let mut pool: BTreeSet<(Key, usize)> = (0..v.len())
        .filter(|&i| !treatment[i])
        .map(|i| (Key(v[i].as_f64()), i))
        .collect();
    let mut pairs = Vec::new();
    for &t in order {
        debug_assert!(treatment[t]);
        let pt = v[t].as_f64();
        // Lowest index among the controls sharing the nearest value below.
        let below = pool
            .range(..=(Key(pt), usize::MAX))
            .next_back()
            .and_then(|&(k, _)| pool.range((k, 0)..).next().copied());
        let above = pool.range((Key(pt), 0)..).next().copied();
        let best = match (below, above) {
            (Some(b), Some(a)) => {
                let (db, da) = ((v[t] - v[b.1]).abs(), (v[a.1] - v[t]).abs());
                match db.partial_cmp(&da) {
                    Some(Ordering::Less) => Some(b),
                    Some(Ordering::Greater) => Some(a),
                    _ => Some(if b.1 <= a.1 { b } else { a }),
                }
            }
            (b, a) => b.or(a),
        };
        if let Some(c) = best {
            if (v[t] - v[c.1]).abs() <= caliper {
                pool.remove(&c);
                pairs.push((t, c.1));
            }
        }
    }
    Ok(MatchedSet {
        pairs,
        caliper_width: caliper,
    })
}

fn check_len<T: Scalar>(ps: &PsVector<T>, treatment: &[bool]) -> Result<(), PsError> {
    if ps.len() != treatment.len() {
        return Err(PsError::ShapeMismatch {
            what: "treatment",
            expected: ps.len(),
            found: treatment.len(),
        });
    }
    Ok(())
}
