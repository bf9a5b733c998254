//! Empirical ROC analysis of test statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Test statistics for signal-present (`h1`) and signal-absent (`h0`) images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub scores_h1: Vec<f64>,
    pub scores_h0: Vec<f64>,
}

impl ScoreSet {
    pub fn new(scores_h1: Vec<f64>, scores_h0: Vec<f64>) -> Result<Self> {
        let s = ScoreSet { scores_h1, scores_h0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores_h1.is_empty() {
            return Err(Error::EmptyClass("signal-present"));
        }
        if self.scores_h0.is_empty() {
            return Err(Error::EmptyClass("signal-absent"));
        }
        if self.scores_h1.iter().chain(&self.scores_h0).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score".into()));
        }
        Ok(())
    }
}

/// Mann–Whitney AUC: fraction of (h1, h0) pairs ordered correctly, ties 1/2.
pub fn empirical_auc(s: &ScoreSet) -> Result<f64> {
    s.validate()?;
    Ok(auc_unchecked(&s.scores_h1, &s.scores_h0))
}

fn auc_unchecked(h1: &[f64], h0: &[f64]) -> f64 {
    let mut h0_sorted = h0.to_vec();
    h0_sorted.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &x in h1 {
        let below = h0_sorted.partition_point(|&y| y < x);
        let not_above = h0_sorted.partition_point(|&y| y <= x);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    wins / (h1.len() as f64 * h0.len() as f64)
}

/// Empirical operating points `(FPF, TPF)`, one threshold per distinct score,
/// from `(0, 0)` to `(1, 1)`.
pub fn roc_points(s: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    s.validate()?;
    let mut all: Vec<(f64, bool)> = s
        .scores_h1
        .iter()
        .map(|&v| (v, true))
        .chain(s.scores_h0.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n1 = s.scores_h1.len() as f64;
    let n0 = s.scores_h0.len() as f64;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let threshold = all[i].0;
        while i < all.len() && all[i].0 == threshold {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n0, tp as f64 / n1));
    }
    Ok(points)
}

pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[1].1 + w[0].1))
        .sum()
}

/// Percentile bootstrap interval for the AUC, resampling each class with replacement.
pub fn bootstrap_auc_ci<R: Rng + ?Sized>(s: &ScoreSet, n_boot: usize, level: f64, rng: &mut R) -> Result<(f64, f64)> {
    s.validate()?;
    if n_boot < 100 {
        return Err(Error::InvalidParameter(format!("n_boot must be at least 100, got {n_boot}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("confidence level must be in (0, 1), got {level}")));
    }
    let n1 = s.scores_h1.len();
    let n0 = s.scores_h0.len();
    let mut h1 = vec![0.0; n1];
    let mut h0 = vec![0.0; n0];
    let mut aucs: Vec<f64> = (0..n_boot)
        .map(|_| {
            for v in h1.iter_mut() {
                *v = s.scores_h1[rng.random_range(0..n1)];
            }
            for v in h0.iter_mut() {
                *v = s.scores_h0[rng.random_range(0..n0)];
            }
            auc_unchecked(&h1, &h0)
        })
        .collect();
    aucs.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Ok((quantile_sorted(&aucs, tail), quantile_sorted(&aucs, 1.0 - tail)))
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedSpec;
    use proptest::prelude::*;

    fn set(h1: &[f64], h0: &[f64]) -> ScoreSet {
        ScoreSet::new(h1.to_vec(), h0.to_vec()).unwrap()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(empirical_auc(&set(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])).unwrap(), 0.5);
        assert_eq!(empirical_auc(&set(&[5.0, 6.0], &[1.0, 2.0])).unwrap(), 1.0);
        assert_eq!(empirical_auc(&set(&[2.0, 3.0], &[1.0, 2.5])).unwrap(), 0.75);
    }

    #[test]
    fn empty_class_rejected() {
        assert!(matches!(ScoreSet::new(vec![], vec![1.0]), Err(Error::EmptyClass(_))));
        assert!(ScoreSet::new(vec![1.0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn roc_examples() {
        let pts = roc_points(&set(&[5.0, 6.0], &[1.0, 2.0])).unwrap();
        assert!(pts.contains(&(0.0, 1.0)));
        let diag = roc_points(&set(&[1.0], &[1.0])).unwrap();
        assert_eq!(diag, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(trapezoid_area(&diag), 0.5);
    }

    #[test]
    fn bootstrap_examples() {
        let mut rng = SeedSpec::new(1).stream("boot", 0);
        let h1: Vec<f64> = (0..200).map(|i| 100.0 + i as f64).collect();
        let h0: Vec<f64> = (0..200).map(|i| i as f64 * 0.1).collect();
        let s = set(&h1, &h0);
        let (lo, hi) = bootstrap_auc_ci(&s, 2000, 0.95, &mut rng).unwrap();
        assert!(lo > 0.98 && hi <= 1.0 && hi - lo < 0.02);

        let flat = set(&[3.0; 50], &[3.0; 40]);
        assert_eq!(bootstrap_auc_ci(&flat, 500, 0.95, &mut rng).unwrap(), (0.5, 0.5));

        let a = bootstrap_auc_ci(&set(&[1.0, 2.0, 0.5], &[0.0, 1.5]), 300, 0.9, &mut SeedSpec::new(3).stream("b", 0)).unwrap();
        let b = bootstrap_auc_ci(&set(&[1.0, 2.0, 0.5], &[0.0, 1.5]), 300, 0.9, &mut SeedSpec::new(3).stream("b", 0)).unwrap();
        assert_eq!(a, b);
        assert!(bootstrap_auc_ci(&flat, 10, 0.95, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn trapezoid_equals_mann_whitney(
            h1 in proptest::collection::vec(-5i32..5, 1..40),
            h0 in proptest::collection::vec(-5i32..5, 1..40),
        ) {
            let s = ScoreSet::new(h1.iter().map(|&v| v as f64).collect(), h0.iter().map(|&v| v as f64).collect()).unwrap();
            let pts = roc_points(&s).unwrap();
            prop_assert!(pts.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
            prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
            prop_assert!((trapezoid_area(&pts) - empirical_auc(&s).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn label_swap_and_monotone_invariance(
            h1 in proptest::collection::vec(0.01f64..50.0, 1..30),
            h0 in proptest::collection::vec(0.01f64..50.0, 1..30),
        ) {
            let s = ScoreSet::new(h1.clone(), h0.clone()).unwrap();
            let swapped = ScoreSet::new(h0.clone(), h1.clone()).unwrap();
            let auc = empirical_auc(&s).unwrap();
            prop_assert!((empirical_auc(&swapped).unwrap() - (1.0 - auc)).abs() < 1e-12);
            let logged = ScoreSet::new(h1.iter().map(|v| v.ln()).collect(), h0.iter().map(|v| v.ln()).collect()).unwrap();
            prop_assert_eq!(empirical_auc(&logged).unwrap(), auc);
        }
    }
}
