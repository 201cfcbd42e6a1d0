use serde::Serialize;

use crate::{Error, Result};

/// One operating point: epochs with `score >= threshold` are flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocResult {
    /// From `(0, 0)` at an infinite threshold down to `(1, 1)`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// ROC curve and trapezoidal AUC. Higher scores mean "more anomalous";
/// tied scores enter the curve together.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { what: "scores vs labels", left: scores.len(), right: labels.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let thr = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == thr {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Area of the trapezoid in count units; normalized once at the end.
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push(RocPoint { threshold: thr, fpr: fp as f64 / negatives as f64, tpr: tp as f64 / positives as f64 });
    }
    auc /= positives as f64 * negatives as f64;
    Ok(RocResult { points, auc, positives, negatives })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Probability that a random positive outscores a random negative,
    /// ties counting one half.
    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        num / den
    }

    #[test]
    fn separated_inverted_and_tied() {
        let s = [0.1, 0.2, 0.8, 0.9];
        let l = [false, false, true, true];
        let r = roc_auc(&s, &l).unwrap();
        assert_eq!(r.auc, 1.0);
        assert!(r.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        let inv: Vec<bool> = l.iter().map(|x| !x).collect();
        assert_eq!(roc_auc(&s, &inv).unwrap().auc, 0.0);
        assert_eq!(roc_auc(&[3.0; 6], &[true, false, true, false, false, true]).unwrap().auc, 0.5);
    }

    #[test]
    fn single_class_and_mismatch() {
        assert!(matches!(roc_auc(&[1.0, 2.0], &[true, true]), Err(Error::SingleClass)));
        assert!(matches!(roc_auc(&[1.0, 2.0], &[false, false]), Err(Error::SingleClass)));
        assert!(roc_auc(&[1.0], &[true, false]).is_err());
        assert!(roc_auc(&[f64::NAN, 1.0], &[true, false]).is_err());
    }

    #[test]
    fn curve_is_monotone_and_ends_at_one() {
        let s: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let l: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let r = roc_auc(&s, &l).unwrap();
        assert!(r.points.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
        let last = r.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle(data in prop::collection::vec((0u8..20, any::<bool>()), 2..200)) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&x| x) && labels.iter().any(|&x| !x));
            let r = roc_auc(&scores, &labels).unwrap();
            prop_assert!((r.auc - pairwise(&scores, &labels)).abs() <= 1e-12);
            let inv: Vec<bool> = labels.iter().map(|x| !x).collect();
            prop_assert!((roc_auc(&scores, &inv).unwrap().auc - (1.0 - r.auc)).abs() <= 1e-12);
        }

        #[test]
        fn invariant_under_monotone_maps(data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..100)) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&x| x) && labels.iter().any(|&x| !x));
            let a = roc_auc(&scores, &labels).unwrap().auc;
            let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert!((roc_auc(&mapped, &labels).unwrap().auc - a).abs() <= 1e-12);
        }
    }
}
