//! Matching metrics (precision, recall, F1), pseudo-label quality
//! (TPR, TNR), and best-epoch selection. All pure functions.
//!
//! Zero-denominator metrics return 0 rather than NaN so reports and
//! logs stay total.

use serde::{Deserialize, Serialize};

use crate::data::MatchLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("prediction/gold length mismatch: {preds} vs {golds}")]
    LengthMismatch { preds: usize, golds: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    pub fn from_pairs(preds: &[MatchLabel], golds: &[MatchLabel]) -> Result<Self, EvalError> {
        if preds.len() != golds.len() {
            return Err(EvalError::LengthMismatch { preds: preds.len(), golds: golds.len() });
        }
        let mut counts = ConfusionCounts::default();
        for (&pred, &gold) in preds.iter().zip(golds) {
            match (pred, gold) {
                (MatchLabel::Matched, MatchLabel::Matched) => counts.true_pos += 1,
                (MatchLabel::Matched, MatchLabel::Mismatched) => counts.false_pos += 1,
                (MatchLabel::Mismatched, MatchLabel::Mismatched) => counts.true_neg += 1,
                (MatchLabel::Mismatched, MatchLabel::Matched) => counts.false_neg += 1,
            }
        }
        Ok(counts)
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn precision(&self) -> f64 {
        rate(self.true_pos, self.true_pos + self.false_pos)
    }

    pub fn recall(&self) -> f64 {
        rate(self.true_pos, self.true_pos + self.false_neg)
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Proportion of truly matched pairs that are labeled matched.
    pub fn tpr(&self) -> f64 {
        rate(self.true_pos, self.true_pos + self.false_neg)
    }

    /// Proportion of truly mismatched pairs that are labeled mismatched.
    pub fn tnr(&self) -> f64 {
        rate(self.true_neg, self.true_neg + self.false_pos)
    }
}

/// Precision/recall/F1 triple as reported everywhere.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn prf(preds: &[MatchLabel], golds: &[MatchLabel]) -> Result<Prf, EvalError> {
    let counts = ConfusionCounts::from_pairs(preds, golds)?;
    Ok(Prf { precision: counts.precision(), recall: counts.recall(), f1: counts.f1() })
}

/// Pseudo-label quality against hidden golds. The golds never reach
/// training; this is an evaluation-harness function only.
pub fn tpr_tnr(pseudo_labels: &[MatchLabel], hidden_golds: &[MatchLabel]) -> Result<(f64, f64), EvalError> {
    let counts = ConfusionCounts::from_pairs(pseudo_labels, hidden_golds)?;
    Ok((counts.tpr(), counts.tnr()))
}

/// 1-based epoch with the highest validation F1; ties go to the
/// earliest epoch. `None` on an empty slice.
pub fn select_best_epoch(valid_f1s: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &f1) in valid_f1s.iter().enumerate() {
        match best {
            Some((_, bf)) if f1 <= bf => {}
            _ => best = Some((i + 1, f1)),
        }
    }
    best.map(|(epoch, _)| epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn labels(bits: &[u8]) -> Vec<MatchLabel> {
        bits.iter().map(|&b| MatchLabel::from_bit(b).unwrap()).collect()
    }

    #[test]
    fn prf_basic_arithmetic() {
        // TP=2, FP=1, FN=1, TN=1
        let preds = labels(&[1, 1, 1, 0, 0]);
        let golds = labels(&[1, 1, 0, 1, 0]);
        let m = prf(&preds, &golds).unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn prf_all_correct() {
        let golds = labels(&[1, 0, 1, 0]);
        let m = prf(&golds, &golds).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn prf_zero_denominators() {
        let preds = labels(&[0, 0]);
        let golds = labels(&[0, 0]);
        let m = prf(&preds, &golds).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn prf_length_mismatch_is_an_error() {
        let err = prf(&labels(&[1]), &labels(&[1, 0])).unwrap_err();
        assert_eq!(err, EvalError::LengthMismatch { preds: 1, golds: 2 });
    }

    #[test]
    fn tpr_tnr_all_correct() {
        let golds = labels(&[1, 1, 0, 0, 0]);
        assert_eq!(tpr_tnr(&golds, &golds).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn tpr_zero_when_only_positive_missed() {
        let pseudo = labels(&[0, 0, 0]);
        let golds = labels(&[1, 0, 0]);
        assert_eq!(tpr_tnr(&pseudo, &golds).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn tpr_tnr_matches_hand_count() {
        // 50 pairs from a fixed pattern; count the confusion matrix by hand.
        let mut pseudo = Vec::new();
        let mut golds = Vec::new();
        for i in 0..50usize {
            golds.push(if i % 3 == 0 { 1 } else { 0 });
            pseudo.push(if i % 5 == 0 || i % 3 == 0 && i % 2 == 0 { 1 } else { 0 });
        }
        let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
        for (&p, &g) in pseudo.iter().zip(&golds) {
            match (p, g) {
                (1, 1) => tp += 1,
                (0, 1) => fn_ += 1,
                (0, 0) => tn += 1,
                (1, 0) => fp += 1,
                _ => unreachable!(),
            }
        }
        let (tpr, tnr) = tpr_tnr(&labels(&pseudo), &labels(&golds)).unwrap();
        assert_eq!(tpr, tp as f64 / (tp + fn_) as f64);
        assert_eq!(tnr, tn as f64 / (tn + fp) as f64);
    }

    #[test]
    fn best_epoch_is_argmax_with_earliest_tie() {
        assert_eq!(select_best_epoch(&[0.5, 0.8, 0.7]), Some(2));
        assert_eq!(select_best_epoch(&[0.4, 0.4, 0.4]), Some(1));
        assert_eq!(select_best_epoch(&[]), None);
    }

    #[test]
    fn best_epoch_matches_linear_scan_oracle() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = crate::seeds::splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let n = 1 + (next() * 20.0) as usize;
            // Coarse grid so ties actually occur.
            let f1s: Vec<f64> = (0..n).map(|_| (next() * 10.0).floor() / 10.0).collect();
            let mut best_idx = 0;
            for i in 1..n {
                if f1s[i] > f1s[best_idx] {
                    best_idx = i;
                }
            }
            assert_eq!(select_best_epoch(&f1s), Some(best_idx + 1));
        }
    }
}
