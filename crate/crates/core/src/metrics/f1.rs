use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    /// Support-weighted mean of the per-class F1.
    pub weighted: f64,
    /// F1 of the hateful class.
    pub hate: f64,
    pub non_hate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Metric {
    Weighted,
    Hate,
}

impl F1Scores {
    pub fn get(&self, metric: F1Metric) -> f64 {
        match metric {
            F1Metric::Weighted => self.weighted,
            F1Metric::Hate => self.hate,
        }
    }
}

/// Per-class counts: `[tp, fp, fn]` for class 0 and class 1.
fn counts(predictions: impl Iterator<Item = (u8, u8)>) -> ([[u64; 3]; 2], [u64; 2]) {
    let mut c = [[0u64; 3]; 2];
    let mut support = [0u64; 2];
    for (pred, label) in predictions {
        support[label as usize] += 1;
        if pred == label {
            c[label as usize][0] += 1;
        } else {
            c[pred as usize][1] += 1;
            c[label as usize][2] += 1;
        }
    }
    (c, support)
}

fn class_f1([tp, fp, fn_]: [u64; 3], warn: bool, class: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        if warn {
            log::warn!("F1 of class {class} undefined (no predicted or gold instances); using 0");
        }
        return 0.0;
    }
    2.0 * tp as f64 / denom as f64
}

fn from_pairs(pairs: impl Iterator<Item = (u8, u8)>, warn: bool) -> F1Scores {
    let (c, support) = counts(pairs);
    let f = [class_f1(c[0], warn, 0), class_f1(c[1], warn, 1)];
    let total = support[0] + support[1];
    let weighted = if total == 0 {
        0.0
    } else {
        (f[0] * support[0] as f64 + f[1] * support[1] as f64) / total as f64
    };
    F1Scores {
        weighted,
        hate: f[1],
        non_hate: f[0],
    }
}

/// F1 scores of hard predictions.
pub fn f1_from_predictions(predictions: &[u8], labels: &[u8]) -> F1Scores {
    assert_eq!(predictions.len(), labels.len(), "predictions and labels differ in length");
    from_pairs(predictions.iter().copied().zip(labels.iter().copied()), true)
}

/// F1 scores with `score >= threshold` predicted hateful.
pub fn f1_scores(labels: &[u8], scores: &[f64], threshold: f64) -> F1Scores {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let pairs = scores.iter().zip(labels).map(|(&s, &l)| ((s >= threshold) as u8, l));
    from_pairs(pairs, true)
}

/// Same as [`f1_scores`] over a subset of indices, without warnings.
pub(crate) fn f1_on_indices(labels: &[u8], scores: &[f64], threshold: f64, indices: &[usize]) -> F1Scores {
    from_pairs(indices.iter().map(|&i| ((scores[i] >= threshold) as u8, labels[i])), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let f = f1_from_predictions(&[1, 0, 1, 0], &[1, 0, 1, 0]);
        assert_eq!((f.weighted, f.hate), (1.0, 1.0));
    }

    #[test]
    fn hand_confusion_matrix() {
        // class 1: tp 1, fp 1, fn 0 → 2/3; class 0: tp 2, fp 0, fn 1 → 4/5
        let f = f1_from_predictions(&[1, 1, 0, 0], &[1, 0, 0, 0]);
        assert_abs_diff_eq!(f.hate, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.non_hate, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(f.weighted, (2.0 / 3.0 + 3.0 * 0.8) / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.weighted, 0.7667, epsilon = 1e-4);
    }

    #[test]
    fn no_positive_predictions() {
        let f = f1_from_predictions(&[0, 0, 0], &[1, 0, 1]);
        assert_eq!(f.hate, 0.0);
    }

    #[test]
    fn threshold_is_inclusive() {
        let f = f1_scores(&[1, 0], &[0.5, 0.49], 0.5);
        assert_eq!(f.hate, 1.0);
    }

    proptest! {
        #[test]
        fn weighted_between_class_scores(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..60)) {
            let (p, l): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let f = f1_from_predictions(&p, &l);
            let lo = f.hate.min(f.non_hate);
            let hi = f.hate.max(f.non_hate);
            prop_assert!(f.weighted >= lo - 1e-12 && f.weighted <= hi + 1e-12);
        }
    }
}
