//! Baseline label assigners used for comparison against SLA.

use ndarray::ArrayView2;

use super::model::argmax;
use crate::alloc::SoftLabel;

/// One-hot label at the argmax when the top probability reaches `tau`,
/// otherwise full abstention.
pub fn assign_confidence_threshold(probs: ArrayView2<'_, f64>, tau: f64) -> Vec<SoftLabel> {
    let k = probs.ncols();
    probs
        .outer_iter()
        .map(|row| {
            let j = argmax(row.iter().copied());
            if row[j] >= tau {
                SoftLabel::one_hot(k, j)
            } else {
                SoftLabel::abstain(k)
            }
        })
        .collect()
}

/// One-hot label at the argmax of every row.
pub fn assign_argmax(probs: ArrayView2<'_, f64>) -> Vec<SoftLabel> {
    let k = probs.ncols();
    probs
        .outer_iter()
        .map(|row| SoftLabel::one_hot(k, argmax(row.iter().copied())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn threshold_cases() {
        let probs = array![[0.96, 0.04], [0.6, 0.4], [0.02, 0.98]];
        let labels = assign_confidence_threshold(probs.view(), 0.95);
        assert_eq!(labels[0], SoftLabel::one_hot(2, 0));
        assert_eq!(labels[1], SoftLabel::abstain(2));
        assert_eq!(labels[2], SoftLabel::one_hot(2, 1));
    }

    #[test]
    fn vanishing_threshold_is_pseudo_labeling() {
        let probs = array![[0.5, 0.3, 0.2], [0.1, 0.1, 0.8], [0.34, 0.33, 0.33]];
        assert_eq!(
            assign_confidence_threshold(probs.view(), 1e-12),
            assign_argmax(probs.view())
        );
    }
}
