//! Support vector classifiers: a dual kernel SVM that supervises the deep
//! kernel and a one-vs-rest linear SVM over hash codes.

mod kernel_svm;
mod linear;

pub use kernel_svm::{train_kernel_svm, KernelSvmModel, KernelSvmOptions};
pub use linear::{train_linear_svm, LinearSvmModel, LinearSvmOptions};

use crate::error::{Error, Result};

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_class(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// Fraction of positions where `predicted` equals `actual`.
pub fn accuracy(predicted: &[usize], actual: &[usize]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            actual: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::Degenerate("accuracy of an empty prediction set".into()));
    }
    let correct = predicted.iter().zip(actual).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / actual.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_picks_largest_and_lowest_on_tie() {
        assert_eq!(argmax_class(&[0.2, 0.9, 0.1]), 1);
        assert_eq!(argmax_class(&[0.5, 0.5]), 0);
    }

    #[test]
    fn accuracy_counts_matches() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 0]).unwrap(), 2.0 / 3.0);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }
}
