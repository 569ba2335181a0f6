//! Unified prediction reporting and MSEP computation.

use serde::{Deserialize, Serialize};

use crate::error::{FsrError, Result};

/// Mean squared error of prediction over a test sample.
pub fn msep(y_test: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y_test.is_empty() || y_test.len() != y_hat.len() {
        return Err(FsrError::DimensionMismatch(format!(
            "{} test responses vs {} predictions",
            y_test.len(),
            y_hat.len()
        )));
    }
    Ok(y_test
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y_test.len() as f64)
}

/// Predictions for a test sample. Queries whose smoothing neighborhood was
/// empty carry NaN, are listed in `failed_indices`, and are excluded from
/// the MSEP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub predictions: Vec<f64>,
    pub failed_indices: Vec<usize>,
    pub msep: Option<f64>,
    /// Second prediction set for option 3 (the 3b variant).
    pub predictions_secondary: Option<Vec<f64>>,
    pub msep_secondary: Option<f64>,
    pub option: u8,
}

impl PredictionReport {
    /// Assemble a report from per-query estimation results.
    pub fn from_results(
        results: Vec<Result<f64>>,
        y_test: Option<&[f64]>,
        option: u8,
    ) -> Result<Self> {
        if let Some(yt) = y_test {
            if yt.len() != results.len() {
                return Err(FsrError::DimensionMismatch(format!(
                    "{} test responses vs {} queries",
                    yt.len(),
                    results.len()
                )));
            }
        }
        let mut predictions = Vec::with_capacity(results.len());
        let mut failed = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(v) => predictions.push(v),
                Err(FsrError::EmptyNeighborhood) => {
                    predictions.push(f64::NAN);
                    failed.push(i);
                }
                Err(e) => return Err(e),
            }
        }
        let msep_val = y_test.map(|yt| {
            let mut acc = 0.0;
            let mut cnt = 0usize;
            for (i, p) in predictions.iter().enumerate() {
                if p.is_nan() {
                    continue;
                }
                acc += (yt[i] - p).powi(2);
                cnt += 1;
            }
            if cnt == 0 {
                f64::NAN
            } else {
                acc / cnt as f64
            }
        });
        Ok(Self {
            predictions,
            failed_indices: failed,
            msep: msep_val,
            predictions_secondary: None,
            msep_secondary: None,
            option,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn msep_hand_cases() {
        assert_eq!(msep(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(msep(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(
            msep(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(msep(&[1.0], &[1.0, 2.0]).is_err());
        assert!(msep(&[], &[]).is_err());
    }

    #[test]
    fn msep_translation_consistent() {
        let a = [1.0, 2.0, 4.0];
        let b = [1.5, 1.0, 3.0];
        let shifted_a: Vec<f64> = a.iter().map(|v| v + 7.0).collect();
        let shifted_b: Vec<f64> = b.iter().map(|v| v + 7.0).collect();
        assert_abs_diff_eq!(
            msep(&a, &b).unwrap(),
            msep(&shifted_a, &shifted_b).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn failures_excluded_from_msep() {
        let results = vec![
            Ok(1.0),
            Err(FsrError::EmptyNeighborhood),
            Ok(3.0),
        ];
        let rep = PredictionReport::from_results(results, Some(&[1.0, 99.0, 4.0]), 1).unwrap();
        assert_eq!(rep.failed_indices, vec![1]);
        assert!(rep.predictions[1].is_nan());
        assert_abs_diff_eq!(rep.msep.unwrap(), 0.5, epsilon = 1e-15);
    }
}
