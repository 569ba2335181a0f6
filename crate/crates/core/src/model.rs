//! Shared fit-result vocabulary: tuning-selection criteria and the
//! diagnostics block reported by every fitter.

use serde::{Deserialize, Serialize};

use crate::error::{FsrError, Result};

/// Criterion used to select lambda and the smoothing parameter in the
/// penalized fitters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Criterion {
    Gcv,
    Aic,
    Bic,
    KfoldCv { nfolds: usize, seed: u64 },
}

impl Default for Criterion {
    fn default() -> Self {
        Criterion::Gcv
    }
}

impl Criterion {
    /// Information-criterion value from a residual sum of squares and an
    /// effective model dimension. Not defined for `KfoldCv`, which needs
    /// refits rather than a formula.
    pub fn value(&self, rss: f64, n: usize, df: f64) -> Result<f64> {
        let nf = n as f64;
        match self {
            Criterion::Gcv => {
                if df >= nf {
                    return Err(FsrError::OutOfRange {
                        arg: "df",
                        msg: format!("GCV needs df < n, got df = {df}, n = {n}"),
                    });
                }
                Ok(rss / (nf * (1.0 - df / nf).powi(2)))
            }
            Criterion::Aic => {
                if rss <= 0.0 {
                    return Ok(-1e308); // log(0) guard, documented sentinel
                }
                Ok(nf * (rss / nf).ln() + 2.0 * df)
            }
            Criterion::Bic => {
                if rss <= 0.0 {
                    return Ok(-1e308);
                }
                Ok(nf * (rss / nf).ln() + nf.ln() * df)
            }
            Criterion::KfoldCv { .. } => Err(FsrError::InvalidArgument(
                "k-fold CV is evaluated by refitting, not from (rss, df)".into(),
            )),
        }
    }
}

/// Summary statistics attached to every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub r_squared: f64,
    pub var_res: f64,
    pub df: f64,
}

/// r^2 = 1 - SSR / SST (r^2 = 1 when SST = 0, by convention), residual
/// variance SSR / df.
pub fn diagnostics_from(residuals: &[f64], y: &[f64], df: f64) -> Result<Diagnostics> {
    if df <= 0.0 {
        return Err(FsrError::OutOfRange {
            arg: "df",
            msg: "degrees of freedom must be positive".into(),
        });
    }
    if residuals.len() != y.len() {
        return Err(FsrError::DimensionMismatch(format!(
            "{} residuals vs {} responses",
            residuals.len(),
            y.len()
        )));
    }
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if sst == 0.0 { 1.0 } else { 1.0 - ssr / sst };
    Ok(Diagnostics {
        r_squared,
        var_res: ssr / df,
        df,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn criterion_formulas() {
        let c = Criterion::Gcv;
        assert_abs_diff_eq!(c.value(10.0, 5, 0.0).unwrap(), 2.0, epsilon = 1e-14);
        assert_eq!(Criterion::Gcv.value(0.0, 5, 1.0).unwrap(), 0.0);
        assert!(Criterion::Gcv.value(1.0, 5, 5.0).is_err());
        assert_eq!(Criterion::Aic.value(0.0, 5, 1.0).unwrap(), -1e308);
        assert_eq!(Criterion::Bic.value(0.0, 5, 1.0).unwrap(), -1e308);
        // BIC penalizes df harder than AIC once n > e^2
        let n = 20;
        let aic = Criterion::Aic.value(3.0, n, 4.0).unwrap();
        let bic = Criterion::Bic.value(3.0, n, 4.0).unwrap();
        assert!(bic > aic);
    }

    #[test]
    fn diagnostics_cases() {
        let d = diagnostics_from(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0], 2.0).unwrap();
        assert_eq!(d.r_squared, 1.0);
        assert_eq!(d.var_res, 0.0);

        // null-model residuals: r^2 = 0, var_res = sample variance
        let y = [1.0, 2.0, 3.0, 6.0];
        let mean = 3.0;
        let res: Vec<f64> = y.iter().map(|v| v - mean).collect();
        let d = diagnostics_from(&res, &y, 3.0).unwrap();
        assert_abs_diff_eq!(d.r_squared, 0.0, epsilon = 1e-14);
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(d.var_res, var, epsilon = 1e-14);
        assert!(diagnostics_from(&res, &y, 0.0).is_err());
    }

    #[test]
    fn reported_summary_arithmetic() {
        // var_res = 3.323535 on df = 132.9207 implies SSR = 441.766...
        let ssr: f64 = 3.323535 * 132.9207;
        assert_abs_diff_eq!(ssr, 441.766599, epsilon = 1e-5);
        let n = 160;
        let residuals: Vec<f64> = (0..n)
            .map(|i| if i == 0 { ssr.sqrt() } else { 0.0 })
            .collect();
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let d = diagnostics_from(&residuals, &y, 132.9207).unwrap();
        assert_abs_diff_eq!(d.var_res, 3.323535, epsilon = 1e-10);
    }
}
