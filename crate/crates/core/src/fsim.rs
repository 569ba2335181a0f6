//! Functional single-index model estimation: Y = r(<theta, X>) + e.
//!
//! Candidate directions are B-spline expansions normalized to unit L2 norm
//! with positive sign at a reference point. The grid fitter enumerates
//! seed-coefficient vectors and jointly minimizes leave-one-out CV over
//! (direction, tuning parameter); the iterative fitter alternates tuning
//! selection with a Nelder-Mead refinement of the direction coefficients.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::basis::{cross_gram_matrix, project_curves, BSplineBasis, FunctionalSample};
use crate::error::{FsrError, Result};
use crate::metrics::{distances_from_scores, DistanceMatrix};
use crate::model::{diagnostics_from, Diagnostics};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::predict::PredictionReport;
use crate::smooth::{
    argmin_cv, bandwidth_grid, estimate_at_queries, fitted_leave_in, knn_grid, loocv_kernel_grid,
    loocv_knn_grid, Method, SmoothKind, TuningGridConfig,
};

/// Coefficients of a functional direction in its B-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexCoefficients {
    pub alpha: Vec<f64>,
    pub basis: BSplineBasis,
}

impl IndexCoefficients {
    /// theta(t) = sum_j alpha_j e_j(t).
    pub fn eval(&self, t: f64) -> Result<f64> {
        let b = self.basis.eval(t)?;
        Ok(b.iter().zip(&self.alpha).map(|(e, a)| e * a).sum())
    }

    /// theta on an equispaced grid of `len` points (for plot data).
    pub fn eval_grid(&self, len: usize) -> Vec<(f64, f64)> {
        let (a, b) = self.basis.domain();
        (0..len)
            .map(|i| {
                let t = a + (b - a) * i as f64 / (len - 1) as f64;
                (t, self.eval(t).expect("t inside domain"))
            })
            .collect()
    }
}

/// Seed-coefficient enumeration settings for the direction grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaGridConfig {
    /// Seed set C; every vector of C^d except all-zeros is a candidate.
    pub seed_coeff: Vec<f64>,
    /// Interior knots of the direction basis.
    pub nknot_theta: usize,
    /// Identifiability point t0 (domain midpoint when unset).
    pub t0: Option<f64>,
}

impl Default for ThetaGridConfig {
    fn default() -> Self {
        Self {
            seed_coeff: vec![-1.0, 0.0, 1.0],
            nknot_theta: 3,
            t0: None,
        }
    }
}

/// Shared settings of the FSIM fitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsimConfig {
    /// B-spline order for both the curves and the direction.
    pub order: usize,
    /// Interior knots for the curve representation; default
    /// floor((p - order - 1) / 2).
    pub nknot: Option<usize>,
    pub theta: ThetaGridConfig,
    pub tuning: TuningGridConfig,
}

impl Default for FsimConfig {
    fn default() -> Self {
        Self {
            order: 3,
            nknot: None,
            theta: ThetaGridConfig::default(),
            tuning: TuningGridConfig::default(),
        }
    }
}

/// Extra settings of the iterative fitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterativeConfig {
    /// Initial direction coefficients gamma (all ones when unset).
    pub gamma: Option<Vec<f64>>,
    /// Stop once the scaled CV improvement falls below this.
    pub threshold: f64,
    pub max_outer: usize,
    pub nm_tol: f64,
    pub nm_max_evals: usize,
}

impl Default for IterativeConfig {
    fn default() -> Self {
        Self {
            gamma: None,
            threshold: 5e-3,
            max_outer: 50,
            nm_tol: 1e-8,
            nm_max_evals: 2000,
        }
    }
}

/// Precomputed geometry tying a direction basis to a curve basis: curve
/// projections, the cross-Gram for inner products, and the direction Gram
/// for normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSpace {
    pub curve_basis: BSplineBasis,
    pub theta_basis: BSplineBasis,
    pub cross_gram: DMatrix<f64>,
    pub theta_gram: DMatrix<f64>,
    pub t0: f64,
    theta_at_t0: Vec<f64>,
    curve_coefs: DMatrix<f64>, // n x d_curve, training curves
}

impl ProjectionSpace {
    pub fn build(
        x: &FunctionalSample,
        order: usize,
        nknot: Option<usize>,
        nknot_theta: usize,
        t0: Option<f64>,
    ) -> Result<Self> {
        let p = x.n_points();
        let nknot = match nknot {
            Some(v) => v,
            None => p.saturating_sub(order + 1) / 2,
        };
        let domain = x.domain();
        let curve_basis = BSplineBasis::new(order, nknot, domain)?;
        let theta_basis = BSplineBasis::new(order, nknot_theta, domain)?;
        let cross_gram = cross_gram_matrix(&theta_basis, &curve_basis)?;
        let theta_gram = theta_basis.gram_matrix();
        let t0 = t0.unwrap_or(0.5 * (domain.0 + domain.1));
        let theta_at_t0 = theta_basis.eval(t0)?;
        let curve_coefs = project_curves(x, &curve_basis)?.coefs;
        Ok(Self {
            curve_basis,
            theta_basis,
            cross_gram,
            theta_gram,
            t0,
            theta_at_t0,
            curve_coefs,
        })
    }

    pub fn theta_dimension(&self) -> usize {
        self.theta_basis.dimension()
    }

    /// <theta_alpha, X_i> for every training curve.
    pub fn scores(&self, alpha: &[f64]) -> Vec<f64> {
        let w = self.cross_gram.transpose() * DMatrix::from_column_slice(alpha.len(), 1, alpha);
        (&self.curve_coefs * w).iter().copied().collect()
    }

    /// Scores of new curves on the same grid.
    pub fn scores_for(&self, new_x: &FunctionalSample, alpha: &[f64]) -> Result<Vec<f64>> {
        let coefs = project_curves(new_x, &self.curve_basis)?.coefs;
        let w = self.cross_gram.transpose() * DMatrix::from_column_slice(alpha.len(), 1, alpha);
        Ok((coefs * w).iter().copied().collect())
    }

    /// theta(t0) for raw coefficients.
    pub fn value_at_t0(&self, coefs: &[f64]) -> f64 {
        self.theta_at_t0
            .iter()
            .zip(coefs)
            .map(|(e, c)| e * c)
            .sum()
    }

    /// <theta, theta> = alpha' G alpha.
    pub fn theta_norm_sq(&self, coefs: &[f64]) -> f64 {
        let v = DMatrix::from_column_slice(coefs.len(), 1, coefs);
        (v.transpose() * &self.theta_gram * v)[(0, 0)]
    }

    /// Identifiability calibration: scale to unit norm and flip sign so
    /// theta(t0) > 0. `None` when the norm vanishes or theta(t0) = 0.
    pub fn calibrate(&self, coefs: &[f64]) -> Option<Vec<f64>> {
        let nsq = self.theta_norm_sq(coefs);
        if !(nsq > 0.0) || !nsq.is_finite() {
            return None;
        }
        let norm = nsq.sqrt();
        let at_t0 = self.value_at_t0(coefs);
        if at_t0 == 0.0 {
            return None;
        }
        let sign = if at_t0 < 0.0 { -1.0 } else { 1.0 };
        Some(coefs.iter().map(|c| sign * c / norm).collect())
    }
}

/// All admissible normalized directions from the seed-coefficient
/// enumeration, in lexicographic seed order, deduplicated on exact
/// equality.
pub fn enumerate_theta_grid(
    cfg: &ThetaGridConfig,
    space: &ProjectionSpace,
) -> Result<Vec<Vec<f64>>> {
    if cfg.seed_coeff.is_empty() {
        return Err(FsrError::InvalidArgument("seed.coeff is empty".into()));
    }
    let d = space.theta_dimension();
    let base = cfg.seed_coeff.len();
    let total = base
        .checked_pow(d as u32)
        .ok_or_else(|| FsrError::InvalidArgument("seed enumeration too large".into()))?;
    let mut out = Vec::new();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut beta = vec![0.0; d];
    for idx in 0..total {
        let mut rem = idx;
        let mut all_zero = true;
        for slot in (0..d).rev() {
            let c = cfg.seed_coeff[rem % base];
            rem /= base;
            beta[slot] = c;
            if c != 0.0 {
                all_zero = false;
            }
        }
        if all_zero {
            continue;
        }
        if space.value_at_t0(&beta) <= 0.0 {
            continue;
        }
        if let Some(alpha) = space.calibrate(&beta) {
            let key: Vec<u64> = alpha.iter().map(|v| v.to_bits()).collect();
            if seen.insert(key) {
                out.push(alpha);
            }
        }
    }
    if out.is_empty() {
        return Err(FsrError::EmptyThetaGrid);
    }
    Ok(out)
}

/// A fitted functional single-index model, carrying the training snapshot
/// needed for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsimFit {
    pub kind: SmoothKind,
    pub method: Method,
    pub theta: IndexCoefficients,
    pub cv_opt: f64,
    pub fitted_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub diagnostics: Diagnostics,
    pub y: Vec<f64>,
    pub x: FunctionalSample,
    pub train_scores: Vec<f64>,
    pub order: usize,
    pub nknot: usize,
    pub nknot_theta: usize,
    pub t0: f64,
    pub tuning: TuningGridConfig,
}

impl FsimFit {
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

fn validate_xy(x: &FunctionalSample, y: &[f64]) -> Result<()> {
    if x.n() != y.len() {
        return Err(FsrError::DimensionMismatch(format!(
            "{} curves vs {} responses",
            x.n(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FsrError::NonFinite("response vector"));
    }
    Ok(())
}

/// CV scores for every tuning candidate of one direction; `None` when the
/// direction admits no candidate grid (degenerate distances).
fn candidate_scores(
    dist: &DistanceMatrix,
    y: &[f64],
    kind: SmoothKind,
    tuning: &TuningGridConfig,
    n: usize,
) -> Option<(Vec<Method>, Vec<f64>)> {
    match kind {
        SmoothKind::Kernel => {
            let hs = bandwidth_grid(dist, tuning).ok()?;
            let scores = loocv_kernel_grid(dist, y, &hs).ok()?;
            Some((
                hs.into_iter().map(|h| Method::Kernel { h }).collect(),
                scores,
            ))
        }
        SmoothKind::Knn => {
            let ks = knn_grid(n, tuning).ok()?;
            let scores = loocv_knn_grid(dist, y, &ks).ok()?;
            Some((ks.into_iter().map(|k| Method::Knn { k }).collect(), scores))
        }
    }
}

struct Optimum {
    alpha: Vec<f64>,
    method: Method,
    cv: f64,
}

fn assemble_fit(
    x: &FunctionalSample,
    y: &[f64],
    kind: SmoothKind,
    cfg: &FsimConfig,
    space: &ProjectionSpace,
    opt: Optimum,
) -> Result<FsimFit> {
    let scores = space.scores(&opt.alpha);
    let dist = distances_from_scores(&scores, &scores);
    let (fitted, trace) = fitted_leave_in(&dist, y, opt.method)?;
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(yi, fi)| yi - fi).collect();
    let df = y.len() as f64 - trace;
    let diagnostics = diagnostics_from(&residuals, y, df)?;
    Ok(FsimFit {
        kind,
        method: opt.method,
        theta: IndexCoefficients {
            alpha: opt.alpha,
            basis: space.theta_basis.clone(),
        },
        cv_opt: opt.cv,
        fitted_values: fitted,
        residuals,
        diagnostics,
        y: y.to_vec(),
        x: x.clone(),
        train_scores: scores,
        order: cfg.order,
        nknot: space.curve_basis.n_interior_knots(),
        nknot_theta: cfg.theta.nknot_theta,
        t0: space.t0,
        tuning: cfg.tuning.clone(),
    })
}

/// Joint grid minimization of the LOOCV objective over every enumerated
/// direction and every tuning candidate.
pub fn fsim_fit_grid(
    x: &FunctionalSample,
    y: &[f64],
    kind: SmoothKind,
    cfg: &FsimConfig,
) -> Result<FsimFit> {
    validate_xy(x, y)?;
    let n = y.len();
    if n < 3 {
        return Err(FsrError::InvalidArgument(
            "need at least three observations".into(),
        ));
    }
    let space =
        ProjectionSpace::build(x, cfg.order, cfg.nknot, cfg.theta.nknot_theta, cfg.theta.t0)?;
    let candidates = enumerate_theta_grid(&cfg.theta, &space)?;

    // Each direction is scored independently; the reduction key
    // (cv, direction index, candidate index) makes the argmin unique and
    // thread-count independent.
    let per_theta: Vec<Option<(f64, usize, Method)>> = candidates
        .par_iter()
        .map(|alpha| {
            let scores = space.scores(alpha);
            let dist = distances_from_scores(&scores, &scores);
            let (methods, cvs) = candidate_scores(&dist, y, kind, &cfg.tuning, n)?;
            argmin_cv(&cvs).map(|(idx, cv)| (cv, idx, methods[idx]))
        })
        .collect();

    let mut best: Option<(f64, usize, usize, Method)> = None;
    for (ti, entry) in per_theta.iter().enumerate() {
        if let Some((cv, ci, method)) = entry {
            let replace = match &best {
                None => true,
                Some((bcv, bti, bci, _)) => (*cv, ti, *ci) < (*bcv, *bti, *bci),
            };
            if replace {
                best = Some((*cv, ti, *ci, *method));
            }
        }
    }
    let (cv, ti, _, method) = best.ok_or_else(|| {
        FsrError::AllCandidatesInfeasible("every (direction, tuning) pair had infinite CV".into())
    })?;
    assemble_fit(
        x,
        y,
        kind,
        cfg,
        &space,
        Optimum {
            alpha: candidates[ti].clone(),
            method,
            cv,
        },
    )
}

/// Tuning selection for a fixed direction: grid from the direction's own
/// distances, optionally augmented with a previously selected candidate so
/// the accepted CV sequence stays monotone across iterations.
fn select_tuning(
    space: &ProjectionSpace,
    alpha: &[f64],
    y: &[f64],
    kind: SmoothKind,
    tuning: &TuningGridConfig,
    carry: Option<Method>,
) -> Option<(Method, f64)> {
    let scores = space.scores(alpha);
    let dist = distances_from_scores(&scores, &scores);
    let n = y.len();
    let (mut methods, mut cvs) = candidate_scores(&dist, y, kind, tuning, n)?;
    if let Some(prev) = carry {
        if !methods.contains(&prev) {
            let score = match prev {
                Method::Kernel { h } => loocv_kernel_grid(&dist, y, &[h]).ok()?[0],
                Method::Knn { k } => loocv_knn_grid(&dist, y, &[k]).ok()?[0],
            };
            methods.push(prev);
            cvs.push(score);
        }
    }
    argmin_cv(&cvs).map(|(idx, cv)| (methods[idx], cv))
}

/// Iterative estimation: calibrate the current coefficients to the
/// identifiability constraints, select the tuning parameter by LOOCV,
/// refine the coefficients by Nelder-Mead at fixed tuning, and stop when
/// the scaled CV improvement is positive but below `threshold` (keeping
/// the previous iterate when the improvement is not positive).
pub fn fsim_fit_iterative(
    x: &FunctionalSample,
    y: &[f64],
    kind: SmoothKind,
    cfg: &FsimConfig,
    iter_cfg: &IterativeConfig,
) -> Result<FsimFit> {
    validate_xy(x, y)?;
    let n = y.len();
    if n < 3 {
        return Err(FsrError::InvalidArgument(
            "need at least three observations".into(),
        ));
    }
    let space =
        ProjectionSpace::build(x, cfg.order, cfg.nknot, cfg.theta.nknot_theta, cfg.theta.t0)?;
    let d = space.theta_dimension();
    let mut gamma = match &iter_cfg.gamma {
        Some(g) => {
            if g.len() != d {
                return Err(FsrError::DimensionMismatch(format!(
                    "gamma has {} entries, direction basis dimension is {d}",
                    g.len()
                )));
            }
            g.clone()
        }
        None => vec![1.0; d],
    };
    let mean = y.iter().sum::<f64>() / n as f64;
    let var_y = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if !(var_y > 0.0) {
        return Err(FsrError::InvalidArgument(
            "response has zero variance; the iterative stop rule is undefined".into(),
        ));
    }

    let nm_opts = NelderMeadOptions {
        tol: iter_cfg.nm_tol,
        max_evals: iter_cfg.nm_max_evals,
    };
    let mut carry: Option<Method> = None;
    let mut accepted: Option<Optimum> = None;

    for _ in 0..iter_cfg.max_outer.max(1) {
        let alpha = space
            .calibrate(&gamma)
            .ok_or(FsrError::NonFinite("direction coefficients during iteration"))?;
        let (method, cv_b) = match select_tuning(&space, &alpha, y, kind, &cfg.tuning, carry) {
            Some(v) => v,
            None => match accepted {
                Some(_) => break,
                None => {
                    return Err(FsrError::AllCandidatesInfeasible(
                        "no feasible tuning candidate at the initial direction".into(),
                    ))
                }
            },
        };
        accepted = Some(Optimum {
            alpha: alpha.clone(),
            method,
            cv: cv_b,
        });
        carry = Some(method);

        let objective = |g: &[f64]| -> f64 {
            match space.calibrate(g) {
                Some(a) => {
                    let scores = space.scores(&a);
                    let dist = distances_from_scores(&scores, &scores);
                    match method {
                        Method::Kernel { h } => loocv_kernel_grid(&dist, y, &[h])
                            .map(|v| v[0])
                            .unwrap_or(f64::INFINITY),
                        Method::Knn { k } => loocv_knn_grid(&dist, y, &[k])
                            .map(|v| v[0])
                            .unwrap_or(f64::INFINITY),
                    }
                }
                None => f64::INFINITY,
            }
        };
        let gamma_new = nelder_mead(objective, &gamma, nm_opts);
        let cv_new = objective(&gamma_new);
        let delta = (cv_b - cv_new) / var_y;
        if delta <= 0.0 {
            // no improvement: keep the pre-refinement iterate
            break;
        }
        gamma = gamma_new;
        if let Some(alpha_new) = space.calibrate(&gamma) {
            if let Some((method_new, cv_sel)) =
                select_tuning(&space, &alpha_new, y, kind, &cfg.tuning, carry)
            {
                accepted = Some(Optimum {
                    alpha: alpha_new,
                    method: method_new,
                    cv: cv_sel,
                });
                carry = Some(method_new);
            }
        }
        if delta < iter_cfg.threshold {
            break;
        }
    }

    let opt = accepted.expect("at least one accepted iterate");
    assemble_fit(x, y, kind, cfg, &space, opt)
}

/// Predictions for new curves from a fitted FSIM, with MSEP when the test
/// responses are supplied.
pub fn fsim_predict(
    fit: &FsimFit,
    new_x: &FunctionalSample,
    y_test: Option<&[f64]>,
) -> Result<PredictionReport> {
    if new_x.grid() != fit.x.grid() {
        return Err(FsrError::DimensionMismatch(
            "new curves must be discretized on the training grid".into(),
        ));
    }
    let space = ProjectionSpace::build(
        &fit.x,
        fit.order,
        Some(fit.nknot),
        fit.nknot_theta,
        Some(fit.t0),
    )?;
    let new_scores = space.scores_for(new_x, &fit.theta.alpha)?;
    let dist = distances_from_scores(&fit.train_scores, &new_scores);
    let results = estimate_at_queries(&dist, &fit.y, fit.method);
    PredictionReport::from_results(results, y_test, 1)
}

/// Run a fitter for every candidate interior-knot count of the direction
/// basis and keep the CV-minimizing one (ties toward the smaller count).
pub fn select_nknot_theta<F>(candidates: &[usize], mut fitter: F) -> Result<(usize, FsimFit)>
where
    F: FnMut(usize) -> Result<FsimFit>,
{
    if candidates.is_empty() {
        return Err(FsrError::InvalidArgument(
            "empty nknot.theta candidate list".into(),
        ));
    }
    let mut best: Option<(usize, FsimFit)> = None;
    for &nr in candidates {
        let fit = fitter(nr)?;
        let replace = match &best {
            None => true,
            Some((bnr, bfit)) => fit.cv_opt < bfit.cv_opt || (fit.cv_opt == bfit.cv_opt && nr < *bnr),
        };
        if replace {
            best = Some((nr, fit));
        }
    }
    Ok(best.expect("nonempty candidates"))
}

/// Exhaustive re-scan certificate for a grid fit: returns
/// cv_opt - min over every enumerated (direction, tuning) pair. Zero (up
/// to rounding) certifies grid optimality.
pub fn grid_optimality_gap(
    x: &FunctionalSample,
    y: &[f64],
    kind: SmoothKind,
    cfg: &FsimConfig,
    fit: &FsimFit,
) -> Result<f64> {
    let space =
        ProjectionSpace::build(x, cfg.order, cfg.nknot, cfg.theta.nknot_theta, cfg.theta.t0)?;
    let candidates = enumerate_theta_grid(&cfg.theta, &space)?;
    let n = y.len();
    let mut min_cv = f64::INFINITY;
    for alpha in &candidates {
        let scores = space.scores(alpha);
        let dist = distances_from_scores(&scores, &scores);
        if let Some((_, cvs)) = candidate_scores(&dist, y, kind, &cfg.tuning, n) {
            for cv in cvs {
                if cv < min_cv {
                    min_cv = cv;
                }
            }
        }
    }
    Ok(fit.cv_opt - min_cv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xorshift64Star;
    use approx::assert_abs_diff_eq;

    fn fourier_curves(n: usize, p: usize, rng: &mut Xorshift64Star) -> FunctionalSample {
        let grid: Vec<f64> = (0..p).map(|j| j as f64 / (p - 1) as f64).collect();
        let mut values = DMatrix::zeros(n, p);
        for i in 0..n {
            let coefs: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            for (j, &t) in grid.iter().enumerate() {
                let mut v = coefs[0];
                for f in 1..=2 {
                    let w = 2.0 * std::f64::consts::PI * f as f64 * t;
                    v += coefs[2 * f - 1] * w.sin() / f as f64 + coefs[2 * f] * w.cos() / f as f64;
                }
                values[(i, j)] = v;
            }
        }
        FunctionalSample::new(values, grid).unwrap()
    }

    fn small_cfg() -> FsimConfig {
        FsimConfig {
            order: 3,
            nknot: Some(4),
            theta: ThetaGridConfig {
                seed_coeff: vec![-1.0, 0.0, 1.0],
                nknot_theta: 1,
                t0: None,
            },
            tuning: TuningGridConfig {
                min_knn: Some(2),
                max_knn: Some(8),
                step: Some(1),
                ..TuningGridConfig::default()
            },
        }
    }

    #[test]
    fn enumeration_counts_and_normalization() {
        let mut rng = Xorshift64Star::new(1);
        let x = fourier_curves(5, 30, &mut rng);
        // d = 7 case: at most (3^7 - 1) / 2 candidates survive the sign rule
        let space = ProjectionSpace::build(&x, 3, Some(6), 4, None).unwrap();
        let cfg = ThetaGridConfig {
            seed_coeff: vec![-1.0, 0.0, 1.0],
            nknot_theta: 4,
            t0: None,
        };
        let grid = enumerate_theta_grid(&cfg, &space).unwrap();
        assert!(grid.len() <= (3usize.pow(7) - 1) / 2);
        assert!(grid.len() > 1000);
        for alpha in &grid {
            assert_abs_diff_eq!(space.theta_norm_sq(alpha), 1.0, epsilon = 1e-10);
            assert!(space.value_at_t0(alpha) > 0.0);
        }
        // d = 1 constant basis on [a, b]: single candidate 1/sqrt(b - a)
        let grid2: Vec<f64> = (0..20).map(|j| 2.0 + 3.0 * j as f64 / 19.0).collect();
        let vals = DMatrix::from_fn(3, 20, |i, j| (i as f64 + 1.0) * grid2[j]);
        let xs = FunctionalSample::new(vals, grid2).unwrap();
        let space1 = ProjectionSpace::build(&xs, 1, Some(5), 0, None).unwrap();
        let g1 = enumerate_theta_grid(
            &ThetaGridConfig {
                seed_coeff: vec![-1.0, 0.0, 1.0],
                nknot_theta: 0,
                t0: None,
            },
            &space1,
        )
        .unwrap();
        assert_eq!(g1.len(), 1);
        assert_abs_diff_eq!(g1[0][0], 1.0 / 3.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn planted_index_recovered_by_grid_search() {
        let mut rng = Xorshift64Star::new(42);
        let n = 60;
        let x = fourier_curves(n, 40, &mut rng);
        let cfg = small_cfg();
        let space = ProjectionSpace::build(&x, 3, Some(4), 1, None).unwrap();
        let grid = enumerate_theta_grid(&cfg.theta, &space).unwrap();
        let target = &grid[grid.len() / 3];
        let scores = space.scores(target);
        let y: Vec<f64> = scores.iter().map(|s| (1.2 * s).sin() + 0.5 * s).collect();
        let fit = fsim_fit_grid(&x, &y, SmoothKind::Knn, &cfg).unwrap();
        let planted_scores = space.scores(target);
        let corr = correlation(&fit.train_scores, &planted_scores);
        assert!(corr.abs() >= 0.99, "score correlation {corr}");
        // optimality certificate by exhaustive re-scan
        let gap = grid_optimality_gap(&x, &y, SmoothKind::Knn, &cfg, &fit).unwrap();
        assert!(gap.abs() <= 1e-12, "gap {gap}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for (x, y) in a.iter().zip(b) {
            num += (x - ma) * (y - mb);
            da += (x - ma).powi(2);
            db += (y - mb).powi(2);
        }
        num / (da * db).sqrt()
    }

    #[test]
    fn constant_response_gives_zero_cv_and_unit_r2() {
        let mut rng = Xorshift64Star::new(8);
        let x = fourier_curves(20, 30, &mut rng);
        let y = vec![2.5; 20];
        let fit = fsim_fit_grid(&x, &y, SmoothKind::Knn, &small_cfg()).unwrap();
        assert_abs_diff_eq!(fit.cv_opt, 0.0, epsilon = 1e-20);
        assert_eq!(fit.diagnostics.r_squared, 1.0);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn kernel_estimates_scale_invariant_under_joint_rescaling() {
        // CV at (c*theta, c*h) equals CV at (theta, h): the normalized
        // enumeration loses no fits
        let mut rng = Xorshift64Star::new(4);
        let x = fourier_curves(25, 30, &mut rng);
        let space = ProjectionSpace::build(&x, 3, Some(4), 1, None).unwrap();
        let alpha = enumerate_theta_grid(&small_cfg().theta, &space).unwrap()[0].clone();
        let scores = space.scores(&alpha);
        let y: Vec<f64> = scores.iter().map(|s| s * s).collect();
        let dist = distances_from_scores(&scores, &scores);
        let scaled: Vec<f64> = alpha.iter().map(|a| 3.0 * a).collect();
        let s2 = space.scores(&scaled);
        let dist2 = distances_from_scores(&s2, &s2);
        let h = bandwidth_grid(&dist, &TuningGridConfig::default()).unwrap()[9];
        let cv1 = loocv_kernel_grid(&dist, &y, &[h]).unwrap()[0];
        let cv2 = loocv_kernel_grid(&dist2, &y, &[3.0 * h]).unwrap()[0];
        assert!(cv1.is_finite());
        assert_abs_diff_eq!(cv1, cv2, epsilon = 1e-12 * cv1.max(1.0));
    }

    #[test]
    fn predict_on_training_reproduces_fitted_values() {
        let mut rng = Xorshift64Star::new(5);
        let x = fourier_curves(24, 30, &mut rng);
        let y: Vec<f64> = (0..24).map(|_| rng.normal()).collect();
        for kind in [SmoothKind::Knn, SmoothKind::Kernel] {
            let fit = fsim_fit_grid(&x, &y, kind, &small_cfg()).unwrap();
            let pred = fsim_predict(&fit, &x, Some(&y)).unwrap();
            assert_eq!(pred.predictions, fit.fitted_values, "{kind:?}");
            let same = fsim_predict(&fit, &x, Some(&pred.predictions)).unwrap();
            assert_eq!(same.msep, Some(0.0));
        }
    }

    #[test]
    fn iterative_improves_on_initial_direction() {
        let mut rng = Xorshift64Star::new(21);
        let n = 50;
        let x = fourier_curves(n, 30, &mut rng);
        let cfg = small_cfg();
        let space = ProjectionSpace::build(&x, 3, Some(4), 1, None).unwrap();
        // plant an index away from the all-ones start
        let target = space.calibrate(&[1.0, -0.5, 0.25, 0.9]).unwrap();
        let scores = space.scores(&target);
        let y: Vec<f64> = scores
            .iter()
            .map(|s| (2.0 * s).tanh() + 0.01 * rng.normal())
            .collect();
        let iter_cfg = IterativeConfig {
            threshold: 1e-6,
            ..IterativeConfig::default()
        };
        let fit = fsim_fit_iterative(&x, &y, SmoothKind::Knn, &cfg, &iter_cfg).unwrap();
        let init = space.calibrate(&[1.0; 4]).unwrap();
        let (_, cv_init) =
            select_tuning(&space, &init, &y, SmoothKind::Knn, &cfg.tuning, None).unwrap();
        assert!(fit.cv_opt <= cv_init + 1e-12);
        // identifiability invariants
        assert_abs_diff_eq!(space.theta_norm_sq(&fit.theta.alpha), 1.0, epsilon = 1e-8);
        assert!(fit.theta.eval(space.t0).unwrap() > 0.0);
    }

    #[test]
    fn iterative_infinite_threshold_single_outer_iteration() {
        let mut rng = Xorshift64Star::new(33);
        let x = fourier_curves(20, 25, &mut rng);
        let y: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let cfg = small_cfg();
        let one = fsim_fit_iterative(
            &x,
            &y,
            SmoothKind::Knn,
            &cfg,
            &IterativeConfig {
                threshold: f64::INFINITY,
                ..IterativeConfig::default()
            },
        )
        .unwrap();
        // a single outer iteration: max_outer = 1 yields the same fit
        let capped = fsim_fit_iterative(
            &x,
            &y,
            SmoothKind::Knn,
            &cfg,
            &IterativeConfig {
                threshold: f64::INFINITY,
                max_outer: 1,
                ..IterativeConfig::default()
            },
        )
        .unwrap();
        assert_eq!(one, capped);
    }

    #[test]
    fn select_nknot_theta_prefers_lower_cv() {
        let mut rng = Xorshift64Star::new(63);
        let x = fourier_curves(30, 40, &mut rng);
        let space = ProjectionSpace::build(&x, 3, Some(4), 2, None).unwrap();
        let target = space.calibrate(&[0.5, 1.0, -1.0, 0.5, 1.0]).unwrap();
        let scores = space.scores(&target);
        let y: Vec<f64> = scores.iter().map(|s| s + s * s).collect();
        let cfg_for = |nr: usize| FsimConfig {
            theta: ThetaGridConfig {
                nknot_theta: nr,
                ..ThetaGridConfig::default()
            },
            ..small_cfg()
        };
        let (best_nr, best_fit) = select_nknot_theta(&[1, 2], |nr| {
            fsim_fit_grid(&x, &y, SmoothKind::Knn, &cfg_for(nr))
        })
        .unwrap();
        for nr in [1usize, 2] {
            let fit = fsim_fit_grid(&x, &y, SmoothKind::Knn, &cfg_for(nr)).unwrap();
            assert!(best_fit.cv_opt <= fit.cv_opt + 1e-15, "nr = {nr}");
        }
        assert!(best_nr == 1 || best_nr == 2);
        // single candidate returns that candidate
        let (nr, _) = select_nknot_theta(&[2], |nr| {
            fsim_fit_grid(&x, &y, SmoothKind::Knn, &cfg_for(nr))
        })
        .unwrap();
        assert_eq!(nr, 2);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let mut rng = Xorshift64Star::new(90);
        let x = fourier_curves(20, 25, &mut rng);
        let y: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let cfg = small_cfg();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| fsim_fit_grid(&x, &y, SmoothKind::Knn, &cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
