//! Semi-functional partial linear models: a multivariate linear component
//! plus a functional nonparametric (SFPLM) or functional single-index
//! (SFPLSIM) component.
//!
//! Estimation partials out the functional covariate by leave-one-out
//! smoothing of the response and of every scalar column, applies
//! penalized least squares to the resulting approximate linear model for
//! each smoothing candidate, selects (tuning, lambda) by the configured
//! criterion, and smooths the partial residuals Y - Z'beta with the
//! winning tuning parameter.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BSplineBasis, FunctionalSample};
use crate::error::{FsrError, Result};
use crate::fsim::{
    enumerate_theta_grid, fsim_fit_grid, FsimConfig, IndexCoefficients, ProjectionSpace,
    ThetaGridConfig,
};
use crate::metrics::{
    distances_from_scores, semimetric_deriv, semimetric_pca, DistanceMatrix,
};
use crate::model::{diagnostics_from, Criterion, Diagnostics};
use crate::penalty::{
    contiguous_groups, group_penalty, kfold_path_scores, lambda_path, pels_path, LambdaPathConfig,
    PenaltyKind, PenaltySpec,
};
use crate::predict::PredictionReport;
use crate::smooth::{
    argmin_cv, bandwidth_grid, estimate_at_queries, fitted_leave_in, knn_grid, loo_weights,
    loocv_kernel_grid, loocv_knn_grid, smoother_trace, Method, SmoothKind, TuningGridConfig,
};

/// Semimetric used by the SFPLM (and MFPLM) functional component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SemimetricChoice {
    Deriv,
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemimetricConfig {
    pub kind: SemimetricChoice,
    pub q: usize,
}

impl Default for SemimetricConfig {
    fn default() -> Self {
        Self {
            kind: SemimetricChoice::Deriv,
            q: 0,
        }
    }
}

/// Penalized-selection settings shared by the partial linear fitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub a: f64,
    /// Candidate numbers of contiguous coefficient groups; empty means
    /// ungrouped (one group per coefficient).
    pub vn: Vec<usize>,
    pub lambda: LambdaPathConfig,
    pub criterion: Criterion,
    pub max_iter: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            kind: PenaltyKind::GrScad,
            a: 3.7,
            vn: Vec::new(),
            lambda: LambdaPathConfig::default(),
            criterion: Criterion::Gcv,
            max_iter: 1000,
        }
    }
}

/// Full configuration of the SFPLM / SFPLSIM fitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlmConfig {
    pub order: usize,
    pub nknot: Option<usize>,
    pub semimetric: SemimetricConfig,
    pub theta: ThetaGridConfig,
    pub tuning: TuningGridConfig,
    pub penalty: PenaltyConfig,
}

impl Default for PlmConfig {
    fn default() -> Self {
        Self {
            order: 3,
            nknot: None,
            semimetric: SemimetricConfig::default(),
            theta: ThetaGridConfig::default(),
            tuning: TuningGridConfig::default(),
            penalty: PenaltyConfig::default(),
        }
    }
}

/// Fitted semi-functional partial linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfplFit {
    pub kind: SmoothKind,
    pub method: Method,
    pub beta: Vec<f64>,
    pub lambda_opt: f64,
    /// Criterion value at the selected (tuning, lambda).
    pub ic: f64,
    /// Penalized least-squares objective at the optimum, recomputed from
    /// the transformed data and the returned coefficients.
    pub q_value: f64,
    pub vn_opt: usize,
    pub fitted_values: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Smoothed nonparametric component at the training curves.
    pub nonparam_fitted: Vec<f64>,
    /// Partial residuals Y - Z'beta, the responses of the final smoothing
    /// step and of every prediction.
    pub partial_residuals: Vec<f64>,
    pub diagnostics: Diagnostics,
    pub y: Vec<f64>,
    pub z: DMatrix<f64>,
    pub x: FunctionalSample,
    pub order: usize,
    pub nknot: usize,
    pub semimetric: SemimetricConfig,
    pub tuning: TuningGridConfig,
}

impl SfplFit {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn nonzero_indices(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j + 1)
            .collect()
    }
}

/// Fitted semi-functional partial linear single-index model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfplsimFit {
    pub base: SfplFit,
    pub theta: IndexCoefficients,
    pub nknot_theta: usize,
    pub t0: f64,
    pub train_scores: Vec<f64>,
}

/// Leave-one-out partialling-out of the functional covariate: row j of
/// the outputs is (Y_j - m^(-j)(X_j), Z_j - m^(-j)(X_j)) with the same
/// smoothing weights applied to the response and to every scalar column.
/// `None` when some left-out neighborhood is empty (candidate
/// infeasible).
pub fn partial_out(
    dist: &DistanceMatrix,
    z: &DMatrix<f64>,
    y: &[f64],
    method: Method,
) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let n = y.len();
    let p = z.ncols();
    let mut y_t = Vec::with_capacity(n);
    let mut z_t = DMatrix::zeros(n, p);
    for j in 0..n {
        let w = loo_weights(dist, j, method)?;
        let mut smooth_y = 0.0;
        for i in 0..n {
            if w[i] != 0.0 {
                smooth_y += w[i] * y[i];
            }
        }
        y_t.push(y[j] - smooth_y);
        for c in 0..p {
            let mut s = 0.0;
            for i in 0..n {
                if w[i] != 0.0 {
                    s += w[i] * z[(i, c)];
                }
            }
            z_t[(j, c)] = z[(j, c)] - s;
        }
    }
    Some((y_t, z_t))
}

/// Standard errors of the OLS coefficients of y on `design` (no
/// intercept); `None` when n <= p or the cross-product is numerically
/// singular.
fn ols_coefficient_sd(design: &DMatrix<f64>, y: &[f64]) -> Option<Vec<f64>> {
    let n = design.nrows();
    let p = design.ncols();
    if p == 0 || n <= p {
        return None;
    }
    let xtx = design.transpose() * design;
    let inv = xtx.try_inverse()?;
    let yv = nalgebra::DVector::from_column_slice(y);
    let beta = &inv * (design.transpose() * &yv);
    let resid = yv - design * &beta;
    let sigma2 = resid.norm_squared() / (n - p) as f64;
    let out: Vec<f64> = (0..p).map(|j| (sigma2 * inv[(j, j)]).sqrt()).collect();
    if out.iter().all(|v| v.is_finite() && *v > 0.0) {
        Some(out)
    } else {
        None
    }
}

/// Self-distances of the training curves under the configured semimetric.
pub fn semimetric_self_distances(
    x: &FunctionalSample,
    cfg: &PlmConfig,
) -> Result<DistanceMatrix> {
    semimetric_distances(x, x, cfg)
}

fn semimetric_distances(
    reference: &FunctionalSample,
    query: &FunctionalSample,
    cfg: &PlmConfig,
) -> Result<DistanceMatrix> {
    match cfg.semimetric.kind {
        SemimetricChoice::Deriv => {
            let p = reference.n_points();
            let nknot = cfg.nknot.unwrap_or(p.saturating_sub(cfg.order + 1) / 2);
            let basis = BSplineBasis::new(cfg.order, nknot, reference.domain())?;
            semimetric_deriv(reference, query, cfg.semimetric.q, &basis)
        }
        SemimetricChoice::Pca => semimetric_pca(reference, query, cfg.semimetric.q),
    }
}

fn resolve_vn(vn: &[usize], p: usize) -> Vec<usize> {
    if vn.is_empty() {
        vec![p]
    } else {
        vn.to_vec()
    }
}

/// Best (lambda index, criterion value) for one transformed linear model.
fn select_lambda(
    z_t: &DMatrix<f64>,
    y_t: &[f64],
    spec: &PenaltySpec,
    pen_cfg: &PenaltyConfig,
    trace: f64,
) -> Option<(crate::penalty::PelsSolution, f64)> {
    let path = lambda_path(z_t, y_t, spec, &pen_cfg.lambda).ok()?;
    let sols = pels_path(z_t, y_t, spec, &path, pen_cfg.max_iter).ok()?;
    let n = y_t.len();
    let scores: Vec<f64> = match pen_cfg.criterion {
        Criterion::KfoldCv { nfolds, seed } => {
            // fold CV on the transformed linear model; the nonparametric
            // trace is common to every lambda and drops out
            kfold_path_scores(z_t, y_t, spec, &path, nfolds, seed, pen_cfg.max_iter).ok()?
        }
        c => sols
            .iter()
            .map(|s| {
                let df = s.n_nonzero as f64 + trace;
                c.value(s.rss, n, df).unwrap_or(f64::INFINITY)
            })
            .collect(),
    };
    let (idx, ic) = argmin_cv(&scores)?;
    Some((sols[idx].clone(), ic))
}

struct CandidateOutcome {
    method: Method,
    solution: crate::penalty::PelsSolution,
    ic: f64,
    spec: PenaltySpec,
}

/// Evaluate one smoothing candidate: partial out, solve the path, pick
/// lambda. `None` when the candidate is infeasible.
fn evaluate_candidate(
    dist: &DistanceMatrix,
    z: &DMatrix<f64>,
    y: &[f64],
    method: Method,
    groups: &[usize],
    pen_cfg: &PenaltyConfig,
) -> Option<CandidateOutcome> {
    let (y_t, z_t) = partial_out(dist, z, y, method)?;
    let trace = smoother_trace(dist, method).ok()?;
    let scale = ols_coefficient_sd(&z_t, &y_t);
    let spec = PenaltySpec {
        kind: pen_cfg.kind,
        a: pen_cfg.a,
        group_sizes: groups.to_vec(),
        per_coefficient_scale: scale,
    };
    let (solution, ic) = select_lambda(&z_t, &y_t, &spec, pen_cfg, trace)?;
    Some(CandidateOutcome {
        method,
        solution,
        ic,
        spec,
    })
}

fn tuning_methods(
    dist: &DistanceMatrix,
    n: usize,
    kind: SmoothKind,
    tuning: &TuningGridConfig,
) -> Result<Vec<Method>> {
    Ok(match kind {
        SmoothKind::Kernel => bandwidth_grid(dist, tuning)?
            .into_iter()
            .map(|h| Method::Kernel { h })
            .collect(),
        SmoothKind::Knn => knn_grid(n, tuning)?
            .into_iter()
            .map(|k| Method::Knn { k })
            .collect(),
    })
}

/// Recompute the PeLS objective from the transformed data at the returned
/// coefficients.
fn q_objective(
    dist: &DistanceMatrix,
    z: &DMatrix<f64>,
    y: &[f64],
    outcome: &CandidateOutcome,
) -> f64 {
    let (y_t, z_t) = partial_out(dist, z, y, outcome.method).expect("winner was feasible");
    let n = y.len();
    let mut rss = 0.0;
    for i in 0..n {
        let fit: f64 = (0..z_t.ncols())
            .map(|j| z_t[(i, j)] * outcome.solution.beta[j])
            .sum();
        rss += (y_t[i] - fit).powi(2);
    }
    let pen = if outcome.solution.lambda > 0.0 {
        group_penalty(&outcome.solution.beta, &outcome.spec, outcome.solution.lambda)
            .unwrap_or(0.0)
    } else {
        0.0
    };
    0.5 * rss + n as f64 * pen
}

fn validate_plm_inputs(x: &FunctionalSample, z: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.n() != y.len() || z.nrows() != y.len() {
        return Err(FsrError::DimensionMismatch(format!(
            "{} curves, {} scalar rows, {} responses",
            x.n(),
            z.nrows(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) || z.iter().any(|v| !v.is_finite()) {
        return Err(FsrError::NonFinite("partial linear model inputs"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn assemble_sfpl(
    kind: SmoothKind,
    x: &FunctionalSample,
    z: &DMatrix<f64>,
    y: &[f64],
    cfg: &PlmConfig,
    dist: &DistanceMatrix,
    winner: CandidateOutcome,
    vn_opt: usize,
    q_value: f64,
) -> Result<SfplFit> {
    let n = y.len();
    let beta = winner.solution.beta.clone();
    // the linear part is evaluated exactly as the prediction path does,
    // so refitting the training data reproduces fitted values bit for bit
    let linear = linear_part(z, &beta);
    let partial_residuals: Vec<f64> = (0..n).map(|i| y[i] - linear[i]).collect();
    let (nonparam, trace) = fitted_leave_in(dist, &partial_residuals, winner.method)?;
    let fitted: Vec<f64> = (0..n).map(|i| nonparam[i] + linear[i]).collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let df = n as f64 - (winner.solution.n_nonzero as f64 + trace);
    if df <= 0.0 {
        return Err(FsrError::OutOfRange {
            arg: "df",
            msg: "effective dimension reached the sample size".into(),
        });
    }
    let diagnostics = diagnostics_from(&residuals, y, df)?;
    let p = x.n_points();
    Ok(SfplFit {
        kind,
        method: winner.method,
        beta,
        lambda_opt: winner.solution.lambda,
        ic: winner.ic,
        q_value,
        vn_opt,
        fitted_values: fitted,
        residuals,
        nonparam_fitted: nonparam,
        partial_residuals,
        diagnostics,
        y: y.to_vec(),
        z: z.clone(),
        x: x.clone(),
        order: cfg.order,
        nknot: cfg.nknot.unwrap_or(p.saturating_sub(cfg.order + 1) / 2),
        semimetric: cfg.semimetric,
        tuning: cfg.tuning.clone(),
    })
}

/// SFPLM estimation: Y = Z'beta + m(X) + e with penalized selection in the
/// linear component. With no scalar columns the model degenerates to the
/// functional nonparametric fit, tuned by LOOCV.
pub fn sfplm_fit(
    x: &FunctionalSample,
    z: &DMatrix<f64>,
    y: &[f64],
    kind: SmoothKind,
    cfg: &PlmConfig,
) -> Result<SfplFit> {
    validate_plm_inputs(x, z, y)?;
    let n = y.len();
    let dist = semimetric_self_distances(x, cfg)?;
    if z.ncols() == 0 {
        return fnm_degenerate_fit(x, z, y, kind, cfg, &dist);
    }
    let methods = tuning_methods(&dist, n, kind, &cfg.tuning)?;
    let mut best: Option<(CandidateOutcome, usize, f64)> = None; // outcome, vn, ic
    for &vn in &resolve_vn(&cfg.penalty.vn, z.ncols()) {
        let groups = contiguous_groups(z.ncols(), vn)?;
        let outcomes: Vec<Option<CandidateOutcome>> = methods
            .par_iter()
            .map(|&m| evaluate_candidate(&dist, z, y, m, &groups, &cfg.penalty))
            .collect();
        for outcome in outcomes.into_iter().flatten() {
            let replace = match &best {
                None => true,
                // ties: earlier candidate within a vn, then the larger
                // (finer) group count across vn values
                Some((b, bvn, bic)) => {
                    outcome.ic < *bic || (outcome.ic == *bic && vn > *bvn && b.method != outcome.method)
                }
            };
            if replace {
                let ic = outcome.ic;
                best = Some((outcome, vn, ic));
            }
        }
    }
    let (winner, vn_opt, _) = best.ok_or_else(|| {
        FsrError::AllCandidatesInfeasible("every smoothing candidate failed".into())
    })?;
    let q_value = q_objective(&dist, z, y, &winner);
    assemble_sfpl(kind, x, z, y, cfg, &dist, winner, vn_opt, q_value)
}

/// Degenerate SFPLM with an empty linear part: functional nonparametric
/// regression with LOOCV tuning selection.
fn fnm_degenerate_fit(
    x: &FunctionalSample,
    z: &DMatrix<f64>,
    y: &[f64],
    kind: SmoothKind,
    cfg: &PlmConfig,
    dist: &DistanceMatrix,
) -> Result<SfplFit> {
    let n = y.len();
    let methods = tuning_methods(dist, n, kind, &cfg.tuning)?;
    let scores: Vec<f64> = match kind {
        SmoothKind::Kernel => {
            let hs: Vec<f64> = methods
                .iter()
                .map(|m| match m {
                    Method::Kernel { h } => *h,
                    _ => unreachable!(),
                })
                .collect();
            loocv_kernel_grid(dist, y, &hs)?
        }
        SmoothKind::Knn => {
            let ks: Vec<usize> = methods
                .iter()
                .map(|m| match m {
                    Method::Knn { k } => *k,
                    _ => unreachable!(),
                })
                .collect();
            loocv_knn_grid(dist, y, &ks)?
        }
    };
    let (idx, cv) = argmin_cv(&scores).ok_or_else(|| {
        FsrError::AllCandidatesInfeasible("every smoothing candidate had infinite CV".into())
    })?;
    let method = methods[idx];
    let (nonparam, trace) = fitted_leave_in(dist, y, method)?;
    let residuals: Vec<f64> = y.iter().zip(&nonparam).map(|(a, b)| a - b).collect();
    let df = n as f64 - trace;
    let diagnostics = diagnostics_from(&residuals, y, df)?;
    let p = x.n_points();
    Ok(SfplFit {
        kind,
        method,
        beta: Vec::new(),
        lambda_opt: 0.0,
        ic: cv,
        q_value: 0.5 * residuals.iter().map(|r| r * r).sum::<f64>(),
        vn_opt: 0,
        fitted_values: nonparam.clone(),
        residuals,
        nonparam_fitted: nonparam,
        partial_residuals: y.to_vec(),
        diagnostics,
        y: y.to_vec(),
        z: z.clone(),
        x: x.clone(),
        order: cfg.order,
        nknot: cfg.nknot.unwrap_or(p.saturating_sub(cfg.order + 1) / 2),
        semimetric: cfg.semimetric,
        tuning: cfg.tuning.clone(),
    })
}

/// SFPLSIM estimation: Y = Z'beta + r(<theta, X>) + e. The direction grid
/// is enumerated as in the FSIM; each direction runs the SFPLM-style
/// candidate selection under its projection semimetric, and the direction
/// minimizing the penalized least-squares objective wins. With no scalar
/// columns the fit reduces to the plain FSIM grid fit.
pub fn sfplsim_fit(
    x: &FunctionalSample,
    z: &DMatrix<f64>,
    y: &[f64],
    kind: SmoothKind,
    cfg: &PlmConfig,
) -> Result<SfplsimFit> {
    validate_plm_inputs(x, z, y)?;
    let n = y.len();
    let space = ProjectionSpace::build(x, cfg.order, cfg.nknot, cfg.theta.nknot_theta, cfg.theta.t0)?;
    if z.ncols() == 0 {
        // degenerate case: same joint LOOCV minimization as the FSIM
        let fsim_cfg = FsimConfig {
            order: cfg.order,
            nknot: cfg.nknot,
            theta: cfg.theta.clone(),
            tuning: cfg.tuning.clone(),
        };
        let fit = fsim_fit_grid(x, y, kind, &fsim_cfg)?;
        let p = x.n_points();
        let base = SfplFit {
            kind,
            method: fit.method,
            beta: Vec::new(),
            lambda_opt: 0.0,
            ic: fit.cv_opt,
            q_value: 0.5 * fit.residuals.iter().map(|r| r * r).sum::<f64>(),
            vn_opt: 0,
            fitted_values: fit.fitted_values.clone(),
            residuals: fit.residuals.clone(),
            nonparam_fitted: fit.fitted_values.clone(),
            partial_residuals: y.to_vec(),
            diagnostics: fit.diagnostics.clone(),
            y: y.to_vec(),
            z: z.clone(),
            x: x.clone(),
            order: cfg.order,
            nknot: cfg.nknot.unwrap_or(p.saturating_sub(cfg.order + 1) / 2),
            semimetric: cfg.semimetric,
            tuning: cfg.tuning.clone(),
        };
        return Ok(SfplsimFit {
            base,
            theta: fit.theta,
            nknot_theta: fit.nknot_theta,
            t0: fit.t0,
            train_scores: fit.train_scores,
        });
    }

    let thetas = enumerate_theta_grid(&cfg.theta, &space)?;
    struct ThetaOutcome {
        theta_idx: usize,
        outcome: CandidateOutcome,
        q: f64,
    }
    let mut best: Option<(ThetaOutcome, usize)> = None; // outcome, vn
    for &vn in &resolve_vn(&cfg.penalty.vn, z.ncols()) {
        let groups = contiguous_groups(z.ncols(), vn)?;
        let per_theta: Vec<Option<(CandidateOutcome, f64)>> = thetas
            .par_iter()
            .map(|alpha| {
                let scores = space.scores(alpha);
                let dist = distances_from_scores(&scores, &scores);
                let methods = tuning_methods(&dist, n, kind, &cfg.tuning).ok()?;
                let mut local: Option<CandidateOutcome> = None;
                for &m in &methods {
                    if let Some(out) = evaluate_candidate(&dist, z, y, m, &groups, &cfg.penalty) {
                        let replace = match &local {
                            None => true,
                            Some(b) => out.ic < b.ic,
                        };
                        if replace {
                            local = Some(out);
                        }
                    }
                }
                let out = local?;
                let q = q_objective(&dist, z, y, &out);
                Some((out, q))
            })
            .collect();
        for (ti, entry) in per_theta.into_iter().enumerate() {
            if let Some((outcome, q)) = entry {
                let replace = match &best {
                    None => true,
                    Some((b, bvn)) => {
                        (q, ti) < (b.q, b.theta_idx) || (q == b.q && ti == b.theta_idx && vn > *bvn)
                    }
                };
                if replace {
                    best = Some((
                        ThetaOutcome {
                            theta_idx: ti,
                            outcome,
                            q,
                        },
                        vn,
                    ));
                }
            }
        }
    }
    let (theta_best, vn_opt) = best.ok_or_else(|| {
        FsrError::AllCandidatesInfeasible(
            "every (direction, tuning) candidate failed".into(),
        )
    })?;
    let alpha = thetas[theta_best.theta_idx].clone();
    let scores = space.scores(&alpha);
    let dist = distances_from_scores(&scores, &scores);
    let q_value = theta_best.q;
    let base = assemble_sfpl(
        kind,
        x,
        z,
        y,
        cfg,
        &dist,
        theta_best.outcome,
        vn_opt,
        q_value,
    )?;
    Ok(SfplsimFit {
        base,
        theta: IndexCoefficients {
            alpha,
            basis: space.theta_basis.clone(),
        },
        nknot_theta: cfg.theta.nknot_theta,
        t0: space.t0,
        train_scores: scores,
    })
}

/// Distance matrix from the training curves to query curves for a fitted
/// SFPLM.
fn sfpl_query_distances(fit: &SfplFit, new_x: &FunctionalSample) -> Result<DistanceMatrix> {
    let cfg = PlmConfig {
        order: fit.order,
        nknot: Some(fit.nknot),
        semimetric: fit.semimetric,
        ..PlmConfig::default()
    };
    semimetric_distances(&fit.x, new_x, &cfg)
}

fn reselect_by_loocv(
    self_dist: &DistanceMatrix,
    responses: &[f64],
    kind: SmoothKind,
    tuning: &TuningGridConfig,
) -> Result<Method> {
    let n = responses.len();
    let methods = tuning_methods(self_dist, n, kind, tuning)?;
    let scores = match kind {
        SmoothKind::Kernel => {
            let hs: Vec<f64> = methods
                .iter()
                .map(|m| match m {
                    Method::Kernel { h } => *h,
                    _ => unreachable!(),
                })
                .collect();
            loocv_kernel_grid(self_dist, responses, &hs)?
        }
        SmoothKind::Knn => {
            let ks: Vec<usize> = methods
                .iter()
                .map(|m| match m {
                    Method::Knn { k } => *k,
                    _ => unreachable!(),
                })
                .collect();
            loocv_knn_grid(self_dist, responses, &ks)?
        }
    };
    let (idx, _) = argmin_cv(&scores).ok_or_else(|| {
        FsrError::AllCandidatesInfeasible("tuning reselection found no feasible candidate".into())
    })?;
    Ok(methods[idx])
}

fn linear_part(z: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    (0..z.nrows())
        .map(|i| (0..z.ncols()).map(|j| z[(i, j)] * beta[j]).sum())
        .collect()
}

fn combine_report(
    dist: &DistanceMatrix,
    partial_residuals: &[f64],
    method: Method,
    linear: &[f64],
    y_test: Option<&[f64]>,
    option: u8,
) -> Result<PredictionReport> {
    let smooth_part = estimate_at_queries(dist, partial_residuals, method);
    let results: Vec<Result<f64>> = smooth_part
        .into_iter()
        .zip(linear)
        .map(|(r, l)| r.map(|v| v + l))
        .collect();
    PredictionReport::from_results(results, y_test, option)
}

/// Prediction for SFPLM fits. Option 1 reuses every estimate; option 2
/// keeps beta and reselects the tuning parameter by LOOCV on the training
/// partial residuals before smoothing.
pub fn sfplm_predict(
    fit: &SfplFit,
    new_x: &FunctionalSample,
    new_z: &DMatrix<f64>,
    y_test: Option<&[f64]>,
    option: u8,
) -> Result<PredictionReport> {
    if new_x.grid() != fit.x.grid() {
        return Err(FsrError::DimensionMismatch(
            "new curves must be discretized on the training grid".into(),
        ));
    }
    if new_z.ncols() != fit.beta.len() || new_z.nrows() != new_x.n() {
        return Err(FsrError::DimensionMismatch(format!(
            "new scalar covariates are {}x{}, expected {}x{}",
            new_z.nrows(),
            new_z.ncols(),
            new_x.n(),
            fit.beta.len()
        )));
    }
    let method = match option {
        1 => fit.method,
        2 => {
            let cfg = PlmConfig {
                order: fit.order,
                nknot: Some(fit.nknot),
                semimetric: fit.semimetric,
                ..PlmConfig::default()
            };
            let self_dist = semimetric_self_distances(&fit.x, &cfg)?;
            reselect_by_loocv(&self_dist, &fit.partial_residuals, fit.kind, &fit.tuning)?
        }
        other => {
            return Err(FsrError::InvalidArgument(format!(
                "prediction option {other} is not supported for this model (use 1 or 2)"
            )))
        }
    };
    let dist = sfpl_query_distances(fit, new_x)?;
    let linear = linear_part(new_z, &fit.beta);
    combine_report(&dist, &fit.partial_residuals, method, &linear, y_test, option)
}

/// Prediction for SFPLSIM fits (options 1 and 2, as for the SFPLM but
/// under the projection semimetric of the estimated direction).
pub fn sfplsim_predict(
    fit: &SfplsimFit,
    new_x: &FunctionalSample,
    new_z: &DMatrix<f64>,
    y_test: Option<&[f64]>,
    option: u8,
) -> Result<PredictionReport> {
    if new_x.grid() != fit.base.x.grid() {
        return Err(FsrError::DimensionMismatch(
            "new curves must be discretized on the training grid".into(),
        ));
    }
    if new_z.ncols() != fit.base.beta.len() || new_z.nrows() != new_x.n() {
        return Err(FsrError::DimensionMismatch(format!(
            "new scalar covariates are {}x{}, expected {}x{}",
            new_z.nrows(),
            new_z.ncols(),
            new_x.n(),
            fit.base.beta.len()
        )));
    }
    let space = ProjectionSpace::build(
        &fit.base.x,
        fit.base.order,
        Some(fit.base.nknot),
        fit.nknot_theta,
        Some(fit.t0),
    )?;
    let method = match option {
        1 => fit.base.method,
        2 => {
            let self_dist = distances_from_scores(&fit.train_scores, &fit.train_scores);
            reselect_by_loocv(
                &self_dist,
                &fit.base.partial_residuals,
                fit.base.kind,
                &fit.base.tuning,
            )?
        }
        other => {
            return Err(FsrError::InvalidArgument(format!(
                "prediction option {other} is not supported for this model (use 1 or 2)"
            )))
        }
    };
    let new_scores = space.scores_for(new_x, &fit.theta.alpha)?;
    let dist = distances_from_scores(&fit.train_scores, &new_scores);
    let linear = linear_part(new_z, &fit.base.beta);
    combine_report(
        &dist,
        &fit.base.partial_residuals,
        method,
        &linear,
        y_test,
        option,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xorshift64Star;
    use approx::assert_abs_diff_eq;

    fn low_rank_curves(
        n: usize,
        p: usize,
        rng: &mut Xorshift64Star,
    ) -> (FunctionalSample, Vec<f64>, Vec<f64>) {
        let grid: Vec<f64> = (0..p).map(|j| j as f64 / (p - 1) as f64).collect();
        let mut values = DMatrix::zeros(n, p);
        let mut us = Vec::with_capacity(n);
        let mut vs = Vec::with_capacity(n);
        for i in 0..n {
            let u = rng.normal();
            let v = rng.normal();
            us.push(u);
            vs.push(v);
            for (j, &t) in grid.iter().enumerate() {
                let w = 2.0 * std::f64::consts::PI * t;
                values[(i, j)] = u * w.cos() + v * w.sin();
            }
        }
        (FunctionalSample::new(values, grid).unwrap(), us, vs)
    }

    fn quick_cfg() -> PlmConfig {
        PlmConfig {
            nknot: Some(4),
            tuning: TuningGridConfig {
                min_knn: Some(2),
                max_knn: Some(10),
                step: Some(2),
                num_h: 6,
                ..TuningGridConfig::default()
            },
            penalty: PenaltyConfig {
                criterion: Criterion::Bic,
                lambda: LambdaPathConfig {
                    nlambda: 30,
                    ..LambdaPathConfig::default()
                },
                ..PenaltyConfig::default()
            },
            ..PlmConfig::default()
        }
    }

    #[test]
    fn constant_scalar_column_partials_to_zero() {
        let mut rng = Xorshift64Star::new(2);
        let (x, us, _) = low_rank_curves(20, 25, &mut rng);
        let cfg = quick_cfg();
        let dist = semimetric_self_distances(&x, &cfg).unwrap();
        let z = DMatrix::from_fn(20, 2, |i, c| if c == 0 { 7.5 } else { us[i] });
        let y: Vec<f64> = us.iter().map(|u| 2.0 * u).collect();
        let (_, z_t) = partial_out(&dist, &z, &y, Method::Knn { k: 3 }).unwrap();
        for i in 0..20 {
            assert_abs_diff_eq!(z_t[(i, 0)], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn nearest_neighbour_partialling_by_hand() {
        // k = 1 leave-one-out: Y_tilde_j = Y_j - Y_nn(j)
        let n = 5;
        let pts: [f64; 5] = [0.0, 1.0, 2.5, 4.5, 7.0];
        let dist = DistanceMatrix {
            values: DMatrix::from_fn(n, n, |i, j| (pts[i] - pts[j]).abs()),
            kind: crate::metrics::SemimetricKind::Projection,
        };
        let y = [3.0, -1.0, 2.0, 5.0, 0.5];
        let z = DMatrix::zeros(n, 0);
        let (y_t, _) = partial_out(&dist, &z, &y, Method::Knn { k: 1 }).unwrap();
        let nn = [1usize, 0, 1, 2, 3]; // nearest neighbour by the gaps above
        for j in 0..n {
            assert_abs_diff_eq!(y_t[j], y[j] - y[nn[j]], epsilon = 1e-12);
        }
    }

    #[test]
    fn planted_coefficients_recovered() {
        let mut rng = Xorshift64Star::new(31);
        let n = 120;
        let (x, us, vs) = low_rank_curves(n, 25, &mut rng);
        let p = 7;
        let z = DMatrix::from_fn(n, p, |_, _| rng.normal());
        let beta_true = [2.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let lin: f64 = (0..p).map(|j| z[(i, j)] * beta_true[j]).sum();
                lin + (us[i]).sin() + 0.5 * vs[i] + 0.1 * rng.normal()
            })
            .collect();
        let fit = sfplm_fit(&x, &z, &y, SmoothKind::Knn, &quick_cfg()).unwrap();
        assert_eq!(fit.nonzero_indices(), vec![1, 2]);
        assert!((fit.beta[0] - 2.0).abs() <= 0.25, "beta1 {}", fit.beta[0]);
        assert!((fit.beta[1] + 1.0).abs() <= 0.25, "beta2 {}", fit.beta[1]);
        // Q recomputes from the transformed data at the coefficients
        let dist = semimetric_self_distances(&x, &quick_cfg()).unwrap();
        let (y_t, z_t) = partial_out(&dist, &z, &y, fit.method).unwrap();
        let mut rss = 0.0;
        for i in 0..n {
            let f: f64 = (0..p).map(|j| z_t[(i, j)] * fit.beta[j]).sum();
            rss += (y_t[i] - f).powi(2);
        }
        assert!(fit.q_value >= 0.5 * rss - 1e-8);
    }

    #[test]
    fn empty_z_reduces_to_functional_nonparametric() {
        let mut rng = Xorshift64Star::new(77);
        let (x, us, _) = low_rank_curves(30, 25, &mut rng);
        let y: Vec<f64> = us.iter().map(|u| u.tanh() + 0.01).collect();
        let z = DMatrix::zeros(30, 0);
        let fit = sfplm_fit(&x, &z, &y, SmoothKind::Knn, &quick_cfg()).unwrap();
        assert!(fit.beta.is_empty());
        assert_eq!(fit.fitted_values, fit.nonparam_fitted);
    }

    #[test]
    fn sfplsim_with_empty_z_matches_fsim_grid() {
        let mut rng = Xorshift64Star::new(15);
        let (x, us, _) = low_rank_curves(25, 25, &mut rng);
        let y: Vec<f64> = us.iter().map(|u| u * u).collect();
        let mut cfg = quick_cfg();
        cfg.theta.nknot_theta = 1;
        let z = DMatrix::zeros(25, 0);
        let plm = sfplsim_fit(&x, &z, &y, SmoothKind::Knn, &cfg).unwrap();
        let fsim_cfg = FsimConfig {
            order: cfg.order,
            nknot: cfg.nknot,
            theta: cfg.theta.clone(),
            tuning: cfg.tuning.clone(),
        };
        let fsim = fsim_fit_grid(&x, &y, SmoothKind::Knn, &fsim_cfg).unwrap();
        assert_eq!(plm.theta.alpha, fsim.theta.alpha);
        assert_eq!(plm.base.method, fsim.method);
        assert_eq!(plm.base.fitted_values, fsim.fitted_values);
    }

    #[test]
    fn sfplsim_recovers_planted_direction_and_coefficient() {
        let mut rng = Xorshift64Star::new(99);
        let n = 80;
        let (x, _, _) = low_rank_curves(n, 25, &mut rng);
        let mut cfg = quick_cfg();
        cfg.theta.nknot_theta = 1;
        let space = ProjectionSpace::build(&x, cfg.order, cfg.nknot, 1, None).unwrap();
        let thetas = enumerate_theta_grid(&cfg.theta, &space).unwrap();
        let target = thetas[7].clone();
        let scores = space.scores(&target);
        let z = DMatrix::from_fn(n, 2, |_, _| rng.normal());
        let y: Vec<f64> = (0..n)
            .map(|i| z[(i, 0)] + (1.5 * scores[i]).sin())
            .collect();
        let fit = sfplsim_fit(&x, &z, &y, SmoothKind::Knn, &cfg).unwrap();
        let corr = {
            let s = &fit.train_scores;
            let n_f = n as f64;
            let ms = s.iter().sum::<f64>() / n_f;
            let mt = scores.iter().sum::<f64>() / n_f;
            let mut num = 0.0;
            let mut d1 = 0.0;
            let mut d2 = 0.0;
            for i in 0..n {
                num += (s[i] - ms) * (scores[i] - mt);
                d1 += (s[i] - ms).powi(2);
                d2 += (scores[i] - mt).powi(2);
            }
            num / (d1 * d2).sqrt()
        };
        assert!(corr.abs() > 0.95, "direction correlation {corr}");
        assert!((fit.base.beta[0] - 1.0).abs() < 0.2, "beta {:?}", fit.base.beta);
    }

    #[test]
    fn strong_penalty_zeroes_noise_covariates() {
        let mut rng = Xorshift64Star::new(123);
        let n = 60;
        let (x, us, _) = low_rank_curves(n, 25, &mut rng);
        let z = DMatrix::from_fn(n, 3, |_, _| rng.normal());
        let y: Vec<f64> = us.iter().map(|u| (2.0 * u).sin() * 3.0).collect();
        let mut cfg = quick_cfg();
        cfg.theta.nknot_theta = 1;
        // at the largest lambda of the path all coefficients must vanish
        cfg.penalty.lambda.nlambda = 1;
        let fit = sfplsim_fit(&x, &z, &y, SmoothKind::Knn, &cfg).unwrap();
        assert_eq!(fit.base.beta, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn predict_options_agree_on_training_data() {
        let mut rng = Xorshift64Star::new(51);
        let n = 40;
        let (x, us, vs) = low_rank_curves(n, 25, &mut rng);
        let z = DMatrix::from_fn(n, 2, |_, _| rng.normal());
        let y: Vec<f64> = (0..n)
            .map(|i| z[(i, 0)] * 1.5 + us[i] + 0.3 * vs[i] + 0.05 * rng.normal())
            .collect();
        let fit = sfplm_fit(&x, &z, &y, SmoothKind::Knn, &quick_cfg()).unwrap();
        let rep = sfplm_predict(&fit, &x, &z, Some(&y), 1).unwrap();
        assert_eq!(rep.predictions, fit.fitted_values);
        // option 2 re-runs successfully and reports MSEP
        let rep2 = sfplm_predict(&fit, &x, &z, Some(&y), 2).unwrap();
        assert!(rep2.msep.is_some());
        assert!(sfplm_predict(&fit, &x, &z, None, 3).is_err());
    }
}
