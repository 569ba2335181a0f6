//! Kernel and kNN functional regression smoothers, tuning grids, and
//! leave-one-out cross-validation over distance matrices.

use serde::{Deserialize, Serialize};

use crate::error::{FsrError, Result};
use crate::metrics::DistanceMatrix;

/// Relative inflation of the kNN bandwidth above the k-th order statistic,
/// so the k nearest points (and ties) receive strictly positive quad-kernel
/// weight.
pub const KNN_BANDWIDTH_EPS: f64 = 1e-9;

/// Smoothing method with its tuning parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    Kernel { h: f64 },
    Knn { k: usize },
}

/// Which estimator family a fitter should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmoothKind {
    Kernel,
    Knn,
}

/// Asymmetric Epanechnikov ("quad") kernel on [0, 1], normalized to
/// integrate to one: K(u) = 1.5 (1 - u^2) on [0, 1], zero elsewhere.
pub fn kernel_quad(u: f64) -> f64 {
    if (0.0..=1.0).contains(&u) {
        1.5 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Nadaraya-Watson estimate sum_i Y_i K(d_i / h) / sum_i K(d_i / h).
pub fn nw_estimate(distances: &[f64], responses: &[f64], h: f64) -> Result<f64> {
    if h <= 0.0 {
        return Err(FsrError::OutOfRange {
            arg: "h",
            msg: "bandwidth must be positive".into(),
        });
    }
    if distances.len() != responses.len() {
        return Err(FsrError::DimensionMismatch(format!(
            "{} distances vs {} responses",
            distances.len(),
            responses.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&d, &y) in distances.iter().zip(responses) {
        let w = kernel_quad(d / h);
        num += w * y;
        den += w;
    }
    if den <= 0.0 {
        return Err(FsrError::EmptyNeighborhood);
    }
    Ok(num / den)
}

/// k-th smallest distance: the minimal H with #{i : d_i <= H} >= k.
pub fn knn_bandwidth(distances: &[f64], k: usize) -> Result<f64> {
    let n = distances.len();
    if k < 1 || k > n {
        return Err(FsrError::OutOfRange {
            arg: "k",
            msg: format!("need 1 <= k <= {n}, got {k}"),
        });
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sorted[k - 1])
}

/// kNN estimate: Nadaraya-Watson with local bandwidth (1 + eps) times the
/// k-th order statistic, so points at the k-th distance keep positive
/// weight.
pub fn knn_estimate(distances: &[f64], responses: &[f64], k: usize) -> Result<f64> {
    let n = distances.len();
    if k >= n {
        return Err(FsrError::OutOfRange {
            arg: "k",
            msg: format!("need k < n = {n}, got {k}"),
        });
    }
    let hk = knn_bandwidth(distances, k)?;
    if hk == 0.0 {
        // All k nearest coincide with the query; average them directly
        // (the limit of the kernel form as H -> 0+).
        let mut num = 0.0;
        let mut cnt = 0.0;
        for (&d, &y) in distances.iter().zip(responses) {
            if d == 0.0 {
                num += y;
                cnt += 1.0;
            }
        }
        return Ok(num / cnt);
    }
    nw_estimate(distances, responses, hk * (1.0 + KNN_BANDWIDTH_EPS))
}

fn weight_vector(distances: &[f64], method: Method) -> Result<Vec<f64>> {
    match method {
        Method::Kernel { h } => {
            let mut w: Vec<f64> = distances.iter().map(|&d| kernel_quad(d / h)).collect();
            let s: f64 = w.iter().sum();
            if s <= 0.0 {
                return Err(FsrError::EmptyNeighborhood);
            }
            for x in &mut w {
                *x /= s;
            }
            Ok(w)
        }
        Method::Knn { k } => {
            let hk = knn_bandwidth(distances, k)?;
            if hk == 0.0 {
                let cnt = distances.iter().filter(|&&d| d == 0.0).count() as f64;
                return Ok(distances
                    .iter()
                    .map(|&d| if d == 0.0 { 1.0 / cnt } else { 0.0 })
                    .collect());
            }
            let h = hk * (1.0 + KNN_BANDWIDTH_EPS);
            let mut w: Vec<f64> = distances.iter().map(|&d| kernel_quad(d / h)).collect();
            let s: f64 = w.iter().sum();
            if s <= 0.0 {
                return Err(FsrError::EmptyNeighborhood);
            }
            for x in &mut w {
                *x /= s;
            }
            Ok(w)
        }
    }
}

/// Smoothed values at every query point of a reference-to-query distance
/// matrix (rows: training, columns: queries). Per-query failures surface
/// as `Err` entries.
pub fn estimate_at_queries(
    dist: &DistanceMatrix,
    responses: &[f64],
    method: Method,
) -> Vec<Result<f64>> {
    (0..dist.n_query())
        .map(|j| {
            let d = dist.to_query(j);
            match method {
                Method::Kernel { h } => nw_estimate(&d, responses, h),
                Method::Knn { k } => knn_estimate(&d, responses, k),
            }
        })
        .collect()
}

/// Leave-in fitted values over a square self-distance matrix, together
/// with the trace of the smoother matrix (sum of own-observation weights).
/// Fitted values are computed through the same estimator functions the
/// prediction path uses, so refitting training curves reproduces them
/// exactly.
pub fn fitted_leave_in(
    dist: &DistanceMatrix,
    responses: &[f64],
    method: Method,
) -> Result<(Vec<f64>, f64)> {
    let n = dist.n_ref();
    if n != dist.n_query() || n != responses.len() {
        return Err(FsrError::DimensionMismatch(
            "self-distance matrix must be square and match responses".into(),
        ));
    }
    let mut fitted = Vec::with_capacity(n);
    let mut trace = 0.0;
    for j in 0..n {
        let d = dist.to_query(j);
        let value = match method {
            Method::Kernel { h } => nw_estimate(&d, responses, h)?,
            Method::Knn { k } => knn_estimate(&d, responses, k)?,
        };
        let w = weight_vector(&d, method)?;
        trace += w[j];
        fitted.push(value);
    }
    Ok((fitted, trace))
}

/// Trace of the leave-in smoother matrix: sum over observations of the
/// weight each one places on itself.
pub fn smoother_trace(dist: &DistanceMatrix, method: Method) -> Result<f64> {
    let n = dist.n_ref();
    if n != dist.n_query() {
        return Err(FsrError::DimensionMismatch(
            "self-distance matrix must be square".into(),
        ));
    }
    let mut trace = 0.0;
    for j in 0..n {
        let d = dist.to_query(j);
        let w = weight_vector(&d, method)?;
        trace += w[j];
    }
    Ok(trace)
}

/// Leave-one-out weight row for observation j (length n, entry j zero).
/// `None` when the left-out neighborhood is empty.
pub fn loo_weights(dist: &DistanceMatrix, j: usize, method: Method) -> Option<Vec<f64>> {
    let n = dist.n_ref();
    let mut d = Vec::with_capacity(n - 1);
    let mut idx = Vec::with_capacity(n - 1);
    for i in 0..n {
        if i != j {
            d.push(dist.values[(i, j)]);
            idx.push(i);
        }
    }
    let w = weight_vector(&d, method).ok()?;
    let mut full = vec![0.0; n];
    for (pos, &i) in idx.iter().enumerate() {
        full[i] = w[pos];
    }
    Some(full)
}

fn check_square(dist: &DistanceMatrix, responses: &[f64]) -> Result<usize> {
    let n = dist.n_ref();
    if n < 2 {
        return Err(FsrError::InvalidArgument(
            "leave-one-out needs at least two observations".into(),
        ));
    }
    if n != dist.n_query() || n != responses.len() {
        return Err(FsrError::DimensionMismatch(
            "self-distance matrix must be square and match responses".into(),
        ));
    }
    Ok(n)
}

/// Leave-one-out CV scores for a grid of bandwidths: entry g is
/// n^-1 sum_j (Y_j - m_hg^(-j)(X_j))^2, +infinity when some left-out
/// neighborhood is empty at h_g.
pub fn loocv_kernel_grid(
    dist: &DistanceMatrix,
    responses: &[f64],
    hs: &[f64],
) -> Result<Vec<f64>> {
    let n = check_square(dist, responses)?;
    if hs.iter().any(|&h| h <= 0.0) {
        return Err(FsrError::OutOfRange {
            arg: "h",
            msg: "bandwidths must be positive".into(),
        });
    }
    let mut scores = vec![0.0; hs.len()];
    let mut dead = vec![false; hs.len()];
    for j in 0..n {
        let col = dist.to_query(j);
        for (g, &h) in hs.iter().enumerate() {
            if dead[g] {
                continue;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                if i == j {
                    continue;
                }
                let w = kernel_quad(col[i] / h);
                num += w * responses[i];
                den += w;
            }
            if den <= 0.0 {
                dead[g] = true;
            } else {
                scores[g] += (responses[j] - num / den).powi(2);
            }
        }
    }
    Ok(scores
        .iter()
        .zip(&dead)
        .map(|(&s, &d)| if d { f64::INFINITY } else { s / n as f64 })
        .collect())
}

/// Leave-one-out CV scores for a grid of neighbour counts. Entries with
/// k > n - 2 are infeasible for leave-one-out and score +infinity. Sorted
/// prefix evaluation shares one sort per observation across the grid.
pub fn loocv_knn_grid(dist: &DistanceMatrix, responses: &[f64], ks: &[usize]) -> Result<Vec<f64>> {
    let n = check_square(dist, responses)?;
    if ks.iter().any(|&k| k < 1) {
        return Err(FsrError::OutOfRange {
            arg: "k",
            msg: "neighbour counts must be >= 1".into(),
        });
    }
    let mut scores = vec![0.0; ks.len()];
    let feasible: Vec<bool> = ks.iter().map(|&k| k <= n - 2).collect();
    for j in 0..n {
        let col = dist.to_query(j);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .filter(|&i| i != j)
            .map(|i| (col[i], responses[i]))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for (g, &k) in ks.iter().enumerate() {
            if !feasible[g] {
                continue;
            }
            let hk = pairs[k - 1].0;
            let pred = if hk == 0.0 {
                let mut num = 0.0;
                let mut cnt = 0.0;
                for &(d, y) in pairs.iter().take_while(|&&(d, _)| d == 0.0) {
                    debug_assert_eq!(d, 0.0);
                    num += y;
                    cnt += 1.0;
                }
                num / cnt
            } else {
                let h = hk * (1.0 + KNN_BANDWIDTH_EPS);
                let mut num = 0.0;
                let mut den = 0.0;
                for &(d, y) in pairs.iter() {
                    if d >= h {
                        break;
                    }
                    let w = kernel_quad(d / h);
                    num += w * y;
                    den += w;
                }
                num / den
            };
            scores[g] += (responses[j] - pred).powi(2);
        }
    }
    Ok(scores
        .iter()
        .zip(&feasible)
        .map(|(&s, &f)| if f { s / n as f64 } else { f64::INFINITY })
        .collect())
}

/// Leave-one-out CV score n^-1 sum_j (Y_j - m^(-j)(X_j))^2 over a square
/// self-distance matrix. Candidates for which some left-out neighborhood
/// is empty score +infinity (excluded from grid minimization).
pub fn loocv_score(dist: &DistanceMatrix, responses: &[f64], method: Method) -> Result<f64> {
    let n = check_square(dist, responses)?;
    match method {
        Method::Kernel { h } => Ok(loocv_kernel_grid(dist, responses, &[h])?[0]),
        Method::Knn { k } => {
            if k < 1 || k > n - 2 {
                return Err(FsrError::OutOfRange {
                    arg: "k",
                    msg: format!("need 1 <= k <= n - 2 = {} for leave-one-out", n - 2),
                });
            }
            Ok(loocv_knn_grid(dist, responses, &[k])?[0])
        }
    }
}

/// LOOCV prediction for every observation, or `None` on empty
/// neighborhoods (used by fitters that keep the per-point predictions).
pub fn loocv_predictions(
    dist: &DistanceMatrix,
    responses: &[f64],
    method: Method,
) -> Option<Vec<f64>> {
    let n = dist.n_ref();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let w = loo_weights(dist, j, method)?;
        out.push(w.iter().zip(responses).map(|(wi, yi)| wi * yi).sum());
    }
    Some(out)
}

/// Tuning-grid configuration mirroring the package argument tables:
/// bandwidth endpoints as quantile orders of the inter-curve distances, or
/// an explicit sequence; kNN endpoints and step, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGridConfig {
    pub min_q_h: f64,
    pub max_q_h: f64,
    pub num_h: usize,
    pub h_seq: Option<Vec<f64>>,
    pub min_knn: Option<usize>,
    pub max_knn: Option<usize>,
    pub step: Option<usize>,
    pub knearest: Option<Vec<usize>>,
}

impl Default for TuningGridConfig {
    fn default() -> Self {
        Self {
            min_q_h: 0.05,
            max_q_h: 0.5,
            num_h: 10,
            h_seq: None,
            min_knn: None,
            max_knn: None,
            step: None,
            knearest: None,
        }
    }
}

/// Type-7 quantile (linear interpolation of the sorted sample).
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = lo.min(n - 2) + 1;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Bandwidth candidates: `num_h` equally spaced values between the
/// `min_q_h` and `max_q_h` quantiles of the off-diagonal distances, or the
/// user-supplied sequence verbatim (which overrides the quantile
/// arguments).
pub fn bandwidth_grid(self_distances: &DistanceMatrix, cfg: &TuningGridConfig) -> Result<Vec<f64>> {
    if let Some(seq) = &cfg.h_seq {
        if seq.is_empty() || seq.iter().any(|&h| h <= 0.0) {
            return Err(FsrError::InvalidArgument(
                "h.seq must be nonempty and positive".into(),
            ));
        }
        return Ok(seq.clone());
    }
    if !(0.0 < cfg.min_q_h && cfg.min_q_h < cfg.max_q_h && cfg.max_q_h < 1.0)
        && !(cfg.min_q_h < cfg.max_q_h && cfg.min_q_h >= 0.0 && cfg.max_q_h <= 1.0)
    {
        return Err(FsrError::InvalidArgument(
            "need 0 <= min.q.h < max.q.h <= 1".into(),
        ));
    }
    let n = self_distances.n_ref();
    let mut offdiag = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                offdiag.push(self_distances.values[(i, j)]);
            }
        }
    }
    if offdiag.iter().all(|&d| d == 0.0) {
        return Err(FsrError::InvalidArgument(
            "all pairwise distances are zero".into(),
        ));
    }
    offdiag.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let qa = quantile_type7(&offdiag, cfg.min_q_h);
    let qb = quantile_type7(&offdiag, cfg.max_q_h);
    if cfg.num_h == 0 {
        return Err(FsrError::InvalidArgument("num.h must be positive".into()));
    }
    let grid = if cfg.num_h == 1 {
        vec![qb]
    } else {
        (0..cfg.num_h)
            .map(|i| qa + (qb - qa) * i as f64 / (cfg.num_h - 1) as f64)
            .collect()
    };
    if grid.iter().any(|&h| h <= 0.0) {
        return Err(FsrError::InvalidArgument(
            "bandwidth grid contains non-positive values; raise min.q.h".into(),
        ));
    }
    Ok(grid)
}

/// Neighbour-count candidates min, min+step, ... <= max. Defaults: min 2,
/// max floor(n/5), step ceil(n/100); an explicit `knearest` overrides.
pub fn knn_grid(n: usize, cfg: &TuningGridConfig) -> Result<Vec<usize>> {
    if let Some(seq) = &cfg.knearest {
        if seq.is_empty() {
            return Err(FsrError::InvalidArgument("knearest is empty".into()));
        }
        return Ok(seq.clone());
    }
    if n < 3 {
        return Err(FsrError::InvalidArgument(
            "need n >= 3 for a kNN grid".into(),
        ));
    }
    let min = cfg.min_knn.unwrap_or(2);
    let max = cfg.max_knn.unwrap_or(n / 5);
    let step = cfg.step.unwrap_or(n.div_ceil(100)).max(1);
    if min < 1 {
        return Err(FsrError::OutOfRange {
            arg: "min.knn",
            msg: "must be >= 1".into(),
        });
    }
    let grid: Vec<usize> = (min..=max).step_by(step).collect();
    if grid.is_empty() {
        return Err(FsrError::InvalidArgument(format!(
            "empty kNN grid: min.knn = {min}, max.knn = {max}"
        )));
    }
    Ok(grid)
}

/// Grid-minimizing candidate: index and CV value, ties toward the earlier
/// (smaller) candidate. `None` when every candidate is infeasible.
pub fn argmin_cv(scores: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        match best {
            Some((_, b)) if s >= b => {}
            _ => best = Some((i, s)),
        }
    }
    best
}
