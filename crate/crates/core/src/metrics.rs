//! Semimetrics between curves: projection distance d_theta, B-spline
//! derivative distance, and functional-PCA score distance.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{project_curves, BSplineBasis, CurveCoefficients, FunctionalSample};
use crate::error::{FsrError, Result};

/// Which semimetric a distance matrix was computed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SemimetricKind {
    /// |<theta, x - chi>| for a fixed direction theta.
    Projection,
    /// L2 distance of q-th derivatives of the B-spline representations.
    Deriv { q: usize },
    /// Euclidean distance of the first q functional principal scores.
    Pca { q: usize },
}

/// Distances from n reference curves (rows) to m query curves (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub values: DMatrix<f64>,
    pub kind: SemimetricKind,
}

impl DistanceMatrix {
    pub fn n_ref(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_query(&self) -> usize {
        self.values.ncols()
    }

    /// Column of distances from every reference curve to query j.
    pub fn to_query(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }
}

/// Projection semimetric d_theta(x_i, chi_j) = |<theta, x_i - chi_j>| from
/// precomputed scores s = alpha' G c.
pub fn distances_from_scores(ref_scores: &[f64], query_scores: &[f64]) -> DistanceMatrix {
    let n = ref_scores.len();
    let m = query_scores.len();
    let values = DMatrix::from_fn(n, m, |i, j| (ref_scores[i] - query_scores[j]).abs());
    DistanceMatrix {
        values,
        kind: SemimetricKind::Projection,
    }
}

/// Projection semimetric between two coefficient sets sharing a direction
/// basis; `gram` is the cross-Gram between the direction basis and the
/// curve basis.
pub fn semimetric_projection(
    alpha: &[f64],
    reference: &CurveCoefficients,
    query: &CurveCoefficients,
    gram: &DMatrix<f64>,
) -> Result<DistanceMatrix> {
    if reference.basis != query.basis {
        return Err(FsrError::DimensionMismatch(
            "reference and query curves use different bases".into(),
        ));
    }
    let rs = crate::basis::inner_product(alpha, reference, gram)?;
    let qs = crate::basis::inner_product(alpha, query, gram)?;
    Ok(distances_from_scores(&rs, &qs))
}

/// Semimetric based on the B-spline representation of derivatives:
/// d(i, j) = sqrt(int (x_i^(q) - chi_j^(q))^2 dt). q = 0 gives the L2
/// distance of the smoothed curves.
pub fn semimetric_deriv(
    reference: &FunctionalSample,
    query: &FunctionalSample,
    q: usize,
    basis: &BSplineBasis,
) -> Result<DistanceMatrix> {
    if q >= basis.order() {
        return Err(FsrError::OutOfRange {
            arg: "q",
            msg: format!("derivative order {q} must be below the basis order {}", basis.order()),
        });
    }
    if reference.domain() != query.domain() {
        return Err(FsrError::DimensionMismatch(
            "reference and query samples live on different domains".into(),
        ));
    }
    let rc = project_curves(reference, basis)?;
    let qc = project_curves(query, basis)?;
    // Differentiate the expansions q times, then measure in the Gram
    // metric of the reduced-order basis.
    let (rd, deriv_basis) = differentiate(&rc, q)?;
    let (qd, _) = differentiate(&qc, q)?;
    let gram = deriv_basis.gram_matrix();
    let n = rd.nrows();
    let m = qd.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..m)
                .map(|j| {
                    let diff = rd.row(i) - qd.row(j);
                    let v = (&diff * &gram * diff.transpose())[(0, 0)];
                    v.max(0.0).sqrt()
                })
                .collect()
        })
        .collect();
    let values = DMatrix::from_fn(n, m, |i, j| rows[i][j]);
    Ok(DistanceMatrix {
        values,
        kind: SemimetricKind::Deriv { q },
    })
}

fn differentiate(cc: &CurveCoefficients, q: usize) -> Result<(DMatrix<f64>, BSplineBasis)> {
    let mut basis = cc.basis.clone();
    let mut coefs = cc.coefs.clone();
    for _ in 0..q {
        let d = basis.dimension();
        let mut out = DMatrix::zeros(coefs.nrows(), d - 1);
        for i in 0..coefs.nrows() {
            let row: Vec<f64> = coefs.row(i).iter().copied().collect();
            let dr = basis.derivative_coefficients(&row)?;
            for j in 0..d - 1 {
                out[(i, j)] = dr[j];
            }
        }
        basis = basis.derivative_basis()?;
        coefs = out;
    }
    Ok((coefs, basis))
}

/// Functional-PCA semimetric: eigendecomposition of the reference
/// sample's grid covariance (1/n scaling, grid-spacing weight), distances
/// between score vectors on the leading q eigenfunctions. Query curves are
/// centered by the reference mean and scored against the reference
/// eigenfunctions.
pub fn semimetric_pca(
    reference: &FunctionalSample,
    query: &FunctionalSample,
    q: usize,
) -> Result<DistanceMatrix> {
    let n = reference.n();
    let p = reference.n_points();
    if q < 1 || q > n.min(p) {
        return Err(FsrError::OutOfRange {
            arg: "q",
            msg: format!("need 1 <= q <= min(n, p) = {}", n.min(p)),
        });
    }
    if reference.grid() != query.grid() {
        return Err(FsrError::DimensionMismatch(
            "reference and query samples use different grids".into(),
        ));
    }
    let (a, b) = reference.domain();
    let dt = (b - a) / (p - 1) as f64;
    let mean: Vec<f64> = (0..p)
        .map(|j| reference.values().column(j).sum() / n as f64)
        .collect();
    let center = |s: &FunctionalSample| {
        DMatrix::from_fn(s.n(), p, |i, j| s.values()[(i, j)] - mean[j])
    };
    let xc = center(reference);
    let cov = xc.transpose() * &xc / n as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap()
            .then(i.cmp(&j))
    });
    // Scores s_iq = <x_i - mean, v_q> with grid weight dt; eigenvectors are
    // Euclidean-orthonormal, so the weighted score is (x_c e_q) sqrt(dt).
    let e = DMatrix::from_fn(p, q, |r, c| eig.eigenvectors[(r, order[c])]);
    let sqrt_dt = dt.sqrt();
    let ref_scores = (&xc * &e) * sqrt_dt;
    let qc = center(query);
    let query_scores = (&qc * &e) * sqrt_dt;
    let values = DMatrix::from_fn(reference.n(), query.n(), |i, j| {
        let d = ref_scores.row(i) - query_scores.row(j);
        d.iter().map(|x| x * x).sum::<f64>().sqrt()
    });
    Ok(DistanceMatrix {
        values,
        kind: SemimetricKind::Pca { q },
    })
}
