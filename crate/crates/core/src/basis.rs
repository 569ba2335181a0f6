//! B-spline bases for curves and functional directions: construction,
//! evaluation, quadrature-exact inner products, and least-squares
//! projection of discretized curves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FsrError, Result};
use crate::quad::gauss_legendre;

/// Open (clamped) B-spline basis of a given order on [a, b] with equally
/// spaced interior knots. `order` = l means piecewise polynomials of
/// degree l - 1; the dimension is `order + n_interior_knots`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    order: usize,
    n_interior_knots: usize,
    domain: (f64, f64),
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(order: usize, n_interior_knots: usize, domain: (f64, f64)) -> Result<Self> {
        let (a, b) = domain;
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(FsrError::DegenerateDomain(a, b));
        }
        if order < 1 {
            return Err(FsrError::OutOfRange {
                arg: "order",
                msg: "must be >= 1".into(),
            });
        }
        // Boundary knots repeated `order` times, interior knots strictly
        // inside (a, b) and equally spaced.
        let mut knots = Vec::with_capacity(2 * order + n_interior_knots);
        knots.extend(std::iter::repeat_n(a, order));
        let step = (b - a) / (n_interior_knots as f64 + 1.0);
        for i in 1..=n_interior_knots {
            knots.push(a + step * i as f64);
        }
        knots.extend(std::iter::repeat_n(b, order));
        Ok(Self {
            order,
            n_interior_knots,
            domain,
            knots,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_interior_knots(&self) -> usize {
        self.n_interior_knots
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn dimension(&self) -> usize {
        self.order + self.n_interior_knots
    }

    /// Breakpoints a = s_0 < s_1 < ... < s_{n_r+1} = b delimiting the
    /// polynomial spans.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut bp = Vec::with_capacity(self.n_interior_knots + 2);
        bp.push(self.domain.0);
        bp.extend_from_slice(&self.knots[self.order..self.order + self.n_interior_knots]);
        bp.push(self.domain.1);
        bp
    }

    /// Index k of the knot span [U_k, U_{k+1}) containing t; the right
    /// endpoint b is assigned to the last span so no basis vanishes there.
    fn span_index(&self, t: f64) -> usize {
        let lo = self.order - 1;
        let hi = self.order - 1 + self.n_interior_knots;
        if t >= self.knots[hi] {
            return hi;
        }
        let mut k = lo;
        while k < hi && t >= self.knots[k + 1] {
            k += 1;
        }
        k
    }

    /// All d basis values at t (Cox-de Boor recursion). Nonnegative and
    /// summing to one.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let (a, b) = self.domain;
        if !(t >= a && t <= b) {
            return Err(FsrError::OutsideDomain(t, a, b));
        }
        let k = self.span_index(t);
        let local = self.basis_funs(k, t);
        let mut out = vec![0.0; self.dimension()];
        let p = self.order - 1;
        for (r, &v) in local.iter().enumerate() {
            out[k - p + r] = v;
        }
        Ok(out)
    }

    /// The `order` nonzero basis values B_{k-p..k} at t in span k.
    fn basis_funs(&self, k: usize, t: f64) -> Vec<f64> {
        let p = self.order - 1;
        let u = &self.knots;
        let mut vals = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        vals[0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[k + 1 - j];
            right[j] = u[k + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        vals
    }

    /// Design matrix (len(ts) x d) of basis values at the given points.
    pub fn design_matrix(&self, ts: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dimension();
        let mut m = DMatrix::zeros(ts.len(), d);
        for (i, &t) in ts.iter().enumerate() {
            let row = self.eval(t)?;
            for j in 0..d {
                m[(i, j)] = row[j];
            }
        }
        Ok(m)
    }

    /// Gram matrix G[i][j] = int_a^b e_i e_j dt by composite Gauss-Legendre
    /// with order + 1 nodes per span (exact for products of the basis).
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        cross_gram_spans(self, self)
    }

    /// The basis spanned by first derivatives of this one: same interior
    /// knots, order reduced by one. Requires order >= 2.
    pub fn derivative_basis(&self) -> Result<BSplineBasis> {
        if self.order < 2 {
            return Err(FsrError::OutOfRange {
                arg: "order",
                msg: "derivative requires order >= 2".into(),
            });
        }
        BSplineBasis::new(self.order - 1, self.n_interior_knots, self.domain)
    }

    /// Coefficients of the derivative expansion in `derivative_basis`:
    /// c'_i = (l - 1) (c_{i+1} - c_i) / (U_{i+l} - U_{i+1}).
    pub fn derivative_coefficients(&self, coefs: &[f64]) -> Result<Vec<f64>> {
        if coefs.len() != self.dimension() {
            return Err(FsrError::DimensionMismatch(format!(
                "expected {} coefficients, got {}",
                self.dimension(),
                coefs.len()
            )));
        }
        if self.order < 2 {
            return Err(FsrError::OutOfRange {
                arg: "order",
                msg: "derivative requires order >= 2".into(),
            });
        }
        let p = (self.order - 1) as f64;
        let u = &self.knots;
        let mut out = Vec::with_capacity(coefs.len() - 1);
        for i in 0..coefs.len() - 1 {
            let denom = u[i + self.order] - u[i + 1];
            out.push(p * (coefs[i + 1] - coefs[i]) / denom);
        }
        Ok(out)
    }
}

/// Cross-Gram matrix J[i][j] = int e_i^A e_j^B dt between two bases on the
/// same domain, integrated span-exactly over the union of breakpoints.
pub fn cross_gram_matrix(a: &BSplineBasis, b: &BSplineBasis) -> Result<DMatrix<f64>> {
    if a.domain != b.domain {
        return Err(FsrError::DimensionMismatch(format!(
            "basis domains differ: [{}, {}] vs [{}, {}]",
            a.domain.0, a.domain.1, b.domain.0, b.domain.1
        )));
    }
    Ok(cross_gram_spans(a, b))
}

fn cross_gram_spans(a: &BSplineBasis, b: &BSplineBasis) -> DMatrix<f64> {
    let da = a.dimension();
    let db = b.dimension();
    let mut g = DMatrix::zeros(da, db);
    // Union of both breakpoint sets so every sub-span is a single
    // polynomial piece for both bases.
    let mut cuts = a.breakpoints();
    cuts.extend(b.breakpoints());
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let n_nodes = a.order.max(b.order) + 1;
    let (nodes, weights) = gauss_legendre(n_nodes);
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (&x, &wt) in nodes.iter().zip(&weights) {
            let t = mid + half * x;
            let va = a.eval(t).expect("t inside domain");
            let vb = b.eval(t).expect("t inside domain");
            let scale = wt * half;
            for i in 0..da {
                if va[i] == 0.0 {
                    continue;
                }
                for j in 0..db {
                    g[(i, j)] += scale * va[i] * vb[j];
                }
            }
        }
    }
    g
}

/// n discretized curves on a common strictly increasing grid over [a, b].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    values: DMatrix<f64>,
    grid: Vec<f64>,
}

impl FunctionalSample {
    pub fn new(values: DMatrix<f64>, grid: Vec<f64>) -> Result<Self> {
        if values.nrows() < 1 {
            return Err(FsrError::InvalidArgument("need at least one curve".into()));
        }
        if grid.len() < 2 || values.ncols() != grid.len() {
            return Err(FsrError::DimensionMismatch(format!(
                "{} grid points for {} value columns",
                grid.len(),
                values.ncols()
            )));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(FsrError::InvalidArgument(
                "grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { values, grid })
    }

    /// Curves on an equispaced grid spanning `domain`.
    pub fn on_equispaced_grid(values: DMatrix<f64>, domain: (f64, f64)) -> Result<Self> {
        let p = values.ncols();
        if p < 2 {
            return Err(FsrError::InvalidArgument(
                "need at least two grid points".into(),
            ));
        }
        let (a, b) = domain;
        if !(a < b) {
            return Err(FsrError::DegenerateDomain(a, b));
        }
        let grid = (0..p)
            .map(|j| a + (b - a) * j as f64 / (p - 1) as f64)
            .collect();
        Self::new(values, grid)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Rows selected by `idx` (0-based), preserving order.
    pub fn subset(&self, idx: &[usize]) -> FunctionalSample {
        let m = DMatrix::from_fn(idx.len(), self.n_points(), |i, j| self.values[(idx[i], j)]);
        FunctionalSample {
            values: m,
            grid: self.grid.clone(),
        }
    }
}

/// Basis coefficients of a sample of curves (one row per curve).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCoefficients {
    pub coefs: DMatrix<f64>,
    pub basis: BSplineBasis,
}

/// Least-squares fit of every curve against the basis design matrix on the
/// sample grid (QR-based).
pub fn project_curves(sample: &FunctionalSample, basis: &BSplineBasis) -> Result<CurveCoefficients> {
    let d = basis.dimension();
    let p = sample.n_points();
    if d > p {
        return Err(FsrError::RankDeficient(format!(
            "basis dimension {d} exceeds {p} grid points"
        )));
    }
    if sample.domain() != basis.domain() {
        return Err(FsrError::DimensionMismatch(format!(
            "sample domain [{}, {}] differs from basis domain [{}, {}]",
            sample.domain().0,
            sample.domain().1,
            basis.domain().0,
            basis.domain().1
        )));
    }
    let design = basis.design_matrix(sample.grid())?;
    let qr = design.clone().qr();
    let r = qr.r();
    let rmax = (0..d).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..d).any(|j| r[(j, j)].abs() <= 1e-12 * rmax.max(1.0)) {
        return Err(FsrError::RankDeficient(
            "collinear basis columns on the sample grid".into(),
        ));
    }
    let q = qr.q();
    // coefs row i solves design * c = values_row_i.
    let qt_y = q.transpose() * sample.values().transpose(); // d x n
    let mut coefs = DMatrix::zeros(sample.n(), d);
    for i in 0..sample.n() {
        let rhs = qt_y.column(i).into_owned();
        let sol = r
            .solve_upper_triangular(&rhs)
            .ok_or_else(|| FsrError::RankDeficient("singular R factor".into()))?;
        for j in 0..d {
            coefs[(i, j)] = sol[j];
        }
    }
    Ok(CurveCoefficients {
        coefs,
        basis: basis.clone(),
    })
}

/// L2 inner products <theta, x_i> = alpha' G c_i for every curve, where G
/// is the (cross-)Gram between the direction basis and the curve basis.
pub fn inner_product(
    alpha: &[f64],
    curves: &CurveCoefficients,
    gram: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    if gram.nrows() != alpha.len() || gram.ncols() != curves.coefs.ncols() {
        return Err(FsrError::DimensionMismatch(format!(
            "gram is {}x{}, expected {}x{}",
            gram.nrows(),
            gram.ncols(),
            alpha.len(),
            curves.coefs.ncols()
        )));
    }
    let a = DVector::from_column_slice(alpha);
    let w = gram.transpose() * a; // d_curve
    Ok((curves.coefs.clone() * w).iter().copied().collect())
}
