//! Dense matrix types, the SVD contract and projections.
//!
//! Conventions shared by every other module:
//! - data matrices are `P × N`, variables in rows and samples in columns;
//! - singular values are nonincreasing;
//! - in each column of `V` the entry of largest magnitude is nonnegative
//!   (lowest index wins ties) and the matching `U` column follows.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative tolerance used to decide whether a singular value is zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Tolerance used when checking caller-supplied orthonormal bases.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Variables × samples matrix with identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    variable_ids: Vec<String>,
    sample_ids: Vec<String>,
}

impl DataMatrix {
    pub fn new(
        values: DMatrix<f64>,
        variable_ids: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        let (p, n) = values.shape();
        if p == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "data matrix must be non-empty, got {p}×{n}"
            )));
        }
        if variable_ids.len() != p || sample_ids.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{p}×{n} matrix with {} variable ids and {} sample ids",
                variable_ids.len(),
                sample_ids.len()
            )));
        }
        ensure_finite(&values)?;
        ensure_distinct(&variable_ids, "variable")?;
        ensure_distinct(&sample_ids, "sample")?;
        Ok(Self {
            values,
            variable_ids,
            sample_ids,
        })
    }

    /// Wraps a matrix with generated identifiers `var1..` and `s1..`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let (p, n) = values.shape();
        let vars = (1..=p).map(|i| format!("var{i}")).collect();
        let samples = (1..=n).map(|j| format!("s{j}")).collect();
        Self::new(values, vars, samples)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn variable_ids(&self) -> &[String] {
        &self.variable_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn n_variables(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    /// Subtracts each row's mean.
    pub fn center_rows(&mut self) {
        let n = self.values.ncols() as f64;
        for mut row in self.values.row_iter_mut() {
            let mean = row.sum() / n;
            row.add_scalar_mut(-mean);
        }
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

fn ensure_distinct(ids: &[String], what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate {what} id {id:?}")));
        }
    }
    Ok(())
}

pub(crate) fn ensure_finite(x: &DMatrix<f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Thin singular triplets `X ≈ U diag(sigma) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U diag(sigma) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (mut col, s) in us.column_iter_mut().zip(self.sigma.iter()) {
            col *= *s;
        }
        us * self.v.transpose()
    }

    /// Flips column pairs so the largest-magnitude entry of each `V` column
    /// is nonnegative.
    pub fn apply_sign_convention(&mut self) {
        for j in 0..self.v.ncols() {
            if needs_flip(self.v.column(j).as_slice()) {
                self.v.column_mut(j).neg_mut();
                self.u.column_mut(j).neg_mut();
            }
        }
    }

    pub fn truncate(mut self, d: usize) -> Self {
        self.u = self.u.columns(0, d).into_owned();
        self.v = self.v.columns(0, d).into_owned();
        self.sigma = self.sigma.rows(0, d).into_owned();
        self
    }

    /// Sorts triplets by nonincreasing singular value (stable).
    fn sort_descending(&mut self) {
        let d = self.sigma.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| self.sigma[b].total_cmp(&self.sigma[a]));
        if order.iter().enumerate().all(|(i, &j)| i == j) {
            return;
        }
        self.u = DMatrix::from_fn(self.u.nrows(), d, |i, j| self.u[(i, order[j])]);
        self.v = DMatrix::from_fn(self.v.nrows(), d, |i, j| self.v[(i, order[j])]);
        self.sigma = DVector::from_fn(d, |j, _| self.sigma[order[j]]);
    }
}

fn needs_flip(col: &[f64]) -> bool {
    let mut best = 0usize;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    col.get(best).is_some_and(|x| *x < 0.0)
}

/// All `min(P, N)` singular triplets, sorted and sign-normalized.
pub fn svd_full(x: &DMatrix<f64>) -> Result<SvdFactors> {
    ensure_finite(x)?;
    let (p, n) = x.shape();
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let mut f = if p < n {
        let t = raw_svd(&x.transpose())?;
        SvdFactors {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        }
    } else {
        raw_svd(x)?
    };
    f.sort_descending();
    f.apply_sign_convention();
    Ok(f)
}

/// Thin SVD of a tall-or-square matrix.
///
/// The kernel is faer's: nalgebra's bidiagonal SVD returns inaccurate
/// factors for some rank-deficient and graded inputs (XV − UΣ up to 1e-1·‖X‖).
/// The result is still checked against XV = UΣ before it is trusted.
fn raw_svd(x: &DMatrix<f64>) -> Result<SvdFactors> {
    let (p, n) = x.shape();
    let m = faer::Mat::<f64>::from_fn(p, n, |i, j| x[(i, j)]);
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let (u, v, s) = (svd.U(), svd.V(), svd.S().column_vector());
    let f = SvdFactors {
        u: DMatrix::from_fn(p, n, |i, j| u[(i, j)]),
        sigma: DVector::from_fn(n, |i, _| s[i]),
        v: DMatrix::from_fn(n, n, |i, j| v[(i, j)]),
    };
    let resid = (x * &f.v - &f.u * DMatrix::from_diagonal(&f.sigma)).norm();
    if resid > SVD_CHECK_TOL * x.norm() {
        return Err(Error::Numerical(format!(
            "SVD failed its XV = UΣ check (residual {resid:e})"
        )));
    }
    Ok(f)
}

const SVD_CHECK_TOL: f64 = 1e-11;

/// The `d` leading singular triplets of `x` (best rank-`d` approximation).
pub fn svd_truncated(x: &DMatrix<f64>, d: usize) -> Result<SvdFactors> {
    let max_d = x.nrows().min(x.ncols());
    if d == 0 || d > max_d {
        return Err(Error::InvalidArgument(format!(
            "rank {d} outside 1..={max_d}"
        )));
    }
    Ok(svd_full(x)?.truncate(d))
}

/// Singular values in nonincreasing order.
pub fn singular_values(x: &DMatrix<f64>) -> Result<DVector<f64>> {
    ensure_finite(x)?;
    if x.is_empty() {
        return Ok(DVector::zeros(0));
    }
    // via the checked factorization; the values-only path has the same flaw
    let mut s = svd_full(x)?.sigma;
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Eigenvalues of the smaller Gram matrix (`XᵀX` or `XXᵀ`), i.e. the squared
/// singular values, nonincreasing and clamped at zero.
///
/// Cheaper than an SVD for tall matrices; accurate for energy ratios but not
/// for singular values near machine precision.
pub fn squared_singular_values(x: &DMatrix<f64>) -> Vec<f64> {
    let gram = if x.nrows() >= x.ncols() {
        x.transpose() * x
    } else {
        x * x.transpose()
    };
    let mut ev: Vec<f64> = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|&e| e.max(0.0))
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Largest singular value, via the Gram matrix.
pub fn spectral_norm(x: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    squared_singular_values(x).first().copied().unwrap_or(0.0).sqrt()
}

/// Number of singular values above `rel_tol` times the largest one.
pub fn numerical_rank(x: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rank tolerance must be positive, got {rel_tol}"
        )));
    }
    let s = singular_values(x)?;
    let Some(&top) = s.iter().next() else {
        return Ok(0);
    };
    if top == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > rel_tol * top).count())
}

/// Number of singular values above `threshold`. Use this when the rank of a
/// residual must be judged against the scale of the matrix it came from.
pub fn rank_above(x: &DMatrix<f64>, threshold: f64) -> Result<usize> {
    Ok(singular_values(x)?.iter().filter(|&&v| v > threshold).count())
}

/// `max |MᵀM − I|`; zero for a matrix with no columns.
pub fn orthonormality_defect(m: &DMatrix<f64>) -> f64 {
    let g = m.transpose() * m;
    let mut worst = 0.0f64;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn ensure_orthonormal(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    let defect = orthonormality_defect(m);
    if defect > tol || !defect.is_finite() {
        Err(Error::NotOrthonormal(defect))
    } else {
        Ok(())
    }
}

/// `(I − UUᵀ)X`.
pub fn project_complement(x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} rows, matrix has {}",
            u.nrows(),
            x.nrows()
        )));
    }
    if u.ncols() == 0 {
        return Ok(x.clone());
    }
    ensure_orthonormal(u, ORTHONORMAL_TOL)?;
    let coeffs = u.transpose() * x;
    Ok(x - u * coeffs)
}

/// Orthonormal basis for the column space of `m` via Householder QR.
/// Columns must be linearly independent.
pub fn orthonormalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_finite(m)?;
    let (rows, cols) = m.shape();
    if cols == 0 || cols > rows {
        return Err(Error::InvalidArgument(format!(
            "cannot orthonormalize {cols} columns in dimension {rows}"
        )));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if scale == 0.0 || r.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale) {
        return Err(Error::RankDeficient {
            smallest: r.diagonal().iter().fold(f64::INFINITY, |a, d| a.min(d.abs())),
            threshold: 1e-12 * scale,
        });
    }
    Ok(qr.q())
}

/// `max |a − b|` entrywise.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Orthogonal projector onto the span of the orthonormal columns of `q`.
pub(crate) fn projector(q: &DMatrix<f64>) -> DMatrix<f64> {
    q * q.transpose()
}

/// Orthonormal bases of the numerical column and row spaces of `x`.
pub(crate) fn range_bases(x: &DMatrix<f64>, rel_tol: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let f = svd_full(x)?;
    let top = f.sigma.iter().next().copied().unwrap_or(0.0);
    let r = f.sigma.iter().filter(|&&s| top > 0.0 && s > rel_tol * top).count();
    Ok((
        f.u.columns(0, r).into_owned(),
        f.v.columns(0, r).into_owned(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn identity_rank_two() {
        let f = svd_truncated(&DMatrix::identity(3, 3), 2).unwrap();
        assert!((f.sigma[0] - 1.0).abs() < 1e-14 && (f.sigma[1] - 1.0).abs() < 1e-14);
        let p = f.reconstruct();
        assert!(max_abs_diff(&(&p * &p), &p) < 1e-12);
        assert!(max_abs_diff(&p, &p.transpose()) < 1e-12);
        assert!((p.trace() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_factors_satisfy_xv_eq_u_sigma() {
        // rank 3, 28×7: nalgebra's own SVD gets σ₃ wrong on this one
        let mut rng = Rng::new(35);
        let x = rng.gaussian_matrix(28, 3) * rng.gaussian_matrix(3, 7);
        let f = svd_full(&x).unwrap();
        let resid = &x * &f.v - &f.u * DMatrix::from_diagonal(&f.sigma);
        assert!(resid.norm() < 1e-12 * x.norm());
        let gram = (x.transpose() * &x).symmetric_eigen();
        let mut ev: Vec<f64> = gram.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        assert!((f.sigma[2] - ev[2].sqrt()).abs() < 1e-9);
    }

    #[test]
    fn diagonal_leading_triplet() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let f = svd_truncated(&x, 1).unwrap();
        assert!((f.sigma[0] - 3.0).abs() < 1e-14);
        let e1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        assert!(max_abs_diff(&f.u, &e1) < 1e-14);
        assert!(max_abs_diff(&f.v, &e1) < 1e-14);
    }

    #[test]
    fn rank_out_of_range() {
        let x = DMatrix::<f64>::identity(3, 2);
        assert!(svd_truncated(&x, 0).is_err());
        assert!(svd_truncated(&x, 3).is_err());
        let mut bad = x.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(svd_truncated(&bad, 1), Err(Error::NonFinite)));
    }

    #[test]
    fn wide_and_tall_agree() {
        let mut rng = Rng::new(5);
        let x = rng.gaussian_matrix(40, 6);
        let a = svd_full(&x).unwrap();
        let b = svd_full(&x.transpose()).unwrap();
        for i in 0..6 {
            assert!((a.sigma[i] - b.sigma[i]).abs() < 1e-12);
        }
        assert!(max_abs_diff(&a.reconstruct(), &x) < 1e-12);
        assert!(max_abs_diff(&b.reconstruct(), &x.transpose()) < 1e-12);
    }

    #[test]
    fn sign_convention_idempotent() {
        let mut rng = Rng::new(9);
        let mut f = svd_full(&rng.gaussian_matrix(7, 5)).unwrap();
        let before = f.clone();
        f.apply_sign_convention();
        assert_eq!(f, before);
        for j in 0..f.v.ncols() {
            assert!(!needs_flip(f.v.column(j).as_slice()));
        }
    }

    #[test]
    fn sign_tie_lowest_index() {
        assert!(!needs_flip(&[0.5, -0.5]));
        assert!(needs_flip(&[-0.5, 0.5]));
    }

    #[test]
    fn complement_edge_cases() {
        let mut rng = Rng::new(2);
        let x = rng.gaussian_matrix(4, 3);
        let full = DMatrix::<f64>::identity(4, 4);
        assert!(max_abs(&project_complement(&x, &full).unwrap()) < 1e-14);
        let empty = DMatrix::<f64>::zeros(4, 0);
        assert_eq!(project_complement(&x, &empty).unwrap(), x);
        let not_ortho = DMatrix::from_element(4, 1, 1.0);
        assert!(matches!(
            project_complement(&x, &not_ortho),
            Err(Error::NotOrthonormal(_))
        ));
        let wrong = DMatrix::<f64>::identity(3, 1);
        assert!(matches!(
            project_complement(&x, &wrong),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn numerical_rank_examples() {
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 4), 1e-10).unwrap(), 0);
        assert_eq!(numerical_rank(&DMatrix::identity(4, 4), 1e-10).unwrap(), 4);
        let mut rng = Rng::new(3);
        let u = rng.gaussian_vector(6);
        let v = rng.gaussian_vector(5);
        assert_eq!(numerical_rank(&(u * v.transpose()), 1e-10).unwrap(), 1);
        assert!(numerical_rank(&DMatrix::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn data_matrix_validation() {
        let x = DMatrix::from_element(2, 2, 1.0);
        assert!(DataMatrix::new(x.clone(), vec!["a".into(), "a".into()], vec!["s".into(), "t".into()]).is_err());
        assert!(DataMatrix::new(x.clone(), vec!["a".into()], vec!["s".into(), "t".into()]).is_err());
        let mut bad = x.clone();
        bad[(1, 1)] = f64::INFINITY;
        assert!(DataMatrix::from_values(bad).is_err());
        assert!(DataMatrix::from_values(DMatrix::zeros(0, 3)).is_err());
        let mut dm = DataMatrix::from_values(DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 6.0])).unwrap();
        dm.center_rows();
        assert_eq!(dm.values().as_slice(), &[-2.0, -1.0, 3.0]);
    }

    #[test]
    fn orthonormalize_spans_input() {
        let mut rng = Rng::new(4);
        let m = rng.gaussian_matrix(8, 3);
        let q = orthonormalize(&m).unwrap();
        assert!(orthonormality_defect(&q) < 1e-13);
        assert!(max_abs_diff(&(projector(&q) * &m), &m) < 1e-12);
        let dup = DMatrix::from_columns(&[m.column(0), m.column(0)]);
        assert!(orthonormalize(&dup).is_err());
    }
}
