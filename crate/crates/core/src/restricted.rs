//! SVD of a linear map restricted to a subspace of sample space.
//!
//! For `X: ℝᴺ → ℝᴾ` and a `d`-dimensional subspace `Π ⊂ ℝᴺ` that avoids the
//! kernel of `X`, the SVD of `X|Π` is obtained from the `P × d` matrix `X·B`
//! (with `B` an orthonormal basis of `Π`): if `X·B = Ũ Σ Wᵀ` then
//! `U = Ũ`, `V = B·W`. The result keeps most of the algebraic structure of a
//! truncated SVD, which is what makes deflation-based concatenation orthogonal.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{
    ensure_finite, ensure_orthonormal, max_abs, max_abs_diff, numerical_rank, orthonormalize, rank_above,
    project_complement, projector, range_bases, spectral_norm, svd_full, SvdFactors,
    DEFAULT_RANK_TOL,
};

/// Orthonormal basis (`N × d`) of a subspace of sample space.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    basis: DMatrix<f64>,
}

impl SubspaceBasis {
    /// Wraps an already column-orthonormal matrix (checked to `1e-10`).
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        if basis.ncols() == 0 || basis.ncols() > basis.nrows() {
            return Err(Error::InvalidArgument(format!(
                "subspace dimension {} must be in 1..={}",
                basis.ncols(),
                basis.nrows()
            )));
        }
        ensure_finite(&basis)?;
        ensure_orthonormal(&basis, 1e-10)?;
        Ok(Self { basis })
    }

    /// Orthonormalizes an arbitrary spanning set first.
    pub fn from_spanning_set(columns: &DMatrix<f64>) -> Result<Self> {
        Self::new(orthonormalize(columns)?)
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }
}

/// Smallest admissible `σ_min(X·B)`, relative to `σ_max(X)`.
pub const KERNEL_SEPARATION_TOL: f64 = 1e-10;

/// SVD of `X` restricted to `Π = span(B)`.
///
/// Fails with [`Error::RankDeficient`] when `σ_min(X·B) ≤ 1e-10·σ_max(X)`,
/// i.e. when `Π` is not numerically separated from `ker X`.
pub fn restrict_svd(x: &DMatrix<f64>, pi: &SubspaceBasis) -> Result<SvdFactors> {
    if x.ncols() != pi.ambient_dim() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} columns, subspace lives in dimension {}",
            x.ncols(),
            pi.ambient_dim()
        )));
    }
    ensure_finite(x)?;
    let d = pi.dim();
    if d > x.nrows() {
        return Err(Error::RankDeficient {
            smallest: 0.0,
            threshold: 0.0,
        });
    }
    let xb = x * pi.basis();
    let inner = svd_full(&xb)?;
    let threshold = KERNEL_SEPARATION_TOL * spectral_norm(x);
    let smallest = inner.sigma[d - 1];
    if !(smallest > threshold) {
        return Err(Error::RankDeficient {
            smallest,
            threshold,
        });
    }
    let mut f = SvdFactors {
        u: inner.u,
        sigma: inner.sigma,
        v: pi.basis() * inner.v,
    };
    f.apply_sign_convention();
    Ok(f)
}

/// Residuals of the identities satisfied by a restricted SVD.
///
/// All entries are max-abs values except `rank_defect`, which is the integer
/// `|rank X − d − rank((I − UUᵀ)X)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionReport {
    /// Component of `V` outside the row space of `X` (`V ⊥ ker X`).
    pub v_outside_row_space: f64,
    /// Smallest column norm of `X·V`; positive when no direction of `Π` is
    /// annihilated.
    pub min_xv_column_norm: f64,
    /// Component of `U` outside the column space of `X` (`U ⊥ coker X`).
    pub u_outside_column_space: f64,
    /// `max |XV − UΣ|`.
    pub xv_minus_u_sigma: f64,
    /// `max |UᵀX − ΣVᵀ − UᵀX(I − VVᵀ)|`.
    pub left_split: f64,
    /// `max |(I − UUᵀ)X(I − VVᵀ) − (I − UUᵀ)X|`.
    pub two_sided_deflation: f64,
    /// `max |UᵀX − ΣVᵀ|`; vanishes only when `Π` is a right singular subspace.
    pub left_identity: f64,
    pub rank_defect: usize,
}

impl RestrictionReport {
    /// Largest of the continuous identity residuals (the subspace-membership
    /// and product identities; excludes `left_identity`).
    pub fn max_identity_residual(&self) -> f64 {
        [
            self.v_outside_row_space,
            self.u_outside_column_space,
            self.xv_minus_u_sigma,
            self.left_split,
            self.two_sided_deflation,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn scaled_columns(m: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, v) in out.column_iter_mut().zip(s) {
        col *= *v;
    }
    out
}

/// Evaluates every identity of a restricted SVD `f` of `x`.
pub fn restriction_diagnostics(x: &DMatrix<f64>, f: &SvdFactors) -> Result<RestrictionReport> {
    restriction_diagnostics_with_tol(x, f, DEFAULT_RANK_TOL)
}

pub fn restriction_diagnostics_with_tol(
    x: &DMatrix<f64>,
    f: &SvdFactors,
    rank_tol: f64,
) -> Result<RestrictionReport> {
    let (p, n) = x.shape();
    if f.u.nrows() != p || f.v.nrows() != n || f.u.ncols() != f.v.ncols() {
        return Err(Error::DimensionMismatch("factors do not match matrix".into()));
    }
    let d = f.rank();
    let sigma = f.sigma.as_slice();
    let (col_space, row_space) = range_bases(x, rank_tol)?;

    let v_outside_row_space = max_abs(&(&f.v - projector(&row_space) * &f.v));
    let u_outside_column_space = max_abs(&(&f.u - projector(&col_space) * &f.u));

    let xv = x * &f.v;
    let min_xv_column_norm = xv
        .column_iter()
        .map(|c| c.norm())
        .fold(f64::INFINITY, f64::min);
    let u_sigma = scaled_columns(&f.u, sigma);
    let xv_minus_u_sigma = max_abs_diff(&xv, &u_sigma);

    let utx = f.u.transpose() * x;
    let sigma_vt = scaled_columns(&f.v, sigma).transpose();
    let right_comp = DMatrix::identity(n, n) - projector(&f.v);
    let left_split = max_abs(&(&utx - &sigma_vt - &utx * &right_comp));
    let left_identity = max_abs_diff(&utx, &sigma_vt);

    let deflated = project_complement(x, &f.u)?;
    let two_sided_deflation = max_abs_diff(&(&deflated * &right_comp), &deflated);

    let rank_x = numerical_rank(x, rank_tol)?;
    // judged against X's scale: the deflated part may be pure rounding noise
    let rank_rest = rank_above(&deflated, rank_tol * spectral_norm(x))?;
    let rank_defect = rank_x.abs_diff(d + rank_rest);

    Ok(RestrictionReport {
        v_outside_row_space,
        min_xv_column_norm,
        u_outside_column_space,
        xv_minus_u_sigma,
        left_split,
        two_sided_deflation,
        left_identity,
        rank_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{orthonormality_defect, svd_truncated};
    use crate::rng::Rng;

    fn random_basis(rng: &mut Rng, n: usize, d: usize) -> SubspaceBasis {
        SubspaceBasis::from_spanning_set(&rng.gaussian_matrix(n, d)).unwrap()
    }

    #[test]
    fn top_subspace_gives_truncated_svd() {
        let mut rng = Rng::new(21);
        let x = rng.gaussian_matrix(12, 9);
        let t = svd_truncated(&x, 3).unwrap();
        let f = restrict_svd(&x, &SubspaceBasis::new(t.v.clone()).unwrap()).unwrap();
        for i in 0..3 {
            assert!((f.sigma[i] - t.sigma[i]).abs() < 1e-12);
        }
        assert!(max_abs_diff(&f.u, &t.u) < 1e-10);
        assert!(max_abs_diff(&f.v, &t.v) < 1e-10);
        let rep = restriction_diagnostics(&x, &f).unwrap();
        assert!(rep.left_identity < 1e-10 * x.norm());
    }

    #[test]
    fn row_space_gives_full_svd() {
        let mut rng = Rng::new(22);
        let x = rng.gaussian_matrix(10, 3) * rng.gaussian_matrix(3, 8);
        // a rotated basis of (ker X)^⊥ rather than the singular vectors themselves
        let (_, rows) = range_bases(&x, 1e-10).unwrap();
        assert_eq!(rows.ncols(), 3);
        let mix = orthonormalize(&rng.gaussian_matrix(3, 3)).unwrap();
        let f = restrict_svd(&x, &SubspaceBasis::new(&rows * mix).unwrap()).unwrap();
        let full = svd_full(&x).unwrap();
        for i in 0..3 {
            assert!((f.sigma[i] - full.sigma[i]).abs() < 1e-10);
        }
        assert!(max_abs_diff(&f.reconstruct(), &x) < 1e-10 * x.norm());
    }

    #[test]
    fn random_subspace_identities() {
        let mut rng = Rng::new(23);
        let x = rng.gaussian_matrix(20, 10);
        let b = random_basis(&mut rng, 10, 3);
        let f = restrict_svd(&x, &b).unwrap();
        let rep = restriction_diagnostics(&x, &f).unwrap();
        let tol = 1e-8 * x.norm();
        assert!(rep.max_identity_residual() < tol, "{rep:?}");
        assert_eq!(rep.rank_defect, 0);
        assert!(rep.min_xv_column_norm > 0.0);
        assert!(orthonormality_defect(&f.u) < 1e-12);
        assert!(max_abs_diff(&projector(&f.v), &projector(b.basis())) < 1e-9);
        // deflation annihilates the block
        let block = f.reconstruct();
        assert!(max_abs(&project_complement(&block, &f.u).unwrap()) < 1e-10);
        // the general identity is not the simplified one
        assert!(rep.left_identity > 1e-6);
    }

    #[test]
    fn padded_rank_one() {
        let mut x = DMatrix::zeros(5, 4);
        x[(0, 0)] = 2.0;
        x[(0, 1)] = 1.0;
        let t = svd_truncated(&x, 1).unwrap();
        let f = restrict_svd(&x, &SubspaceBasis::new(t.v).unwrap()).unwrap();
        let deflated = project_complement(&x, &f.u).unwrap();
        assert_eq!(numerical_rank(&deflated, 1e-10).unwrap(), 0);
    }

    #[test]
    fn kernel_direction_rejected() {
        let mut x = DMatrix::zeros(3, 3);
        x[(0, 0)] = 1.0;
        let b = SubspaceBasis::new(DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0])).unwrap();
        assert!(matches!(restrict_svd(&x, &b), Err(Error::RankDeficient { .. })));
        let wrong = SubspaceBasis::new(DMatrix::identity(4, 1)).unwrap();
        assert!(matches!(restrict_svd(&x, &wrong), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn basis_validation() {
        assert!(SubspaceBasis::new(DMatrix::from_element(3, 1, 1.0)).is_err());
        assert!(SubspaceBasis::new(DMatrix::zeros(3, 0)).is_err());
        let b = SubspaceBasis::from_spanning_set(&DMatrix::from_element(3, 1, 1.0)).unwrap();
        assert_eq!(b.dim(), 1);
    }
}
