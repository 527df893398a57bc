//! Sparse principal components: rank-one penalized matrix decomposition with
//! an L1 bound on the variable factor, deflated for multiple factors.
//!
//! For each factor the alternation is
//! `u ← soft(Xv, λ)/‖·‖₂` (smallest `λ ≥ 0` with `‖u‖₁ ≤ c`) and
//! `v ← P⊥ Xᵀu/‖·‖₂`, where `P⊥` projects away earlier sample factors. The
//! sample factors come out orthonormal; the variable factors do not.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{ensure_finite, svd_truncated};

const BISECTION_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpcConfig {
    /// L1 bound on each unit-norm variable factor, `1 ≤ c ≤ √P`.
    pub c: f64,
    pub n_factors: usize,
    pub max_iter: usize,
    pub conv_tol: f64,
}

impl SpcConfig {
    pub fn new(c: f64, n_factors: usize) -> Self {
        Self {
            c,
            n_factors,
            max_iter: 200,
            conv_tol: 1e-7,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let cap = (p as f64).sqrt();
        if !(self.c >= 1.0 && self.c <= cap * (1.0 + 1e-12)) {
            return Err(Error::InvalidArgument(format!(
                "SPC bound c = {} outside [1, √P = {cap:.6}]",
                self.c
            )));
        }
        if self.n_factors == 0 || self.max_iter == 0 || !(self.conv_tol > 0.0) {
            return Err(Error::InvalidArgument("invalid SPC iteration settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpcFactors {
    /// `P × m`, unit-norm (possibly sparse) columns.
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    /// `N × m`, orthonormal columns.
    pub v: DMatrix<f64>,
    /// Per factor: whether the alternation met `conv_tol`.
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
    /// Per factor: `uᵀXv` after every alternation.
    pub objective_trace: Vec<Vec<f64>>,
}

impl SpcFactors {
    pub fn n_factors(&self) -> usize {
        self.sigma.len()
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

/// `sign(x_i)·max(|x_i| − λ, 0)`.
pub fn soft_threshold(x: &DVector<f64>, lambda: f64) -> DVector<f64> {
    x.map(|v| v.signum() * (v.abs() - lambda).max(0.0))
}

fn l1(x: &DVector<f64>) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// Unit vector `soft(a, λ)/‖·‖` with the smallest `λ` (by bisection) keeping
/// its L1 norm within `c`.
fn constrained_direction(a: &DVector<f64>, c: f64) -> DVector<f64> {
    let norm = a.norm();
    if norm == 0.0 {
        return a.clone();
    }
    let unit = a / norm;
    if l1(&unit) <= c {
        return unit;
    }
    let feasible = |lambda: f64| -> Option<DVector<f64>> {
        let s = soft_threshold(a, lambda);
        let n = s.norm();
        if n == 0.0 {
            return None;
        }
        let u = s / n;
        (l1(&u) <= c).then_some(u)
    };
    let mut lo = 0.0;
    let mut hi = a.amax();
    let mut best = None;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        match feasible(mid) {
            Some(u) => {
                hi = mid;
                best = Some(u);
            }
            None => lo = mid,
        }
    }
    best.unwrap_or_else(|| {
        // only ties at the maximum survive; keep the first
        let i = a.iamax();
        let mut e = DVector::zeros(a.len());
        e[i] = a[i].signum();
        e
    })
}

fn orthogonalize(v: &mut DVector<f64>, prior: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in prior {
            let c = q.dot(v);
            v.axpy(-c, q, 1.0);
        }
    }
}

pub fn spc(x: &DMatrix<f64>, config: &SpcConfig) -> Result<SpcFactors> {
    ensure_finite(x)?;
    let (p, n) = x.shape();
    config.validate(p)?;
    let m = config.n_factors;
    if m > p.min(n) {
        return Err(Error::InvalidArgument(format!(
            "{m} factors requested from a {p}×{n} matrix"
        )));
    }

    let mut work = x.clone();
    let mut us = Vec::with_capacity(m);
    let mut vs: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut sigmas = Vec::with_capacity(m);
    let mut converged = Vec::with_capacity(m);
    let mut iterations = Vec::with_capacity(m);
    let mut traces = Vec::with_capacity(m);

    for _ in 0..m {
        let mut v: DVector<f64> = svd_truncated(&work, 1)?.v.column(0).into_owned();
        orthogonalize(&mut v, &vs);
        if v.norm() == 0.0 {
            v = fallback_direction(n, &vs);
        }
        v.normalize_mut();

        let mut u = constrained_direction(&(&work * &v), config.c);
        let mut trace = Vec::new();
        let mut done = false;
        let mut iters = 0;
        while iters < config.max_iter {
            iters += 1;
            let mut v_new = work.transpose() * &u;
            orthogonalize(&mut v_new, &vs);
            let vn = v_new.norm();
            if vn > 0.0 {
                v = v_new / vn;
            }
            let u_new = constrained_direction(&(&work * &v), config.c);
            trace.push(u_new.dot(&(&work * &v)));
            let change = (&u_new - &u).norm();
            u = u_new;
            if change < config.conv_tol {
                done = true;
                break;
            }
        }
        let sigma = u.dot(&(&work * &v));
        work -= sigma * &u * v.transpose();
        us.push(u);
        vs.push(v);
        sigmas.push(sigma);
        converged.push(done);
        iterations.push(iters);
        traces.push(trace);
    }

    Ok(SpcFactors {
        u: DMatrix::from_columns(&us),
        sigma: DVector::from_vec(sigmas),
        v: DMatrix::from_columns(&vs),
        converged,
        iterations,
        objective_trace: traces,
    })
}

/// First coordinate axis with a nonzero component outside `prior`.
fn fallback_direction(n: usize, prior: &[DVector<f64>]) -> DVector<f64> {
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        orthogonalize(&mut e, prior);
        if e.norm() > 1e-8 {
            return e;
        }
    }
    DVector::zeros(n)
}
