//! Scoring decompositions against planted signals and labeled samples.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::engine::{smssvd_matrix, Decomposition, EngineConfig};
use crate::error::{Error, Result};
use crate::matrix::svd_truncated;
use crate::rng::Rng;
use crate::spc::{spc, SpcConfig, SpcFactors};
use crate::synthetic::SignalTarget;

/// One rank-one term `s·uvᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOne {
    pub u: DVector<f64>,
    pub s: f64,
    pub v: DVector<f64>,
}

impl RankOne {
    pub fn zero(p: usize, n: usize) -> Self {
        Self {
            u: DVector::zeros(p),
            s: 0.0,
            v: DVector::zeros(n),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        self.s * &self.u * self.v.transpose()
    }
}

fn split_columns(u: &DMatrix<f64>, sigma: &DVector<f64>, v: &DMatrix<f64>) -> Vec<RankOne> {
    (0..sigma.len())
        .map(|j| RankOne {
            u: u.column(j).into_owned(),
            s: sigma[j],
            v: v.column(j).into_owned(),
        })
        .collect()
}

/// Rank-one terms of every block, in block order.
pub fn decomposition_components(dec: &Decomposition) -> Vec<RankOne> {
    dec.blocks
        .iter()
        .flat_map(|b| split_columns(&b.u, &b.sigma, &b.v))
        .collect()
}

pub fn spc_components(f: &SpcFactors) -> Vec<RankOne> {
    split_columns(&f.u, &f.sigma, &f.v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Component index → signal index.
    pub assignment: BTreeMap<usize, usize>,
    /// `err(k) = ‖R_kᵀ(Y_k − Ŷ_k)‖_F`.
    pub per_signal_error: Vec<f64>,
    /// `‖Y_k‖_F`.
    pub signal_strength: Vec<f64>,
}

impl MatchResult {
    pub fn total_error(&self) -> f64 {
        self.per_signal_error.iter().sum()
    }
}

/// Greedily assigns rank-one components to signals, each time taking the
/// (component, signal) pair that lowers `Σ_k err(k)` the most, until every
/// signal holds `rank(Y_k)` components. Ties go to the lower component index,
/// then the lower signal index.
pub fn greedy_match(components: &[RankOne], truth: &[SignalTarget]) -> Result<MatchResult> {
    let required: usize = truth.iter().map(|t| t.rank).sum();
    if components.len() < required {
        return Err(Error::CapacityInfeasible {
            components: components.len(),
            required,
        });
    }
    for (c, comp) in components.iter().enumerate() {
        for t in truth {
            if comp.u.len() != t.y.nrows() || comp.v.len() != t.y.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "component {c} does not match signal shape {:?}",
                    t.y.shape()
                )));
            }
        }
    }

    let mut residual: Vec<DMatrix<f64>> = truth.iter().map(|t| t.y.select_rows(t.support.iter())).collect();
    let mut err: Vec<f64> = residual.iter().map(|r| r.norm()).collect();
    let mut capacity: Vec<usize> = truth.iter().map(|t| t.rank).collect();
    let mut used = vec![false; components.len()];
    let mut assignment = BTreeMap::new();

    for _ in 0..required {
        let mut best: Option<(f64, usize, usize)> = None;
        for (c, comp) in components.iter().enumerate() {
            if used[c] {
                continue;
            }
            for (k, t) in truth.iter().enumerate() {
                if capacity[k] == 0 {
                    continue;
                }
                let u_r = DVector::from_iterator(t.support.len(), t.support.iter().map(|&i| comp.u[i]));
                let cross = u_r.dot(&(&residual[k] * &comp.v));
                let sq = err[k] * err[k] - 2.0 * comp.s * cross
                    + comp.s * comp.s * u_r.norm_squared() * comp.v.norm_squared();
                let decrease = err[k] - sq.max(0.0).sqrt();
                if best.is_none_or(|(b, _, _)| decrease > b) {
                    best = Some((decrease, c, k));
                }
            }
        }
        let (_, c, k) = best.expect("capacity remains");
        let comp = &components[c];
        let t = &truth[k];
        let u_r = DVector::from_iterator(t.support.len(), t.support.iter().map(|&i| comp.u[i]));
        residual[k] -= comp.s * u_r * comp.v.transpose();
        err[k] = residual[k].norm();
        capacity[k] -= 1;
        used[c] = true;
        assignment.insert(c, k);
    }

    Ok(MatchResult {
        assignment,
        per_signal_error: err,
        signal_strength: truth.iter().map(|t| t.strength()).collect(),
    })
}

/// Gaussian-mixture fit quality of a labeled sample representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicResult {
    /// `Σ_i log P(label_i | x_i)` under the class-conditional Gaussians with
    /// priors proportional to class sizes.
    pub loglik: f64,
    /// `Σ_i log[π(label_i)·N(x_i | label_i)]`.
    pub joint_loglik: f64,
    /// `G·(m + m(m+1)/2)`: means and covariances; priors are not fitted.
    pub n_params: usize,
    /// `2·n_params − 2·loglik`.
    pub aic: f64,
    pub joint_aic: f64,
    pub n_classes: usize,
    /// Set when some class covariance needed a ridge.
    pub ridge_applied: bool,
}

struct ClassModel {
    log_prior: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    log_det: f64,
}

impl ClassModel {
    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let m = x.len() as f64;
        let diff = x - &self.mean;
        let z = self.chol.l().solve_lower_triangular(&diff).expect("nonsingular factor");
        -0.5 * (m * (2.0 * std::f64::consts::PI).ln() + self.log_det + z.norm_squared())
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn covariance(rows: &[DVector<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let m = mean.len();
    let mut cov = DMatrix::zeros(m, m);
    for r in rows {
        let d = r - mean;
        cov += &d * d.transpose();
    }
    cov / rows.len() as f64
}

/// Adds `1e-6·trace/m·I` when the covariance is near singular; returns the
/// factorization and whether a ridge was needed.
fn regularized_cholesky(mut cov: DMatrix<f64>, fallback_scale: f64) -> (Cholesky<f64, nalgebra::Dyn>, bool) {
    let m = cov.nrows();
    let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
    let hi = eig.max();
    let lo = eig.min();
    let mut ridged = false;
    if !(lo >= 1e-10 * hi) || hi <= 0.0 {
        let mut base = cov.trace() / m as f64;
        if !(base > 0.0) {
            base = fallback_scale;
        }
        for i in 0..m {
            cov[(i, i)] += 1e-6 * base;
        }
        ridged = true;
    }
    let mut extra = 1e-6 * fallback_scale;
    loop {
        if let Some(c) = Cholesky::new(cov.clone()) {
            return (c, ridged);
        }
        for i in 0..m {
            cov[(i, i)] += extra;
        }
        extra *= 10.0;
        ridged = true;
    }
}

/// Fits one Gaussian per label (MLE) on the `N × m` coordinates and scores
/// how well the mixture explains the labels.
pub fn aic_gmm<T: Ord + Clone>(coords: &DMatrix<f64>, labels: &[T]) -> Result<AicResult> {
    let (n, m) = coords.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} samples but {} labels",
            labels.len()
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("need at least one sample and one dimension".into()));
    }
    crate::matrix::ensure_finite(coords)?;

    let mut groups: BTreeMap<&T, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let rows: Vec<DVector<f64>> = (0..n).map(|i| coords.row(i).transpose()).collect();
    let overall_mean = rows.iter().fold(DVector::zeros(m), |a, r| a + r) / n as f64;
    let mut fallback = covariance(&rows, &overall_mean).trace() / m as f64;
    if !(fallback > 0.0) {
        fallback = 1.0;
    }

    let mut class_of = vec![0usize; n];
    let mut models = Vec::with_capacity(groups.len());
    let mut ridge_applied = false;
    for (g, idx) in groups.values().enumerate() {
        let members: Vec<DVector<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
        let mean = members.iter().fold(DVector::zeros(m), |a, r| a + r) / members.len() as f64;
        let (chol, ridged) = regularized_cholesky(covariance(&members, &mean), fallback);
        ridge_applied |= ridged;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        for &i in idx {
            class_of[i] = g;
        }
        models.push(ClassModel {
            log_prior: (idx.len() as f64 / n as f64).ln(),
            mean,
            chol,
            log_det,
        });
    }

    let mut loglik = 0.0;
    let mut joint = 0.0;
    let mut terms = vec![0.0; models.len()];
    for (i, x) in rows.iter().enumerate() {
        for (g, model) in models.iter().enumerate() {
            terms[g] = model.log_prior + model.log_density(x);
        }
        let own = terms[class_of[i]];
        loglik += own - log_sum_exp(&terms);
        joint += own;
    }

    let g = models.len();
    let n_params = g * (m + m * (m + 1) / 2);
    Ok(AicResult {
        loglik,
        joint_loglik: joint,
        n_params,
        aic: 2.0 * n_params as f64 - 2.0 * loglik,
        joint_aic: 2.0 * n_params as f64 - 2.0 * joint,
        n_classes: g,
        ridge_applied,
    })
}

/// L1 bound for SPC, absolute or as a multiple of `√P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpcBound {
    Absolute(f64),
    RelativeToSqrtP(f64),
}

impl SpcBound {
    pub fn resolve(&self, p: usize) -> f64 {
        match *self {
            SpcBound::Absolute(c) => c,
            SpcBound::RelativeToSqrtP(r) => r * (p as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Svd,
    Smssvd(EngineConfig),
    Spc(SpcBound),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Svd => write!(f, "svd"),
            Method::Smssvd(_) => write!(f, "smssvd"),
            Method::Spc(SpcBound::Absolute(c)) => write!(f, "spc:c={c}"),
            Method::Spc(SpcBound::RelativeToSqrtP(r)) => write!(f, "spc:c=r{r}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// `svd`, `smssvd`, `spc:c=2`, or relative forms `spc:c=r0.04`,
    /// `spc:c=0.04√P`, `spc:c=0.04sqrtP`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "svd" => return Ok(Method::Svd),
            "smssvd" => return Ok(Method::Smssvd(EngineConfig::default())),
            _ => {}
        }
        let bad = || Error::InvalidArgument(format!("unrecognized method {s:?}"));
        let c = s.strip_prefix("spc:c=").ok_or_else(bad)?;
        let parse = |t: &str| t.parse::<f64>().ok().filter(|v| v.is_finite() && *v > 0.0);
        let bound = if let Some(r) = c.strip_prefix('r') {
            SpcBound::RelativeToSqrtP(parse(r).ok_or_else(bad)?)
        } else if let Some(r) = c.strip_suffix("√P").or_else(|| c.strip_suffix("sqrtP")) {
            SpcBound::RelativeToSqrtP(parse(r.trim_end_matches('*')).ok_or_else(bad)?)
        } else {
            SpcBound::Absolute(parse(c).ok_or_else(bad)?)
        };
        Ok(Method::Spc(bound))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalError {
    /// 1-based signal index.
    pub signal: usize,
    pub err: f64,
    pub strength: f64,
    /// `err > strength`: a different signal was found.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: String,
    pub rows: Vec<SignalError>,
    pub components_found: usize,
    /// Present for SMSSVD runs.
    pub decomposition: Option<Decomposition>,
}

/// Runs each method on `x` with a component budget equal to the total signal
/// rank, splits the output into rank-one terms and greedy-matches them.
/// Methods that return fewer terms are padded with zero terms.
pub fn compare_methods(
    x: &DMatrix<f64>,
    truth: &[SignalTarget],
    methods: &[Method],
    rng: &Rng,
) -> Result<Vec<MethodOutcome>> {
    let (p, n) = x.shape();
    let budget: usize = truth.iter().map(|t| t.rank).sum();
    if budget == 0 || budget > p.min(n) {
        return Err(Error::InvalidArgument(format!(
            "total signal rank {budget} not in 1..={}",
            p.min(n)
        )));
    }
    let mut out = Vec::with_capacity(methods.len());
    for method in methods {
        let mut decomposition = None;
        let mut comps = match method {
            Method::Svd => {
                let f = svd_truncated(x, budget)?;
                split_columns(&f.u, &f.sigma, &f.v)
            }
            Method::Smssvd(cfg) => {
                let cfg = EngineConfig {
                    max_components: budget,
                    ..cfg.clone()
                };
                let dec = smssvd_matrix(x, &cfg, rng)?;
                let c = decomposition_components(&dec);
                decomposition = Some(dec);
                c
            }
            Method::Spc(bound) => {
                let f = spc(x, &SpcConfig::new(bound.resolve(p), budget))?;
                spc_components(&f)
            }
        };
        let components_found = comps.len();
        comps.resize(budget.max(comps.len()), RankOne::zero(p, n));
        let m = greedy_match(&comps, truth)?;
        let rows = m
            .per_signal_error
            .iter()
            .zip(&m.signal_strength)
            .enumerate()
            .map(|(k, (&err, &strength))| SignalError {
                signal: k + 1,
                err,
                strength,
                flagged: err > strength,
            })
            .collect();
        out.push(MethodOutcome {
            method: method.to_string(),
            rows,
            components_found,
            decomposition,
        });
    }
    Ok(out)
}
