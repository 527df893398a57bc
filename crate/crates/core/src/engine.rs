//! The SMSSVD iteration.
//!
//! Starting from `X₁ = X`, each iteration
//! 1. picks a variable subset `S_k` and dimension `d_k` maximizing the
//!    projection score of `S_kᵀX_k`;
//! 2. takes the right factors `Ṽ` of the rank-`d_k` truncated SVD of
//!    `S_kᵀX_k` and computes the SVD of `X_k` restricted to `span(Ṽ)`;
//! 3. deflates `X_{k+1} = (I − U_kU_kᵀ)X_k`.
//!
//! The blocks concatenate into `UΣVᵀ` with `UᵀU = VᵀV = I`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{
    max_abs, max_abs_diff, numerical_rank, orthonormality_defect, project_complement, projector,
    range_bases, svd_truncated, DataMatrix, SvdFactors, DEFAULT_RANK_TOL,
};
use crate::restricted::{restrict_svd, SubspaceBasis};
use crate::rng::Rng;
use crate::selection::{
    default_grid, optimize_selection_with, NullModel, ProjectionScoreRecord, SelectionMap,
    SelectionSearch, DEFAULT_NULL_SAMPLES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Stop once the decomposition holds this many components.
    pub max_components: usize,
    /// Stop when the best projection score is at or below this value.
    pub min_score: f64,
    pub null_samples: usize,
    pub null_model: NullModel,
    /// Largest dimension considered per block; `None` means `min(N − 1, 20)`.
    pub d_max: Option<usize>,
    /// Keep fractions searched per block; `None` means the geometric default.
    pub keep_fraction_grid: Option<Vec<f64>>,
    pub rank_tol: f64,
    /// Stop when `‖X_k‖_F < zero_tol·‖X‖_F`.
    pub zero_tol: f64,
    /// Bypass the dimension search and use this `d` for every block.
    pub fixed_dimension: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_components: 20,
            min_score: 0.0,
            null_samples: DEFAULT_NULL_SAMPLES,
            null_model: NullModel::default(),
            d_max: None,
            keep_fraction_grid: None,
            rank_tol: DEFAULT_RANK_TOL,
            zero_tol: 1e-8,
            fixed_dimension: None,
        }
    }
}

impl EngineConfig {
    /// Configuration under which every block is a plain truncated SVD of the
    /// residual: no filtering, no score-based stopping.
    pub fn unfiltered() -> Self {
        Self {
            keep_fraction_grid: Some(vec![1.0]),
            min_score: f64::NEG_INFINITY,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_components == 0 {
            return Err(Error::InvalidArgument("max_components must be at least 1".into()));
        }
        if self.null_samples == 0 {
            return Err(Error::InvalidArgument("null_samples must be at least 1".into()));
        }
        if self.d_max == Some(0) || self.fixed_dimension == Some(0) {
            return Err(Error::InvalidArgument("dimensions must be at least 1".into()));
        }
        if let Some(grid) = &self.keep_fraction_grid {
            if grid.is_empty() || grid.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                return Err(Error::InvalidArgument(
                    "keep fractions must be a nonempty list in (0, 1]".into(),
                ));
            }
        }
        if !(self.rank_tol > 0.0) || !(self.zero_tol >= 0.0) || self.min_score.is_nan() {
            return Err(Error::InvalidArgument("invalid tolerance".into()));
        }
        Ok(())
    }

    pub fn effective_d_max(&self, n: usize) -> usize {
        self.d_max
            .unwrap_or_else(|| n.saturating_sub(1).clamp(1, 20))
    }

    pub fn effective_grid(&self, p: usize, n: usize) -> Vec<f64> {
        self.keep_fraction_grid
            .clone()
            .unwrap_or_else(|| default_grid(p, self.effective_d_max(n)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The residual fell below `zero_tol` (or the input was zero).
    ZeroResidual,
    /// `max_components` reached.
    ComponentBudget,
    /// No subset scored above `min_score`.
    NoInformativeSubset,
    /// Every sample-space dimension has been consumed.
    Exhausted,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::ZeroResidual => "zero residual",
            StopReason::ComponentBudget => "component budget",
            StopReason::NoInformativeSubset => "no informative subset",
            StopReason::Exhausted => "exhausted",
        }
    }
}

/// One iteration's output.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionBlock {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
    pub selection: SelectionMap,
    pub score_record: ProjectionScoreRecord,
    pub iteration_index: usize,
    /// Singular values of `S_kᵀX_k` retained for this block (`Σ̃`).
    pub filtered_sigma: DVector<f64>,
    /// `‖U_kᵀX_k(I − V_kV_kᵀ)‖_F`, the part of `X_k` this block cannot express.
    pub within_span_residual: f64,
}

impl DecompositionBlock {
    pub fn d(&self) -> usize {
        self.sigma.len()
    }

    pub fn factors(&self) -> SvdFactors {
        SvdFactors {
            u: self.u.clone(),
            sigma: self.sigma.clone(),
            v: self.v.clone(),
        }
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.factors().reconstruct()
    }
}

/// Ordered blocks whose concatenation forms `UΣVᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub blocks: Vec<DecompositionBlock>,
    pub source_dims: (usize, usize),
    pub stop_reason: StopReason,
    /// `‖X_{n+1}‖_F` after the last deflation.
    pub final_residual_norm: f64,
}

impl Decomposition {
    pub fn total_d(&self) -> usize {
        self.blocks.iter().map(|b| b.d()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Concatenated `(U₁ … U_n)`.
    pub fn u(&self) -> DMatrix<f64> {
        concat_columns(self.source_dims.0, self.blocks.iter().map(|b| &b.u))
    }

    pub fn v(&self) -> DMatrix<f64> {
        concat_columns(self.source_dims.1, self.blocks.iter().map(|b| &b.v))
    }

    pub fn sigma(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.total_d(),
            self.blocks.iter().flat_map(|b| b.sigma.iter().copied()),
        )
    }

    /// Block index of every concatenated component.
    pub fn component_blocks(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(k, b)| std::iter::repeat_n(k, b.d()))
            .collect()
    }

    /// `max(‖UᵀU − I‖_max, ‖VᵀV − I‖_max)` over the concatenation.
    pub fn orthogonality_defect(&self) -> f64 {
        orthonormality_defect(&self.u()).max(orthonormality_defect(&self.v()))
    }

    /// Sample representation `V·Σ`, columns in block order.
    pub fn scaled_sample_scores(&self) -> DMatrix<f64> {
        let mut v = self.v();
        for (mut col, s) in v.column_iter_mut().zip(self.sigma().iter()) {
            col *= *s;
        }
        v
    }
}

fn concat_columns<'a>(rows: usize, parts: impl Iterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    let cols: Vec<_> = parts.flat_map(|m| m.column_iter()).collect();
    if cols.is_empty() {
        DMatrix::zeros(rows, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Runs SMSSVD on `x`.
///
/// Block `k` draws its null samples from `rng.substream(k)`, so a prefix of
/// blocks does not depend on settings that only affect later blocks.
pub fn smssvd(x: &DataMatrix, config: &EngineConfig, rng: &Rng) -> Result<Decomposition> {
    smssvd_matrix(x.values(), config, rng)
}

pub fn smssvd_matrix(x: &DMatrix<f64>, config: &EngineConfig, rng: &Rng) -> Result<Decomposition> {
    config.validate()?;
    crate::matrix::ensure_finite(x)?;
    let (p, n) = x.shape();
    let grid = config.effective_grid(p, n);
    let d_max = config.effective_d_max(n);
    let norm0 = x.norm();

    let mut blocks = Vec::new();
    let mut xk = x.clone();
    let mut total_d = 0usize;
    let stop_reason = loop {
        let norm_k = xk.norm();
        if norm0 == 0.0 || norm_k < config.zero_tol * norm0 {
            break StopReason::ZeroResidual;
        }
        if total_d >= config.max_components {
            break StopReason::ComponentBudget;
        }
        if total_d >= p.min(n) {
            break StopReason::Exhausted;
        }
        let iteration = blocks.len();
        let search = SelectionSearch {
            grid: grid.clone(),
            d_max: d_max.min(config.max_components - total_d),
            null_samples: config.null_samples,
            null_model: config.null_model,
            consumed: (total_d > 0).then(|| concat_columns(n, blocks.iter().map(|b: &DecompositionBlock| &b.v))),
            fixed_dimension: config.fixed_dimension,
        };
        let choice = match optimize_selection_with(&xk, &search, &rng.substream(iteration as u64)) {
            Ok(c) => c,
            Err(Error::NoFeasibleSelection) => break StopReason::Exhausted,
            Err(e) => return Err(e),
        };
        if choice.record.score <= config.min_score {
            break StopReason::NoInformativeSubset;
        }

        let filtered = choice.selection.apply(&xk);
        let rank = numerical_rank(&filtered, config.rank_tol)?;
        let d = choice.d.min(rank);
        if d == 0 {
            break StopReason::ZeroResidual;
        }
        let tilde = svd_truncated(&filtered, d)?;
        let pi = SubspaceBasis::new(tilde.v.clone())?;
        let f = restrict_svd(&xk, &pi)?;

        let utx = f.u.transpose() * &xk;
        let within_span_residual = (&utx - &utx * projector(&f.v)).norm();
        xk = project_complement(&xk, &f.u)?;
        total_d += d;
        blocks.push(DecompositionBlock {
            u: f.u,
            sigma: f.sigma,
            v: f.v,
            selection: choice.selection,
            score_record: choice.record,
            iteration_index: iteration,
            filtered_sigma: tilde.sigma,
            within_span_residual,
        });
    };

    Ok(Decomposition {
        blocks,
        source_dims: (p, n),
        stop_reason,
        final_residual_norm: xk.norm(),
    })
}

/// Sum of `U_kΣ_kV_kᵀ` over `block_subset` (all blocks when `None`).
pub fn reconstruct(dec: &Decomposition, block_subset: Option<&BTreeSet<usize>>) -> Result<DMatrix<f64>> {
    let (p, n) = dec.source_dims;
    let mut out = DMatrix::zeros(p, n);
    match block_subset {
        None => {
            for b in &dec.blocks {
                out += b.reconstruct();
            }
        }
        Some(set) => {
            for &k in set {
                let b = dec.blocks.get(k).ok_or_else(|| {
                    Error::InvalidArgument(format!("block {k} out of range ({} blocks)", dec.blocks.len()))
                })?;
                out += b.reconstruct();
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `‖X − UΣVᵀ‖_F`.
    pub total: f64,
    /// `‖U_kᵀX_k(I − V_kV_kᵀ)‖_F` per block.
    pub per_block: Vec<f64>,
}

pub fn residual_norm(dec: &Decomposition, x: &DMatrix<f64>) -> Result<ResidualReport> {
    if x.shape() != dec.source_dims {
        return Err(Error::DimensionMismatch(format!(
            "decomposition of {:?} applied to {:?}",
            dec.source_dims,
            x.shape()
        )));
    }
    let total = (x - reconstruct(dec, None)?).norm();
    Ok(ResidualReport {
        total,
        per_block: dec.blocks.iter().map(|b| b.within_span_residual).collect(),
    })
}

/// Residuals of the identities linking a block to the truncated SVD of its
/// filtered matrix `SᵀX_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionLiftReport {
    /// Component of `V` outside the row space of `X_k` (`Π ⊥ ker X_k`).
    pub v_outside_row_space: f64,
    /// `max |Sᵀ(UΣVᵀ) − ŨΣ̃Ṽᵀ|`.
    pub filtered_agreement: f64,
    /// `max |VVᵀ − ṼṼᵀ|`.
    pub span_agreement: f64,
    /// Component of `SᵀU` outside `span(Ũ)`.
    pub selected_u_outside: f64,
    /// Numerical rank of `SᵀU` (equals `d` when it is a basis).
    pub selected_u_rank: usize,
    /// `‖Σ‖_F − ‖Σ̃‖_F`; nonnegative for a selection map.
    pub norm_gap: f64,
    /// `max |UᵀX − ΣVᵀ − Uᵀ(I − SSᵀ)X(I − VVᵀ)|`.
    pub left_split: f64,
}

impl SelectionLiftReport {
    pub fn max_identity_residual(&self) -> f64 {
        [
            self.v_outside_row_space,
            self.filtered_agreement,
            self.span_agreement,
            self.selected_u_outside,
            self.left_split,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Lifts a selection through a restricted SVD exactly as one engine
/// iteration does (without deflating).
pub fn lift_selection(xk: &DMatrix<f64>, sel: &SelectionMap, d: usize) -> Result<(SvdFactors, SvdFactors)> {
    let tilde = svd_truncated(&sel.apply(xk), d)?;
    let f = restrict_svd(xk, &SubspaceBasis::new(tilde.v.clone())?)?;
    Ok((tilde, f))
}

pub fn selection_diagnostics(
    xk: &DMatrix<f64>,
    sel: &SelectionMap,
    block: &SvdFactors,
) -> Result<SelectionLiftReport> {
    let d = block.rank();
    let tilde = svd_truncated(&sel.apply(xk), d)?;
    let (_, row_space) = range_bases(xk, DEFAULT_RANK_TOL)?;

    let v_outside_row_space = max_abs(&(&block.v - projector(&row_space) * &block.v));
    let filtered_agreement = max_abs_diff(&sel.apply(&block.reconstruct()), &tilde.reconstruct());
    let span_agreement = max_abs_diff(&projector(&block.v), &projector(&tilde.v));
    let su = sel.apply(&block.u);
    let selected_u_outside = max_abs(&(&su - projector(&tilde.u) * &su));
    let selected_u_rank = numerical_rank(&su, DEFAULT_RANK_TOL)?;
    let norm_gap = block.sigma.norm() - tilde.sigma.norm();

    let n = xk.ncols();
    let sst_x = sel.expand(&sel.apply(xk));
    let off_selection = xk - sst_x;
    let right_comp = DMatrix::identity(n, n) - projector(&block.v);
    let mut sigma_vt = block.v.clone();
    for (mut col, s) in sigma_vt.column_iter_mut().zip(block.sigma.iter()) {
        col *= *s;
    }
    let lhs = block.u.transpose() * xk;
    let rhs = sigma_vt.transpose() + block.u.transpose() * off_selection * right_comp;
    let left_split = max_abs_diff(&lhs, &rhs);

    Ok(SelectionLiftReport {
        v_outside_row_space,
        filtered_agreement,
        span_agreement,
        selected_u_outside,
        selected_u_rank,
        norm_gap,
        left_split,
    })
}
