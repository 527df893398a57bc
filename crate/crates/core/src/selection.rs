//! Variance-filtered variable subsets and projection-score optimization.
//!
//! The projection score of a subset `S` and dimension `d` compares how much of
//! the energy of `SᵀX` its leading `d` singular values capture against the
//! same statistic for i.i.d. Gaussian matrices of the same shape:
//!
//! ```text
//! τ_d(A)     = sqrt( Σ_{i≤d} σ_i(A)² / Σ_i σ_i(A)² )
//! score(S,d) = τ_d(SᵀX) − E[τ_d(G)],   G ~ N(0,1)^{L×N}
//! ```
//!
//! `τ_d` is scale invariant, so the null needs unit variance only.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{ensure_finite, squared_singular_values};
use crate::rng::Rng;

pub const DEFAULT_NULL_SAMPLES: usize = 20;

/// Sorted subset of variable (row) indices; represents a column-selection
/// matrix `S` with `SᵀS = I`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMap {
    kept: Vec<usize>,
    n_variables: usize,
}

impl SelectionMap {
    pub fn new(kept: Vec<usize>, n_variables: usize) -> Result<Self> {
        if kept.is_empty() {
            return Err(Error::InvalidArgument("selection must keep at least one variable".into()));
        }
        if kept.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("selection indices must be strictly increasing".into()));
        }
        if kept.last().is_some_and(|&i| i >= n_variables) {
            return Err(Error::InvalidArgument(format!(
                "selection index out of range for {n_variables} variables"
            )));
        }
        Ok(Self { kept, n_variables })
    }

    pub fn full(n_variables: usize) -> Self {
        Self {
            kept: (0..n_variables).collect(),
            n_variables,
        }
    }

    pub fn kept_indices(&self) -> &[usize] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn n_variables(&self) -> usize {
        self.n_variables
    }

    pub fn is_full(&self) -> bool {
        self.kept.len() == self.n_variables
    }

    /// `SᵀX`: the kept rows of `x`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n_variables, "selection/matrix size mismatch");
        x.select_rows(self.kept.iter())
    }

    /// `S·A`: scatters the rows of an `L × k` matrix back into `P × k`, zero
    /// elsewhere.
    pub fn expand(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(a.nrows(), self.kept.len());
        let mut out = DMatrix::zeros(self.n_variables, a.ncols());
        for (r, &i) in self.kept.iter().enumerate() {
            out.row_mut(i).copy_from(&a.row(r));
        }
        out
    }
}

/// Outcome of scoring one `(subset, dimension)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionScoreRecord {
    /// Fraction of variables kept by the variance filter.
    pub threshold_quantile: f64,
    /// Number of variables kept.
    pub n_kept: usize,
    pub d: usize,
    pub tau_observed: f64,
    pub tau_null_mean: f64,
    /// Sample standard deviation of the null statistic (0 for one draw).
    pub tau_null_std: f64,
    pub score: f64,
    pub null_samples: usize,
}

/// Per-row sample variance with denominator `N − 1`.
pub fn row_variances(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.ncols() as f64;
    x.row_iter()
        .map(|row| {
            let mean = row.sum() / n;
            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        })
        .collect()
}

/// Number of variables kept for a fraction of `p`.
pub fn kept_count(p: usize, keep_fraction: f64) -> usize {
    // slack absorbs representation error in fractions like 0.1·100
    ((keep_fraction * p as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Keeps the `ceil(keep_fraction·P)` rows of largest variance (lower row
/// index first on ties).
pub fn variance_filter(x: &DMatrix<f64>, keep_fraction: f64) -> Result<SelectionMap> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    if x.ncols() < 2 {
        return Err(Error::InvalidArgument("variance needs at least two samples".into()));
    }
    ensure_finite(x)?;
    let p = x.nrows();
    let keep = kept_count(p, keep_fraction).min(p);
    if keep == 0 {
        return Err(Error::InvalidArgument(format!(
            "keep fraction {keep_fraction} keeps no variables out of {p}"
        )));
    }
    let var = row_variances(x);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    SelectionMap::new(kept, p)
}

/// `τ_d` for every `d = 1..=len` from squared singular values.
fn tau_curve(squared: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(squared.len());
    let mut acc = 0.0;
    for s in squared {
        acc += s;
        cum.push(acc);
    }
    let total = acc;
    cum.iter().map(|c| (c / total).sqrt()).collect()
}

/// How the reference distribution of `τ_d` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullModel {
    /// Every kept variable's values are shuffled independently across
    /// samples. Keeps each variable's distribution (and hence the variance
    /// filter's choice) while destroying correlation between variables.
    Permutation,
    /// i.i.d. `N(0, 1)` entries of the filtered shape.
    #[default]
    Gaussian,
}

/// Null reference for one scoring call.
#[derive(Debug, Clone, Copy)]
pub struct NullSpec<'a> {
    pub model: NullModel,
    pub samples: usize,
    /// Orthonormal `N × c` basis of sample directions already removed by
    /// deflation. Observed rows are orthogonal to it, so null rows are
    /// projected onto its complement as well.
    pub consumed: Option<&'a DMatrix<f64>>,
}

impl NullSpec<'_> {
    fn consumed_dims(&self) -> usize {
        self.consumed.map_or(0, |c| c.ncols())
    }
}

struct NullCurve {
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn null_draw(filtered: &DMatrix<f64>, null: &NullSpec<'_>, rng: &mut Rng) -> DMatrix<f64> {
    let (rows, cols) = filtered.shape();
    match null.model {
        NullModel::Gaussian => {
            // rotation invariance: a projected N-column Gaussian has the
            // spectrum of an (N − c)-column one
            rng.gaussian_matrix(rows, cols - null.consumed_dims())
        }
        NullModel::Permutation => {
            let mut g = DMatrix::zeros(rows, cols);
            let mut perm: Vec<usize> = (0..cols).collect();
            for i in 0..rows {
                for j in (1..cols).rev() {
                    perm.swap(j, rng.below(j + 1));
                }
                for (j, &src) in perm.iter().enumerate() {
                    g[(i, j)] = filtered[(i, src)];
                }
            }
            match null.consumed {
                Some(c) if c.ncols() > 0 => {
                    let coeffs = &g * c;
                    g - coeffs * c.transpose()
                }
                _ => g,
            }
        }
    }
}

fn null_curve(filtered: &DMatrix<f64>, d_hi: usize, null: &NullSpec<'_>, rng: &mut Rng) -> NullCurve {
    let samples = null.samples;
    let mut sum = vec![0.0; d_hi];
    let mut sum_sq = vec![0.0; d_hi];
    for _ in 0..samples {
        let g = null_draw(filtered, null, rng);
        let squared = squared_singular_values(&g);
        let curve = if squared.iter().all(|&s| s == 0.0) {
            vec![1.0; d_hi]
        } else {
            tau_curve(&squared)
        };
        for d in 0..d_hi {
            let t = curve[d.min(curve.len() - 1)];
            sum[d] += t;
            sum_sq[d] += t * t;
        }
    }
    let n = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = if samples > 1 {
        sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| ((sq - n * m * m) / (n - 1.0)).max(0.0).sqrt())
            .collect()
    } else {
        vec![0.0; d_hi]
    };
    NullCurve { mean, std }
}

/// Score records for `d = 1..=d_hi` on an already filtered matrix.
pub(crate) fn score_curve(
    filtered: &DMatrix<f64>,
    keep_fraction: f64,
    d_hi: usize,
    null: &NullSpec<'_>,
    rng: &mut Rng,
) -> Result<Vec<ProjectionScoreRecord>> {
    let squared = squared_singular_values(filtered);
    if squared.iter().all(|&s| s == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let observed = tau_curve(&squared);
    let curve = null_curve(filtered, d_hi, null, rng);
    Ok((0..d_hi)
        .map(|i| {
            let tau_observed = observed[i.min(observed.len() - 1)];
            ProjectionScoreRecord {
                threshold_quantile: keep_fraction,
                n_kept: filtered.nrows(),
                d: i + 1,
                tau_observed,
                tau_null_mean: curve.mean[i],
                tau_null_std: curve.std[i],
                score: tau_observed - curve.mean[i],
                null_samples: null.samples,
            }
        })
        .collect())
}

/// Projection score of the subset `sel` at dimension `d`.
pub fn projection_score(
    x: &DMatrix<f64>,
    sel: &SelectionMap,
    d: usize,
    rng: &mut Rng,
    null_samples: usize,
) -> Result<ProjectionScoreRecord> {
    projection_score_with(x, sel, d, rng, null_samples, NullModel::default())
}

pub fn projection_score_with(
    x: &DMatrix<f64>,
    sel: &SelectionMap,
    d: usize,
    rng: &mut Rng,
    null_samples: usize,
    model: NullModel,
) -> Result<ProjectionScoreRecord> {
    let l = sel.len();
    if d == 0 || d > l.min(x.ncols()) {
        return Err(Error::InvalidArgument(format!(
            "dimension {d} outside 1..={}",
            l.min(x.ncols())
        )));
    }
    if null_samples == 0 {
        return Err(Error::InvalidArgument("need at least one null sample".into()));
    }
    ensure_finite(x)?;
    let filtered = sel.apply(x);
    let fraction = l as f64 / sel.n_variables() as f64;
    let null = NullSpec {
        model,
        samples: null_samples,
        consumed: None,
    };
    let mut curve = score_curve(&filtered, fraction, d, &null, rng)?;
    Ok(curve.pop().expect("nonempty curve"))
}

/// Geometric keep-fraction grid `1, 1/2, 1/4, …` down to the smallest
/// fraction that still keeps at least `max(10, d_max + 1)` variables.
pub fn default_grid(p: usize, d_max: usize) -> Vec<f64> {
    let floor = 10.max(d_max + 1);
    let mut grid = vec![1.0];
    let mut f = 0.5;
    while kept_count(p, f) >= floor {
        grid.push(f);
        f *= 0.5;
    }
    grid
}

/// Search space for [`optimize_selection_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSearch {
    pub grid: Vec<f64>,
    pub d_max: usize,
    pub null_samples: usize,
    pub null_model: NullModel,
    /// Orthonormal basis of sample directions already removed by deflation;
    /// caps `d` at `N − c` and constrains the null the same way.
    pub consumed: Option<DMatrix<f64>>,
    /// Evaluate only this dimension (clamped to what is feasible).
    pub fixed_dimension: Option<usize>,
}

/// Winning subset, dimension and the record that won.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionChoice {
    pub selection: SelectionMap,
    pub d: usize,
    pub record: ProjectionScoreRecord,
}

/// Joint argmax of the projection score over keep fractions and dimensions
/// `1..=min(d_max, L, N)`. Ties go to the larger subset, then the smaller
/// dimension.
pub fn optimize_selection(
    x: &DMatrix<f64>,
    grid: &[f64],
    d_max: usize,
    rng: &Rng,
    null_samples: usize,
) -> Result<SelectionChoice> {
    optimize_selection_with(
        x,
        &SelectionSearch {
            grid: grid.to_vec(),
            d_max,
            null_samples,
            null_model: NullModel::default(),
            consumed: None,
            fixed_dimension: None,
        },
        rng,
    )
}

pub fn optimize_selection_with(
    x: &DMatrix<f64>,
    search: &SelectionSearch,
    rng: &Rng,
) -> Result<SelectionChoice> {
    if search.grid.is_empty() {
        return Err(Error::InvalidArgument("keep-fraction grid is empty".into()));
    }
    if search.d_max == 0 {
        return Err(Error::InvalidArgument("d_max must be at least 1".into()));
    }
    if search.null_samples == 0 {
        return Err(Error::InvalidArgument("need at least one null sample".into()));
    }
    let n = x.ncols();
    let null = NullSpec {
        model: search.null_model,
        samples: search.null_samples,
        consumed: search.consumed.as_ref(),
    };
    let null_cols = n.saturating_sub(null.consumed_dims());
    let mut best: Option<SelectionChoice> = None;
    for (fi, &fraction) in search.grid.iter().enumerate() {
        let sel = variance_filter(x, fraction)?;
        let l = sel.len();
        let d_hi = search.d_max.min(l).min(null_cols);
        if d_hi == 0 {
            continue;
        }
        let d_lo = match search.fixed_dimension {
            Some(fixed) => fixed.clamp(1, d_hi),
            None => 1,
        };
        let d_hi = if search.fixed_dimension.is_some() { d_lo } else { d_hi };
        let filtered = sel.apply(x);
        let mut sub = rng.substream(fi as u64);
        let curve = match score_curve(&filtered, fraction, d_hi, &null, &mut sub) {
            Ok(c) => c,
            Err(Error::ZeroMatrix) => continue,
            Err(e) => return Err(e),
        };
        for rec in curve.into_iter().skip(d_lo - 1) {
            let better = match &best {
                None => true,
                Some(b) => {
                    rec.score > b.record.score
                        || (rec.score == b.record.score
                            && (l > b.selection.len() || (l == b.selection.len() && rec.d < b.d)))
                }
            };
            if better {
                best = Some(SelectionChoice {
                    selection: sel.clone(),
                    d: rec.d,
                    record: rec,
                });
            }
        }
    }
    best.ok_or(Error::NoFeasibleSelection)
}
