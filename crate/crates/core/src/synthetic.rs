//! Planted-signal benchmark generator.
//!
//! Builds `K` rank-`d` signals `Y_k = U_kΣ_kV_kᵀ` that are mutually orthogonal
//! on both sides (`Y_iᵀY_j = 0`, `Y_iY_jᵀ = 0`), each supported on `L`
//! variables, with `(Σ_k)_ii = 0.6^(k−1)·0.9^(i−1)`, and adds Gaussian noise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

const MAX_RESAMPLES: usize = 16;
const DEGENERACY_TOL: f64 = 1e-8;

/// Noise level used by the two-signal biplot scenarios.
pub const BIPLOT_NOISE_SIGMA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    AllVariables,
    /// Only rows outside every signal's support receive noise.
    OffSupport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub disjoint_supports: bool,
    #[serde(default = "default_target")]
    pub noise_target: NoiseTarget,
}

fn default_true() -> bool {
    true
}

fn default_target() -> NoiseTarget {
    NoiseTarget::AllVariables
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiplotMode {
    NoNoise,
    NoiseOffSupport,
    NoiseAll,
}

impl SyntheticSpec {
    /// `N = 100`, `K = 8` defaults with the remaining parameters supplied.
    pub fn new(p: usize, l: usize, d: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            n: 100,
            p,
            l,
            k: 8,
            d,
            noise_sigma,
            seed,
            disjoint_supports: true,
            noise_target: NoiseTarget::AllVariables,
        }
    }

    /// Two rank-2 signals on 64 of 5000 variables, 32 samples.
    pub fn biplot(mode: BiplotMode, seed: u64) -> Self {
        let (noise_sigma, noise_target) = match mode {
            BiplotMode::NoNoise => (0.0, NoiseTarget::AllVariables),
            BiplotMode::NoiseOffSupport => (BIPLOT_NOISE_SIGMA, NoiseTarget::OffSupport),
            BiplotMode::NoiseAll => (BIPLOT_NOISE_SIGMA, NoiseTarget::AllVariables),
        };
        Self {
            n: 32,
            p: 5000,
            l: 64,
            k: 2,
            d: 2,
            noise_sigma,
            seed,
            disjoint_supports: true,
            noise_target,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.n == 0 || self.p == 0 || self.k == 0 || self.d == 0 || self.l == 0 {
            return bad("N, P, L, K and d must all be positive".into());
        }
        if self.k * self.d > self.n.min(self.p) {
            return bad(format!(
                "K·d = {} exceeds min(N, P) = {}",
                self.k * self.d,
                self.n.min(self.p)
            ));
        }
        if self.l < self.d {
            return bad(format!("L = {} is smaller than d = {}", self.l, self.d));
        }
        if self.l > self.p {
            return bad(format!("L = {} exceeds P = {}", self.l, self.p));
        }
        if self.disjoint_supports && self.k * self.l > self.p {
            return bad(format!(
                "K·L = {} exceeds P = {} with disjoint supports",
                self.k * self.l,
                self.p
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise sigma must be finite and nonnegative, got {}", self.noise_sigma));
        }
        Ok(())
    }

    /// `(Σ_k)_ii` for 1-based `k` and `i`.
    pub fn signal_strength(k: usize, i: usize) -> f64 {
        0.6f64.powi(k as i32 - 1) * 0.9f64.powi(i as i32 - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSignal {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
    /// Sorted row indices where `Y_k` may be nonzero.
    pub support: Vec<usize>,
}

impl PlantedSignal {
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (mut col, s) in us.column_iter_mut().zip(self.sigma.iter()) {
            col *= *s;
        }
        us * self.v.transpose()
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }
}

/// What a matching evaluation needs to know about one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTarget {
    pub y: DMatrix<f64>,
    pub support: Vec<usize>,
    pub rank: usize,
}

impl SignalTarget {
    pub fn strength(&self) -> f64 {
        self.y.norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    pub signals: Vec<PlantedSignal>,
    pub x_clean: DMatrix<f64>,
    pub x_noisy: DMatrix<f64>,
}

impl GroundTruth {
    pub fn targets(&self) -> Vec<SignalTarget> {
        self.signals
            .iter()
            .map(|s| SignalTarget {
                y: s.matrix(),
                support: s.support.clone(),
                rank: s.rank(),
            })
            .collect()
    }

    pub fn stacked_u(&self) -> DMatrix<f64> {
        let cols: Vec<_> = self.signals.iter().flat_map(|s| s.u.column_iter()).collect();
        DMatrix::from_columns(&cols)
    }

    pub fn stacked_v(&self) -> DMatrix<f64> {
        let cols: Vec<_> = self.signals.iter().flat_map(|s| s.v.column_iter()).collect();
        DMatrix::from_columns(&cols)
    }
}

// substream tags
const SUPPORT_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
const VARIABLE_STREAM: u64 = 3;
const NOISE_STREAM: u64 = 4;

/// Removes the span of the orthonormal `basis` from `g` (two passes).
fn project_out(g: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(g);
            g.axpy(-c, q, 1.0);
        }
    }
}

/// New unit vector of length `len` orthogonal to `basis`.
fn fresh_direction(rng: &mut Rng, len: usize, basis: &[DVector<f64>]) -> Result<DVector<f64>> {
    for _ in 0..MAX_RESAMPLES {
        let mut g = rng.gaussian_vector(len);
        let before = g.norm();
        project_out(&mut g, basis);
        let after = g.norm();
        if after > DEGENERACY_TOL * before {
            return Ok(g / after);
        }
    }
    Err(Error::Degenerate(MAX_RESAMPLES))
}

/// Orthonormal basis of the restrictions of `cols` to `rows` (modified
/// Gram–Schmidt, dependent vectors dropped).
fn restricted_basis(cols: &[DVector<f64>], rows: &[usize]) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for c in cols {
        let mut r = DVector::from_iterator(rows.len(), rows.iter().map(|&i| c[i]));
        let before = r.norm();
        if before == 0.0 {
            continue;
        }
        project_out(&mut r, &basis);
        let after = r.norm();
        if after > 1e-10 * before.max(1.0) {
            basis.push(r / after);
        }
    }
    basis
}

pub fn generate(spec: &SyntheticSpec) -> Result<GroundTruth> {
    generate_with_noise_scale(spec, None)
}

/// Like [`generate`], but entry `(i, j)` of the noise is drawn with standard
/// deviation `noise_sigma·scale[(i, j)]`.
pub fn generate_with_noise_scale(spec: &SyntheticSpec, scale: Option<&DMatrix<f64>>) -> Result<GroundTruth> {
    spec.validate()?;
    let (p, n) = (spec.p, spec.n);
    if let Some(s) = scale {
        if s.shape() != (p, n) || s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InfeasibleSpec(
                "noise scale must be a P×N matrix of finite nonnegative entries".into(),
            ));
        }
    }
    let root = Rng::new(spec.seed);

    let mut support_rng = root.substream(SUPPORT_STREAM);
    let supports: Vec<Vec<usize>> = if spec.disjoint_supports {
        let all = support_rng.sample_indices(p, spec.k * spec.l);
        all.chunks(spec.l)
            .map(|c| {
                let mut s = c.to_vec();
                s.sort_unstable();
                s
            })
            .collect()
    } else {
        (0..spec.k)
            .map(|_| {
                let mut s = support_rng.sample_indices(p, spec.l);
                s.sort_unstable();
                s
            })
            .collect()
    };

    let mut sample_rng = root.substream(SAMPLE_STREAM);
    let mut v_cols: Vec<DVector<f64>> = Vec::with_capacity(spec.k * spec.d);
    for _ in 0..spec.k * spec.d {
        let v = fresh_direction(&mut sample_rng, n, &v_cols)?;
        v_cols.push(v);
    }

    let mut var_rng = root.substream(VARIABLE_STREAM);
    let mut u_cols: Vec<DVector<f64>> = Vec::with_capacity(spec.k * spec.d);
    for support in &supports {
        for _ in 0..spec.d {
            let basis = restricted_basis(&u_cols, support);
            let local = fresh_direction(&mut var_rng, support.len(), &basis)?;
            let mut u = DVector::zeros(p);
            for (r, &i) in support.iter().enumerate() {
                u[i] = local[r];
            }
            u_cols.push(u);
        }
    }

    let mut signals = Vec::with_capacity(spec.k);
    let mut x_clean = DMatrix::zeros(p, n);
    for (k, support) in supports.into_iter().enumerate() {
        let range = k * spec.d..(k + 1) * spec.d;
        let signal = PlantedSignal {
            u: DMatrix::from_columns(&u_cols[range.clone()]),
            sigma: DVector::from_fn(spec.d, |i, _| SyntheticSpec::signal_strength(k + 1, i + 1)),
            v: DMatrix::from_columns(&v_cols[range]),
            support,
        };
        x_clean += signal.matrix();
        signals.push(signal);
    }

    // drawn for every entry regardless of masking so modes share the pattern
    let noise = root.substream(NOISE_STREAM).gaussian_matrix(p, n);
    let mut x_noisy = x_clean.clone();
    if spec.noise_sigma > 0.0 {
        let mut on_support = vec![false; p];
        if spec.noise_target == NoiseTarget::OffSupport {
            for s in &signals {
                for &i in &s.support {
                    on_support[i] = true;
                }
            }
        }
        for j in 0..n {
            for i in 0..p {
                if on_support[i] {
                    continue;
                }
                let sd = spec.noise_sigma * scale.map_or(1.0, |s| s[(i, j)]);
                x_noisy[(i, j)] += sd * noise[(i, j)];
            }
        }
    }

    Ok(GroundTruth {
        spec: spec.clone(),
        signals,
        x_clean,
        x_noisy,
    })
}

/// Two-signal biplot configuration with the given noise mode.
pub fn biplot_scenario(mode: BiplotMode, seed: u64) -> Result<GroundTruth> {
    generate(&SyntheticSpec::biplot(mode, seed))
}
