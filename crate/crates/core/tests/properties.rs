//! Property tests over seeded random inputs.

use nalgebra::DMatrix;
use proptest::prelude::*;

use smssvd_core::engine::{lift_selection, selection_diagnostics, smssvd_matrix};
use smssvd_core::evaluation::{greedy_match, RankOne};
use smssvd_core::io::{format_table, parse_table};
use smssvd_core::matrix::{numerical_rank, orthonormality_defect};
use smssvd_core::restricted::restriction_diagnostics;
use smssvd_core::selection::{projection_score, row_variances, variance_filter, SelectionMap};
use smssvd_core::spc::{spc, SpcConfig};
use smssvd_core::synthetic::{generate, NoiseTarget, SyntheticSpec};
use smssvd_core::{restrict_svd, svd_truncated, EngineConfig, Rng, SubspaceBasis};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

/// Random matrix of rank at most `r` (full when `r ≥ min(p, n)`).
fn low_rank(rng: &mut Rng, p: usize, n: usize, r: usize) -> DMatrix<f64> {
    let r = r.min(p).min(n);
    rng.gaussian_matrix(p, r) * rng.gaussian_matrix(r, n)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn tsv_round_trip_is_bit_exact(vals in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40), cols in 1usize..6) {
        let rows = vals.len().div_ceil(cols);
        let mut padded = vals.clone();
        padded.resize(rows * cols, 0.0);
        let m = DMatrix::from_row_slice(rows, cols, &padded);
        let r: Vec<String> = (0..rows).map(|i| format!("r{i}")).collect();
        let c: Vec<String> = (0..cols).map(|j| format!("c{j}")).collect();
        let t = parse_table(&format_table("id", &r, &c, &m)).unwrap();
        for (a, b) in t.values.iter().zip(m.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn variance_filter_keeps_top_rows(seed in any::<u64>(), p in 2usize..60, n in 2usize..12, f in 0.01f64..1.0) {
        let x = Rng::new(seed).gaussian_matrix(p, n);
        let sel = variance_filter(&x, f).unwrap();
        prop_assert_eq!(sel.len(), ((f * p as f64) - 1e-9).ceil() as usize);
        let var = row_variances(&x);
        let kept = sel.kept_indices();
        let min_kept = kept.iter().map(|&i| var[i]).fold(f64::INFINITY, f64::min);
        let max_dropped = (0..p).filter(|i| !kept.contains(i)).map(|i| var[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_kept >= max_dropped);
        let s = sel.apply(&DMatrix::identity(p, p));
        prop_assert!(orthonormality_defect(&s.transpose()) == 0.0);
    }

    #[test]
    fn restricted_svd_identities(seed in any::<u64>(), p in 2usize..30, n in 2usize..20, r in 1usize..20, d in 1usize..10) {
        let mut rng = Rng::new(seed);
        let x = low_rank(&mut rng, p, n, r);
        let rank = numerical_rank(&x, 1e-10).unwrap();
        let d = d.min(rank);
        // Π inside the row space satisfies Π ⊥ ker X
        let b = SubspaceBasis::from_spanning_set(&(x.transpose() * rng.gaussian_matrix(p, d))).unwrap();
        let f = restrict_svd(&x, &b).unwrap();
        let rep = restriction_diagnostics(&x, &f).unwrap();
        prop_assert!(rep.max_identity_residual() < 1e-8 * x.norm(), "{:?}", rep);
        prop_assert_eq!(rep.rank_defect, 0);
        let span = &f.v * f.v.transpose() - b.basis() * b.basis().transpose();
        prop_assert!(span.abs().max() < 1e-9);
    }

    #[test]
    fn selection_lift_identities(seed in any::<u64>(), p in 3usize..40, n in 2usize..15, l in 1usize..40, d in 1usize..8) {
        let mut rng = Rng::new(seed);
        let x = rng.gaussian_matrix(p, n);
        let l = l.min(p);
        let kept = {
            let mut k = rng.sample_indices(p, l);
            k.sort_unstable();
            k
        };
        let sel = SelectionMap::new(kept, p).unwrap();
        let d = d.min(l).min(n);
        let (_, f) = lift_selection(&x, &sel, d).unwrap();
        let rep = selection_diagnostics(&x, &sel, &f).unwrap();
        prop_assert!(rep.max_identity_residual() < 1e-8 * x.norm(), "{:?}", rep);
        prop_assert!(rep.norm_gap >= -1e-10);
        prop_assert_eq!(rep.selected_u_rank, d);
    }

    #[test]
    fn tau_is_monotone_in_d(seed in any::<u64>(), l in 2usize..20, n in 2usize..12) {
        let x = Rng::new(seed).gaussian_matrix(l, n);
        let sel = SelectionMap::full(l);
        let mut prev = 0.0;
        for d in 1..=l.min(n) {
            let rec = projection_score(&x, &sel, d, &mut Rng::new(seed ^ 1), 4).unwrap();
            prop_assert!(rec.tau_observed > 0.0 && rec.tau_observed <= 1.0 + 1e-12);
            prop_assert!(rec.tau_observed >= prev - 1e-12);
            prev = rec.tau_observed;
        }
    }

    #[test]
    fn greedy_match_ignores_component_order(seed in 0u64..1000, shift in 0usize..4) {
        let g = generate(&SyntheticSpec {
            n: 10, p: 40, l: 6, k: 2, d: 2, noise_sigma: 0.05, seed,
            disjoint_supports: true, noise_target: NoiseTarget::AllVariables,
        }).unwrap();
        let f = svd_truncated(&g.x_noisy, 4).unwrap();
        let comps: Vec<RankOne> = (0..4).map(|c| RankOne {
            u: f.u.column(c).into_owned(), s: f.sigma[c], v: f.v.column(c).into_owned(),
        }).collect();
        let mut rotated = comps.clone();
        rotated.rotate_left(shift);
        let a = greedy_match(&comps, &g.targets()).unwrap();
        let b = greedy_match(&rotated, &g.targets()).unwrap();
        prop_assert!((a.total_error() - b.total_error()).abs() < 1e-12);
    }

    #[test]
    fn spc_respects_l1_bound(seed in any::<u64>(), p in 4usize..40, n in 3usize..12, frac in 0.0f64..1.0) {
        let x = Rng::new(seed).gaussian_matrix(p, n);
        let c = 1.0 + frac * ((p as f64).sqrt() - 1.0);
        let f = spc(&x, &SpcConfig::new(c, 2)).unwrap();
        for u in f.u.column_iter() {
            prop_assert!(u.lp_norm(1) <= c * (1.0 + 1e-9), "{} > {c}", u.lp_norm(1));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn decompositions_are_orthonormal_and_exhaustive(seed in any::<u64>(), p in 5usize..40, n in 3usize..12, r in 1usize..12) {
        let mut rng = Rng::new(seed);
        let x = low_rank(&mut rng, p, n, r);
        let cfg = EngineConfig { min_score: f64::NEG_INFINITY, max_components: 64, ..EngineConfig::default() };
        let dec = smssvd_matrix(&x, &cfg, &Rng::new(seed)).unwrap();
        prop_assert!(dec.orthogonality_defect() < 1e-8);
        // run to exhaustion the decomposition reproduces X's rank
        prop_assert_eq!(dec.total_d(), numerical_rank(&x, 1e-10).unwrap());
        let again = smssvd_matrix(&x, &cfg, &Rng::new(seed)).unwrap();
        prop_assert_eq!(dec, again);
    }
}
