//! The associated random walk: path functionals against brute force, the
//! law of the minimum against the Sparre Andersen formula, and the renewal
//! function against renewal-theory constants of the Gaussian walk.

mod common;

use common::model;
use mbpre_core::walk::{
    functionals, harmonicity, plus_expect, prob_min_nonneg_curve, renewal_function, renewal_function_ladder,
    uniform_grid, RenewalTable, WalkPath,
};
use mbpre_core::accum::Runner;
use mbpre_core::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn functionals_match_brute_force(xs in prop::collection::vec(-3i32..=3, 0..30), k in any::<prop::sample::Index>()) {
        // integer steps produce ties, which exercise the first-argmin rule
        let inc: Vec<f64> = xs.iter().map(|x| *x as f64).collect();
        let path = WalkPath::from_increments(&inc);
        let s = path.positions().to_vec();
        let n = inc.len();
        let k = k.index(n + 1);
        let f = functionals(&path, Some(k)).unwrap();
        let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(f.n, n);
        prop_assert_eq!(f.l_n, min);
        prop_assert_eq!(f.m_n, max);
        prop_assert_eq!(f.tau_n, s.iter().position(|x| *x == min).unwrap());
        let min_k = s[k..].iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(f.tau_kn, k + s[k..].iter().position(|x| *x == min_k).unwrap());
        prop_assert_eq!(f.l_kn, min_k - s[k]);
        prop_assert!(f.l_n <= 0.0 && f.m_n >= 0.0 && f.l_kn <= 0.0);
        prop_assert_eq!(path.increments(), inc);
        let out_of_range = matches!(functionals(&path, Some(n + 1)), Err(Error::IndexError { .. }));
        prop_assert!(out_of_range);
    }
}

/// For a symmetric continuous walk `P(S_1 >= 0, ..., S_n >= 0) = C(2n, n) / 4^n`.
#[test]
fn minimum_law_matches_sparre_andersen() {
    let runner = Runner::new(0).unwrap();
    let curve = prob_min_nonneg_curve(&runner, &model(0.0, 1.0), 20, 400_000, 11).unwrap();
    let mut exact = 1.0f64;
    for (n, e) in curve.iter().enumerate() {
        if n > 0 {
            exact *= (2 * n - 1) as f64 / (2 * n) as f64;
        }
        assert!((e.value - exact).abs() <= 4.5 * e.stderr + 1e-12, "n={n}: {e:?} vs {exact}");
    }
    assert!(curve.windows(2).all(|w| w[1].value <= w[0].value));
}

/// Standard Gaussian steps: the descending ladder height has mean
/// `1/sqrt(2)` and the renewal function behaves like
/// `sqrt(2) (x + c)` with `c = -zeta(1/2) / sqrt(2 pi)`.
#[test]
fn ladder_renewal_matches_gaussian_renewal_constants() {
    let runner = Runner::new(0).unwrap();
    let m = model(0.0, 1.0);
    let grid = uniform_grid(12.0, 0.5);
    let t = renewal_function_ladder(&runner, &m, &grid, 10_000, 200_000, 5).unwrap();
    let c = 1.460_354_508_809_586_8 / (2.0 * std::f64::consts::PI).sqrt();
    assert_eq!(t.values[0], 1.0);
    assert!(t.is_monotone());
    assert!((t.slope - 2f64.sqrt()).abs() < 0.01 * 2f64.sqrt(), "slope {}", t.slope);
    assert!(t.truncated_fraction > 0.0 && t.truncated_fraction < 0.01);
    for x in [8.0, 10.0, 12.0] {
        let j = grid.iter().position(|g| *g == x).unwrap();
        let want = 2f64.sqrt() * (x + c);
        assert!(
            (t.values[j] - want).abs() < 0.01 * want + 4.0 * t.stderr[j],
            "V({x}) = {} +- {} vs {want}",
            t.values[j],
            t.stderr[j]
        );
    }
    // V is harmonic for the walk killed below zero
    for p in harmonicity(&t, 0.0, 1.0, &[0.0, 1.0, 3.0, 6.0, 9.0]) {
        assert!(p.rel_residual < 5e-3, "{p:?}");
    }
    // and E[V(S_n); L_n >= 0] = V(0) = 1
    let e = plus_expect(&runner, &m, 30, 100_000, 6, Some(&t), |_| 1.0).unwrap();
    assert!((e.value - 1.0).abs() < 4.0 * e.stderr + 0.01, "{e:?}");
}

/// Near the origin the visit-count estimator is unaffected by truncation
/// and agrees with the ladder estimator.
#[test]
fn renewal_estimators_agree_near_the_origin() {
    let runner = Runner::new(0).unwrap();
    let m = model(0.0, 0.5);
    let grid = uniform_grid(1.0, 0.25);
    let visit = renewal_function(&runner, &m, &grid, 100_000, 100_000, 7).unwrap();
    let ladder = renewal_function_ladder(&runner, &m, &grid, 10_000, 100_000, 8).unwrap();
    assert_eq!(visit.values[0], 1.0);
    for j in 1..grid.len() {
        let d = (visit.values[j] - ladder.values[j]).abs();
        let se = visit.stderr[j].hypot(ladder.stderr[j]);
        assert!(d < 5.0 * se, "x={}: {} vs {}", grid[j], visit.values[j], ladder.values[j]);
    }
}

#[test]
fn renewal_tables_round_trip_and_validate_grids() {
    let runner = Runner::new(1).unwrap();
    let m = model(0.0, 1.0);
    let t = renewal_function_ladder(&runner, &m, &uniform_grid(2.0, 0.5), 100, 500, 1).unwrap();
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let back = RenewalTable::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.grid, t.grid);
    assert_eq!(back.values, t.values);
    assert_eq!(back.stderr, t.stderr);
    assert_eq!(back.eval(-0.1), 0.0);
    assert!(matches!(
        renewal_function_ladder(&runner, &m, &[0.5, 1.0], 100, 10, 1),
        Err(Error::DomainError(_))
    ));
    assert!(matches!(
        renewal_function(&runner, &m, &[0.0, 1.0, 1.0], 100, 10, 1),
        Err(Error::DomainError(_))
    ));
    assert!(matches!(
        plus_expect(&runner, &m, 3, 10, 1, None, |_| 1.0),
        Err(Error::MissingRenewalTable)
    ));
}
