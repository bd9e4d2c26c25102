//! Samplers against the closed-form quenched law and the mean matrices.

mod common;

use std::collections::HashMap;

use common::random_env;
use mbpre_core::accum::replica_rng;
use mbpre_core::sim::{
    conditional_sampler, condition_mass, load_env_fixture, read_trajectory_jsonl, sample_offspring,
    sample_zn_direct, save_env_fixture, simulate_particles, Condition,
};
use mbpre_core::{Error, Matrix, QuenchedState};
use proptest::prelude::*;

/// Largest z-score of empirical cell frequencies against exact masses.
fn worst_z(counts: &HashMap<Vec<u64>, u64>, draws: u64, mass: impl Fn(&[u64]) -> f64, cells: &[Vec<u64>]) -> f64 {
    cells
        .iter()
        .map(|z| {
            let p = mass(z);
            let f = *counts.get(z).unwrap_or(&0) as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt().max(1e-12);
            (f - p).abs() / se
        })
        .fold(0.0, f64::max)
}

fn small_cells(k: usize, max_total: u64) -> Vec<Vec<u64>> {
    let mut cells = vec![vec![0; k]];
    cells.extend(mbpre_core::series::enumerate_support(k, max_total));
    cells
}

#[test]
fn direct_and_particle_samplers_follow_the_quenched_law() {
    let (v, env) = random_env(2, 3, 99);
    let st = QuenchedState::from_env(v, &env).unwrap();
    let draws = 100_000u64;
    let cells = small_cells(2, 3);
    let mass = |z: &[u64]| {
        if z.iter().all(|x| *x == 0) {
            1.0 - st.q(0)
        } else {
            st.local_prob_vector(0, z).unwrap()
        }
    };
    let (mut direct, mut particles) = (HashMap::new(), HashMap::new());
    for r in 0..draws {
        let z = sample_zn_direct(&st, 0, &mut replica_rng(1, 1, r)).unwrap();
        assert_eq!(z.generation, 3);
        *direct.entry(z.counts).or_insert(0u64) += 1;
        let t = simulate_particles(&env, &[1, 0], 3, &mut replica_rng(1, 2, r), u64::MAX).unwrap();
        *particles.entry(t.last().counts.clone()).or_insert(0u64) += 1;
    }
    let zd = worst_z(&direct, draws, mass, &cells);
    let zp = worst_z(&particles, draws, mass, &cells);
    assert!(zd < 4.5 && zp < 4.5, "direct {zd}, particles {zp}");
}

#[test]
fn offspring_means_match_the_mean_matrix() {
    let (_, env) = random_env(3, 1, 5);
    let law = &env[0];
    let draws = 200_000u64;
    for i in 0..3 {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for r in 0..draws {
            let x = sample_offspring(law, i, &mut replica_rng(2, i as u64, r)).unwrap();
            for j in 0..3 {
                sum[j] += x[j] as f64;
                sq[j] += (x[j] as f64).powi(2);
            }
        }
        for j in 0..3 {
            let mean = sum[j] / draws as f64;
            let var = sq[j] / draws as f64 - mean * mean;
            let want = *law.mean_matrix().get(i, j);
            assert!((mean - want).abs() < 5.0 * (var / draws as f64).sqrt(), "M[{i}][{j}]: {mean} vs {want}");
        }
    }
}

#[test]
fn particle_means_follow_matrix_products() {
    let (_, env) = random_env(2, 4, 17);
    let mut prod = Matrix::identity(2);
    for l in &env {
        prod = prod.mul(l.mean_matrix());
    }
    let draws = 100_000u64;
    let (mut s, mut s2) = (0.0, 0.0);
    for r in 0..draws {
        let t = simulate_particles(&env, &[0, 1], 4, &mut replica_rng(3, 0, r), u64::MAX).unwrap();
        let tot = t.last().total() as f64;
        s += tot;
        s2 += tot * tot;
    }
    let mean = s / draws as f64;
    let se = ((s2 / draws as f64 - mean * mean) / draws as f64).sqrt();
    let want = prod.row_sum(1);
    assert!((mean - want).abs() < 5.0 * se, "{mean} vs {want}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conditional_draws_respect_the_condition(n in 1usize..6, c in 1u64..5, seed in any::<u64>()) {
        let (v, env) = random_env(2, n, seed);
        let st = QuenchedState::from_env(v, &env).unwrap();
        for r in 0..50 {
            let z = conditional_sampler(&st, 1, &Condition::TotalBetween(c), &mut replica_rng(seed, 0, r)).unwrap();
            prop_assert!((1..=c).contains(&z.total()));
            prop_assert_eq!(z.generation, n);
        }
        let exact = conditional_sampler(&st, 0, &Condition::Exact(vec![1, 2]), &mut replica_rng(seed, 1, 0)).unwrap();
        prop_assert_eq!(exact.counts, vec![1, 2]);
        let m: f64 = condition_mass(&st, 0, &Condition::TotalBetween(c)).unwrap();
        let direct: f64 = (1..=c).map(|z| st.local_prob_total(0, z).unwrap()).sum();
        prop_assert!((m - direct).abs() <= 1e-15);
    }
}

#[test]
fn conditional_totals_follow_the_renormalized_masses() {
    let (v, env) = random_env(2, 4, 23);
    let st = QuenchedState::from_env(v, &env).unwrap();
    let c = 4u64;
    let masses: Vec<f64> = (1..=c).map(|z| st.local_prob_total(0, z).unwrap()).collect();
    let total: f64 = masses.iter().sum();
    let draws = 100_000u64;
    let mut counts = HashMap::new();
    for r in 0..draws {
        let z = conditional_sampler(&st, 0, &Condition::TotalBetween(c), &mut replica_rng(4, 0, r)).unwrap();
        *counts.entry(z.counts).or_insert(0u64) += 1;
    }
    let cells: Vec<Vec<u64>> = mbpre_core::series::enumerate_support(2, c);
    let zmax = worst_z(&counts, draws, |z| st.local_prob_vector(0, z).unwrap() / total, &cells);
    assert!(zmax < 4.5, "{zmax}");
}

#[test]
fn zero_mass_conditions_are_rejected() {
    // without shift every individual has at most one child, so two
    // particles have zero mass
    let law = mbpre_core::LinFracLaw::from_rows(vec![vec![0.3, 0.3]; 2], vec![0.0, 0.0]).unwrap();
    let st = QuenchedState::from_env(vec![1.0, 1.0], &[law]).unwrap();
    let res = conditional_sampler(&st, 0, &Condition::Exact(vec![1, 1]), &mut replica_rng(0, 0, 0));
    assert!(matches!(res, Err(Error::ZeroMassCondition)), "{res:?}");
    assert!(matches!(
        sample_zn_direct(&st, 5, &mut replica_rng(0, 0, 0)),
        Err(Error::IndexError { .. })
    ));
}

#[test]
fn fixtures_and_trajectories_round_trip() {
    let (_, env) = random_env(2, 5, 8);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("env.json");
    save_env_fixture(&p, &env).unwrap();
    assert_eq!(load_env_fixture(&p).unwrap(), env);

    let mut t = simulate_particles(&env, &[2, 1], 5, &mut replica_rng(6, 0, 0), u64::MAX).unwrap();
    t.seed = Some(6);
    let mut buf = Vec::new();
    t.write_jsonl(&mut buf).unwrap();
    assert_eq!(read_trajectory_jsonl(buf.as_slice()).unwrap(), t.states);

    // the explosion cap stops the trajectory early
    let big = simulate_particles(&env, &[50, 50], 5, &mut replica_rng(6, 0, 1), 10).unwrap();
    assert!(big.explosion_capped);
    assert_eq!(big.states.len(), 2);
    assert!(matches!(
        simulate_particles(&env, &[1, 0], 6, &mut replica_rng(0, 0, 0), 10),
        Err(Error::DomainError(_))
    ));
}
