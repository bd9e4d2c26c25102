//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use mbpre_core::env::{EnvModel, RhoLaw, ShapeLaw, ShiftFamily, ShiftLaw};
use mbpre_core::LinFracLaw;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two types, `v = (1, 2)`, Gaussian `ln rho` with the given mean.
pub fn model(mu: f64, sigma: f64) -> EnvModel {
    EnvModel {
        k: 2,
        v: vec![1.0, 2.0],
        alpha: 0.3,
        rho_law: RhoLaw {
            family: "gaussian_logrho".into(),
            mu,
            sigma,
        },
        shape_law: ShapeLaw { lo: 0.9, hi: 1.15 },
        w_law: ShiftLaw {
            dist: ShiftFamily::Uniform { lo: 0.5, hi: 0.7 },
            scale_by_v: true,
            scale_by_rho: true,
            shared: true,
        },
        seed: 7,
    }
}

/// Strongly supercritical model.
pub fn strong_model() -> EnvModel {
    model(0.8, 0.5)
}

/// Intermediately supercritical model.
pub fn interm_model() -> EnvModel {
    model(0.25, 0.5)
}

/// The deterministic environment with every letter equal to `M = ones`,
/// `w = (1, 1)`.
pub fn l0_model() -> EnvModel {
    EnvModel {
        k: 2,
        v: vec![1.0, 1.0],
        alpha: 0.5,
        rho_law: RhoLaw {
            family: "gaussian_logrho".into(),
            mu: std::f64::consts::LN_2,
            sigma: 0.0,
        },
        shape_law: ShapeLaw { lo: 1.0, hi: 1.0 },
        w_law: ShiftLaw {
            dist: ShiftFamily::Constant { value: 1.0 },
            scale_by_v: false,
            scale_by_rho: false,
            shared: false,
        },
        seed: 1,
    }
}

pub fn l0_law() -> LinFracLaw<f64> {
    LinFracLaw::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 1.0]).unwrap()
}

/// A random letter with left eigenvector `v`, built independently of the
/// environment models: `M = A diag(c)` with `c_j = rho v_j / (v A)_j`,
/// redrawn until it is a genuine offspring law.
pub fn random_letter(v: &[f64], rng: &mut ChaCha8Rng) -> LinFracLaw<f64> {
    let k = v.len();
    loop {
        let a: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..k).map(|_| rng.random_range(0.2..2.0)).collect())
            .collect();
        let rho: f64 = rng.random_range(0.5..3.0);
        let c: Vec<f64> = (0..k)
            .map(|j| rho * v[j] / (0..k).map(|i| v[i] * a[i][j]).sum::<f64>())
            .collect();
        let m: Vec<Vec<f64>> = a
            .iter()
            .map(|row| row.iter().zip(&c).map(|(x, cj)| x * cj).collect())
            .collect();
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
        let one_w = 1.0 + w.iter().sum::<f64>();
        let ok = m.iter().all(|row| {
            let rs: f64 = row.iter().sum();
            rs <= one_w && row.iter().zip(&w).all(|(mij, wj)| mij * one_w >= rs * wj)
        });
        if ok {
            return LinFracLaw::from_rows(m, w).unwrap();
        }
    }
}

/// A random environment of `n` letters sharing a random positive `v`.
pub fn random_env(k: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<LinFracLaw<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
    let env = (0..n).map(|_| random_letter(&v, &mut rng)).collect();
    (v, env)
}

/// `|a - b| <= abs + rel * max(|a|, |b|)`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= abs + rel * a.abs().max(b.abs())
}
