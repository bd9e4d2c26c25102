//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 4-10 run the shipped configs in `configs/` through the library
//! entry point and report their verdicts; criteria 1-3 and 11 exercise the
//! core directly and the binary end to end. The process exits with status 0
//! after reporting; set `MBPRE_ACCEPTANCE_STRICT=1` to exit with status 1
//! when any criterion fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use mbpre_cli::config::ExperimentConfig;
use mbpre_cli::output::RunManifest;
use mbpre_core::accum::{reduce, replica_rng, stream_tag, EstimatorAccumulator, ReplicaPlan, Runner};
use mbpre_core::env::{EnvModel, RhoLaw, ShapeLaw, ShiftFamily, ShiftLaw};
use mbpre_core::estimators::{estimate_strong_constants, StrongHorizons};
use mbpre_core::linfrac::RawComposition;
use mbpre_core::series::{composed_pgf, enumerate_support};
use mbpre_core::sim::{sample_offspring, sample_zn_direct, simulate_particles, DEFAULT_CAP};
use mbpre_core::{LinFracLaw, QuenchedState};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(format!("{name}.json"))).expect("shipped config is valid")
}

fn run_named(name: &str) -> Result<RunManifest, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    mbpre_cli::run(&load(name), dir.path(), 0).map_err(|e| e.to_string())
}

fn verdict_outcome(names: &[&str], limit: Duration) -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in names {
        match run_named(name) {
            Ok(m) => {
                pass &= m.all_pass;
                for v in &m.verdicts {
                    parts.push(format!(
                        "{}{}={:.4e}/{:.4e}",
                        if v.pass { "" } else { "!" },
                        v.name,
                        v.value,
                        v.tolerance
                    ));
                }
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name}: error {e}"));
            }
        }
    }
    let el = t.elapsed();
    let in_time = el < limit;
    if !in_time {
        parts.push(format!("!runtime {:.0?} exceeds {:.0?}", el, limit));
    }
    Outcome {
        pass: pass && in_time,
        detail: format!("{} [{:.1?}]", parts.join("; "), el),
    }
}

// ---------------------------------------------------------------------------
// 1. exact oracle
// ---------------------------------------------------------------------------

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// A random exact letter with left eigenvector `v`: `M = A diag(c)` with
/// `c_j = rho v_j / (v A)_j`, redrawn until it defines a linear-fractional
/// law (nonnegative head weights and extinction mass).
fn random_rational_letter(v: &[BigRational], rng: &mut impl Rng) -> LinFracLaw<BigRational> {
    let k = v.len();
    loop {
        let a: Vec<Vec<BigRational>> = (0..k)
            .map(|_| (0..k).map(|_| q(rng.random_range(1..=8), 4)).collect())
            .collect();
        let rho = q(rng.random_range(2..=12), 4);
        let c: Vec<BigRational> = (0..k)
            .map(|j| {
                let col: BigRational = (0..k).map(|i| &v[i] * &a[i][j]).sum();
                &rho * &v[j] / col
            })
            .collect();
        let m: Vec<Vec<BigRational>> = a
            .iter()
            .map(|row| row.iter().zip(&c).map(|(x, cj)| x * cj).collect())
            .collect();
        let w: Vec<BigRational> = (0..k).map(|_| q(rng.random_range(0..=16), 8)).collect();
        let wn: BigRational = w.iter().sum();
        let one_w = BigRational::from_integer(1.into()) + &wn;
        let ok = m.iter().all(|row| {
            let rs: BigRational = row.iter().sum();
            rs <= one_w && row.iter().zip(&w).all(|(mij, wj)| mij * &one_w >= &rs * wj)
        });
        if ok {
            return LinFracLaw::from_rows(m, w).expect("valid exact letter");
        }
    }
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let vs = [[1, 1], [1, 2], [2, 1], [1, 3]];
    let (mut worst, mut worst_sum, mut raw_exact) = (0.0f64, 0.0f64, true);
    let z_max = 4u64;
    let support = enumerate_support(2, z_max);
    for f in 0..20u64 {
        let mut rng = replica_rng(2024, stream_tag("acceptance/oracle"), f);
        let vi = vs[rng.random_range(0..vs.len())];
        let v: Vec<BigRational> = vi.iter().map(|x| q(*x, 1)).collect();
        let n = rng.random_range(1..=4);
        let env: Vec<LinFracLaw<BigRational>> = (0..n).map(|_| random_rational_letter(&v, &mut rng)).collect();
        let pgf = composed_pgf(2, &env, z_max as usize);
        let raw = RawComposition::from_env(2, &env);
        let env64: Vec<LinFracLaw<f64>> = env.iter().map(|l| l.map(|x| x.to_f64().unwrap())).collect();
        let v64: Vec<f64> = vi.iter().map(|x| *x as f64).collect();
        let st = match QuenchedState::from_env(v64, &env64) {
            Ok(s) => s,
            Err(e) => {
                return Outcome {
                    pass: false,
                    detail: format!("fixture {f}: {e}"),
                }
            }
        };
        for i in 0..2 {
            for z in &support {
                let exact = pgf[i].coeff(z);
                raw_exact &= raw.local_prob_vector(i, z) == exact;
                let closed = st.local_prob_vector(i, z).unwrap();
                worst = worst.max((closed - exact.to_f64().unwrap()).abs());
            }
            for m in 1..=z_max {
                let exact: BigRational = support
                    .iter()
                    .filter(|z| z.iter().sum::<u64>() == m)
                    .map(|z| pgf[i].coeff(z))
                    .sum();
                raw_exact &= raw.local_prob_total(i, m) == exact;
                let total = st.local_prob_total(i, m).unwrap();
                worst = worst.max((total - exact.to_f64().unwrap()).abs());
                let vec_sum: f64 = support
                    .iter()
                    .filter(|z| z.iter().sum::<u64>() == m)
                    .map(|z| st.local_prob_vector(i, z).unwrap())
                    .sum();
                worst_sum = worst_sum.max((vec_sum - total).abs());
            }
        }
    }
    let el = t.elapsed();
    Outcome {
        pass: worst <= 1e-9 && worst_sum <= 1e-12 && raw_exact && el < Duration::from_secs(60),
        detail: format!(
            "20 fixtures, |z| <= {z_max}: max |closed form - exact coefficient| = {worst:.3e} (<= 1e-9); \
             max |sum vector - total| = {worst_sum:.3e} (<= 1e-12); exact-rational closed forms identical: {raw_exact} [{el:.1?}]"
        ),
    }
}

// ---------------------------------------------------------------------------
// 2. samplers
// ---------------------------------------------------------------------------

fn l0_law() -> LinFracLaw<f64> {
    LinFracLaw::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 1.0]).unwrap()
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let runner = Runner::new(0).unwrap();
    let draws = 1_000_000u64;
    let law = l0_law();
    let plan = ReplicaPlan::new(2, "acceptance/offspring", draws);
    let counts = runner
        .run(
            &plan,
            || EstimatorAccumulator::diagonal(0, 10),
            |acc, rng, _| {
                let z: u64 = sample_offspring(&law, 0, rng)?.iter().sum();
                acc.tallies[(z as usize).min(9)] += 1;
                Ok(())
            },
        )
        .unwrap()
        .tallies;
    let nd = draws as f64;
    let mut worst_a = 0.0f64;
    for z in 0..=8u64 {
        let p = if z == 0 {
            1.0 / 3.0
        } else {
            2.0 / 9.0 * (2.0f64 / 3.0).powi(z as i32 - 1)
        };
        let phat = counts[z as usize] as f64 / nd;
        let se = (p * (1.0 - p) / nd).sqrt();
        worst_a = worst_a.max((phat - p).abs() / se);
    }
    // sample_zn_direct vs simulate_particles on a fixed 3-letter environment
    let env = vec![
        LinFracLaw::from_rows(vec![vec![0.6, 0.8], vec![0.3, 0.8]], vec![0.4, 0.8]).unwrap(),
        LinFracLaw::from_rows(vec![vec![1.0, 0.5], vec![0.25, 1.25]], vec![0.25, 0.5]).unwrap(),
        LinFracLaw::from_rows(vec![vec![0.7, 0.8], vec![0.4, 1.1]], vec![0.3, 0.6]).unwrap(),
    ];
    let v = vec![1.0, 2.0];
    let st = QuenchedState::from_env(v, &env).unwrap();
    let runs = 100_000u64;
    let support = enumerate_support(2, 3);
    let observe = |z: &[u64]| -> Vec<f64> {
        let mut x = vec![z[0] as f64, z[1] as f64, (z.iter().sum::<u64>() == 0) as u8 as f64];
        x.extend(support.iter().map(|s| (s.as_slice() == z) as u8 as f64));
        x
    };
    let d = 3 + support.len();
    let direct = runner
        .run(
            &ReplicaPlan::new(3, "acceptance/direct", runs),
            || EstimatorAccumulator::diagonal(d, 0),
            |acc, rng, _| {
                acc.push(&observe(&sample_zn_direct(&st, 0, rng)?.counts));
                Ok(())
            },
        )
        .unwrap();
    let particles = runner
        .run(
            &ReplicaPlan::new(3, "acceptance/particles", runs),
            || EstimatorAccumulator::diagonal(d, 0),
            |acc, rng, _| {
                let tr = simulate_particles(&env, &[1, 0], 3, rng, DEFAULT_CAP)?;
                acc.push(&observe(&tr.last().counts));
                Ok(())
            },
        )
        .unwrap();
    let mut worst_b = 0.0f64;
    for a in 0..d {
        let (x, y) = (direct.stats.estimate(a), particles.stats.estimate(a));
        let s = (x.stderr.powi(2) + y.stderr.powi(2)).sqrt();
        if s > 0.0 {
            worst_b = worst_b.max((x.value - y.value).abs() / s);
        }
    }
    let el = t.elapsed();
    Outcome {
        pass: worst_a <= 3.0 && worst_b <= 3.0 && el < Duration::from_secs(300),
        detail: format!(
            "offspring law on L0 (z = 0..8, 1e6 draws): max |z-score| = {worst_a:.2}; \
             direct vs particle marginals (means, extinction, P(Z_3 = z) for |z| <= 3; 1e5 runs each): max |z-score| = {worst_b:.2} [{el:.1?}]"
        ),
    }
}

// ---------------------------------------------------------------------------
// 3. deterministic fixture
// ---------------------------------------------------------------------------

fn l0_model() -> EnvModel {
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

fn criterion_3() -> Outcome {
    let runner = Runner::new(0).unwrap();
    let model = l0_model();
    let h = StrongHorizons {
        k_max: 60,
        window: 50,
        ..StrongHorizons::default()
    };
    let c = match estimate_strong_constants(&runner, &model, 2, &h, 16, 3) {
        Ok(c) => c,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("estimator error: {e}"),
            }
        }
    };
    let checks = [
        ("G", c.g_hat.value, 2.0),
        ("u_1", c.u_hat[0].value, 0.5),
        ("u_2", c.u_hat[1].value, 0.5),
        ("Q(1)", c.q_hat[0].value, 0.25),
        ("Q(2)", c.q_hat[1].value, 0.25),
        ("theta_1", c.theta[0].value, 1.0 / 16.0),
        ("theta_2", c.theta[1].value, 1.0 / 16.0),
        ("kappa", model.kappa(), 0.5),
    ];
    let mut pass = true;
    let parts: Vec<String> = checks
        .iter()
        .map(|(name, got, want)| {
            let ok = (got - want).abs() <= 1e-9;
            pass &= ok;
            format!("{}{name}={got} (want {want})", if ok { "" } else { "!" })
        })
        .collect();
    Outcome { pass, detail: parts.join("; ") }
}

// ---------------------------------------------------------------------------
// 11. determinism and merge
// ---------------------------------------------------------------------------

fn criterion_11() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    // byte-identical artifacts from the binary, with different thread counts
    let mut cfg = load("interm_ratio");
    cfg.budgets.replicas = 4_000;
    cfg.budgets.walk_replicas = 20_000;
    cfg.budgets.constant_replicas = 2_000;
    cfg.budgets.renewal.replicas = 20_000;
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("small.json");
    std::fs::write(&cfg_path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    let bin = env!("CARGO_BIN_EXE_mbpre");
    let mut outs = Vec::new();
    for (k, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let status = Command::new(bin)
            .args(["run", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .output()
            .expect("binary runs");
        if status.status.code().is_none_or(|c| c == 2) {
            pass = false;
            parts.push(format!("run {k} failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        outs.push(out);
    }
    for f in ["results.jsonl", "interm_ratio.csv"] {
        let a = std::fs::read(outs[0].join(f)).unwrap_or_default();
        let b = std::fs::read(outs[1].join(f)).unwrap_or_default();
        let same = !a.is_empty() && a == b;
        pass &= same;
        parts.push(format!("{}{f} byte-identical ({} bytes)", if same { "" } else { "!NOT " }, a.len()));
    }
    // shard merge equals the single run exactly
    let model = load("strong_ratio").model.tilt().unwrap();
    let plan = ReplicaPlan::new(5, "acceptance/shards", 10_000);
    let body = |acc: &mut EstimatorAccumulator, rng: &mut mbpre_core::accum::ReplicaRng, _r: u64| {
        let mut st = QuenchedState::new(model.v.clone())?;
        for _ in 0..12 {
            let l = model.sample_letter(rng)?;
            st.advance(&l.law)?;
        }
        let p = st.scaled_local_prob_total(0, 1)?;
        acc.tallies[0] += (p > 0.05) as u64;
        acc.push(&[p, st.log_scale(), st.q(1)]);
        Ok(())
    };
    let init = || EstimatorAccumulator::full(3, 1);
    let single = Runner::new(1).unwrap().run(&plan, init, body).unwrap();
    let blocks = plan.blocks();
    for shards in [2u64, 3, 7] {
        let pool = Runner::new(4).unwrap();
        let mut parts_all = Vec::new();
        for s in 0..shards {
            let range = (s * blocks / shards)..((s + 1) * blocks / shards);
            parts_all.extend(pool.run_blocks(&plan, range, init, body).unwrap());
        }
        let merged = reduce(&parts_all).unwrap();
        let same = merged == single;
        pass &= same;
        parts.push(format!("{}{shards}-shard merge identical", if same { "" } else { "!NOT " }));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn main() {
    let mins = |m: u64| Duration::from_secs(60 * m);
    let hour = Duration::from_secs(3600);
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "quenched oracle equivalence", Box::new(criterion_1)),
        (2, "sampler validity", Box::new(criterion_2)),
        (3, "deterministic-fixture constants", Box::new(criterion_3)),
        (4, "strong ratio stabilizes and matches theta", Box::new(move || verdict_outcome(&["strong_ratio"], mins(10)))),
        (5, "strong uniform law on {1..5}", Box::new(move || verdict_outcome(&["strong_uniform"], hour))),
        (6, "conditional law p", Box::new(move || verdict_outcome(&["strong_p"], hour))),
        (7, "renewal function harmonicity", Box::new(move || verdict_outcome(&["renewal"], mins(10)))),
        (8, "intermediate ratio and Delta", Box::new(move || verdict_outcome(&["interm_ratio"], hour))),
        (9, "intermediate uniform law on {1..5}", Box::new(move || verdict_outcome(&["interm_uniform"], hour))),
        (10, "law at the minimum and q", Box::new(move || verdict_outcome(&["interm_q"], hour))),
        (11, "determinism and shard merge", Box::new(criterion_11)),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in &criteria {
        let o = f();
        println!(
            "criterion {id:>2} {} — {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(*id);
        }
    }
    println!(
        "acceptance: {} of {} criteria pass{}",
        criteria.len() - failed.len(),
        criteria.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" (failing: {failed:?})")
        }
    );
    let strict = std::env::var("MBPRE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
