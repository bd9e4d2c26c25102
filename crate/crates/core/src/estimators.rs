//! Monte Carlo estimators of the limiting constants and conditional limit
//! laws of the supercritical regimes.
//!
//! All annealed small-population probabilities are estimated through the
//! change of measure `P_{e_i}(A) = kappa^n E_P[e^{S_n} P^q_{e_i}(A)]`: the
//! environment is sampled under the tilted model and the quenched closed
//! form, multiplied by `e^{S_n}`, is averaged. The stabilized quenched state
//! delivers `e^{S_n} P^q` directly, so nothing overflows.
//!
//! Normalization conventions (with `(v, u) = 1`):
//! * `e^{-S_n} D_n -> G v / |v|` where `G = lim |e^{-S_n} D_n|`,
//! * `Q(i) = |v| u_i / G`, `R(i) = 1 - Q(i)`,
//! * `theta_i = E[Q(i)^2 / (|v| u_i)] = |v| E[u_i / G^2]`,
//! * `Theta_i(z) = C(z, v) E[Q(i)^2 / u_i]`, so that `sum_{|z|=z} Theta_i(z) = theta_i`,
//! * `p(z) = C(z, v) E[sum_r z_r Q(r)^2/(u_r R(r)) prod_j R(j)^{z_j}]`,
//! * `Delta_i(z) = C(z, v) Delta_hat_i`, `q(z) = |v| C(z, v) T(z)`.

use serde::{Deserialize, Serialize};

use crate::accum::{CoMoments, Estimate, EstimatorAccumulator, ReplicaPlan, ReplicaRng, Runner, Samples};
use crate::env::{EnvModel, Regime};
use crate::error::{Error, Result};
use crate::linfrac::{multinomial_real, powu_real, QuenchedState};
use crate::series::enumerate_support;
use crate::walk::{functionals, prob_min_nonneg_curve, RenewalTable, WalkPath};

/// `C(z, v) = (|z|! / (prod z_r! |v|)) prod_r (v_r / |v|)^{z_r}`.
pub fn multinomial_weight(z: &[u64], v: &[f64]) -> Result<f64> {
    if z.len() != v.len() {
        return Err(Error::DomainError("z and v must have the same length".into()));
    }
    if z.iter().all(|x| *x == 0) {
        return Err(Error::DomainError("C(z, v) needs a nonzero z".into()));
    }
    if v.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::DomainError("v must be strictly positive".into()));
    }
    let vn: f64 = v.iter().sum();
    let mut c: f64 = multinomial_real(z);
    for (zr, vr) in z.iter().zip(v) {
        c *= powu_real(vr / vn, *zr);
    }
    Ok(c / vn)
}

/// A probability-like value indexed by a type vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZEntry {
    pub z: Vec<u64>,
    pub value: f64,
    pub stderr: f64,
}

/// Event whose annealed probability is tracked.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    /// `{|Z_n| = z}`.
    Total(u64),
    /// `{Z_n = z}`.
    Vector(Vec<u64>),
}

impl Event {
    /// `e^{S_n} P^q_{e_i}(event)`.
    pub fn scaled_prob(&self, st: &QuenchedState<f64>, i: usize) -> Result<f64> {
        match self {
            Event::Total(z) => st.scaled_local_prob_total(i, *z),
            Event::Vector(z) => st.scaled_local_prob_vector(i, z),
        }
    }

    /// Short label.
    pub fn label(&self) -> String {
        match self {
            Event::Total(z) => format!("|Z_n|={z}"),
            Event::Vector(z) => format!(
                "Z_n=({})",
                z.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
            ),
        }
    }
}

/// Verdict of a convergence check between the last two grid points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    NotStable,
    InsufficientGrid,
}

/// Relative change between the last two grid points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stabilization {
    pub rel_change: Option<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
}

impl Stabilization {
    /// Compares the last two values.
    pub fn of(values: &[f64], tolerance: f64) -> Self {
        if values.len() < 2 {
            return Self {
                rel_change: None,
                tolerance,
                verdict: Verdict::InsufficientGrid,
            };
        }
        let (a, b) = (values[values.len() - 2], values[values.len() - 1]);
        let rel = (b - a).abs() / b.abs();
        Self {
            rel_change: Some(rel),
            tolerance,
            verdict: if rel < tolerance { Verdict::Stable } else { Verdict::NotStable },
        }
    }
}

/// One grid point of a ratio sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
}

/// A ratio sequence over an `n`-grid with its stabilization verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioTable {
    pub event: Event,
    pub rows: Vec<RatioRow>,
    pub stabilization: Stabilization,
}

fn check_grid(n_grid: &[usize]) -> Result<Vec<usize>> {
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Error::DomainError("the n-grid needs positive entries".into()));
    }
    let mut g = n_grid.to_vec();
    g.sort_unstable();
    g.dedup();
    Ok(g)
}

fn check_type(model: &EnvModel, i: usize) -> Result<()> {
    if i >= model.k {
        return Err(Error::IndexError {
            index: i,
            max: model.k - 1,
        });
    }
    Ok(())
}

/// `e^{S_seg} P^{seg}_z(Z = e_l)` for a segment started from the population
/// `z`: exactly one lineage leaves a single type-`l` descendant and all
/// other lineages die out. An empty segment gives `1{z = e_l}`.
pub fn scaled_segment_prob_to_el(seg: &QuenchedState<f64>, z: &[u64], l: usize) -> Result<f64> {
    let k = seg.dim();
    if seg.n() == 0 {
        let hit = z.iter().enumerate().all(|(j, zj)| *zj == u64::from(j == l));
        return Ok(if hit { 1.0 } else { 0.0 });
    }
    let r: Vec<f64> = (0..k).map(|j| 1.0 - seg.q(j)).collect();
    let mut el = vec![0u64; k];
    el[l] = 1;
    let mut acc = 0.0;
    for j in 0..k {
        if z[j] == 0 {
            continue;
        }
        let mut term = z[j] as f64 * seg.scaled_local_prob_vector(j, &el)?;
        for (m, rm) in r.iter().enumerate() {
            let e = if m == j { z[m] - 1 } else { z[m] };
            term *= powu_real(*rm, e);
        }
        acc += term;
    }
    Ok(acc)
}

/// `e^{S_n} P_z(|Z_n| = m)` for `m = 1..=kmax`, from the product of the
/// one-dimensional linear-fractional generating functions `F^{(j)}(t 1)`.
pub fn scaled_total_probs_from(st: &QuenchedState<f64>, z: &[u64], kmax: u64) -> Result<Vec<f64>> {
    let k = st.dim();
    let kmax = kmax as usize;
    let s = st.log_scale();
    let e = (-s).exp();
    let mut prod = vec![0.0; kmax + 1];
    prod[0] = 1.0;
    for j in 0..k {
        let mut f = vec![0.0; kmax + 1];
        f[0] = 1.0 - st.q(j);
        for m in 1..=kmax {
            f[m] = e * st.scaled_local_prob_total(j, m as u64)?;
        }
        for _ in 0..z[j] {
            let mut next = vec![0.0; kmax + 1];
            for a in 0..=kmax {
                if prod[a] == 0.0 {
                    continue;
                }
                for b in 0..=kmax - a {
                    next[a + b] += prod[a] * f[b];
                }
            }
            prod = next;
        }
    }
    Ok(prod[1..].iter().map(|p| p / e).collect())
}

// ---------------------------------------------------------------------------
// Strongly supercritical regime
// ---------------------------------------------------------------------------

/// Horizons of the strong-regime estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrongHorizons {
    /// Number of series terms of `G`.
    pub k_max: usize,
    /// Extra letters used to converge the eigenvector direction.
    pub window: usize,
    /// Largest accepted last-term/total ratio of the `G` series.
    pub tail_bound: f64,
    /// Floor of `R(i)` when Monte Carlo noise pushes `Q(i)` to one.
    pub r_floor: f64,
}

impl Default for StrongHorizons {
    fn default() -> Self {
        Self {
            k_max: 200,
            window: 50,
            tail_bound: 1e-6,
            r_floor: 1e-12,
        }
    }
}

/// One replica of `(G, u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuSample {
    pub g: f64,
    pub u: Vec<f64>,
    /// Last included series term relative to `G`.
    pub tail_ratio: f64,
    /// Largest relative change of `u` over the final window.
    pub window_change: f64,
}

/// Follows one tilted environment for `k_max + window` letters.
///
/// `G` is accumulated as `|v| sum_j e^{-S_j} (w_j, y_j)` with
/// `y_j = P_{j+1} ... P_N 1 / |v|` (`P = M / rho`); this sum equals
/// `|e^{-S_N} D_N|`, so it is read off the stabilized state. The same
/// backward products give `u = y_0 = e^{-S_N} M_{1,N} 1 / |v|`, which
/// satisfies `(v, u) = 1` exactly and converges to the limit eigenvector.
pub fn sample_g_u(model_tilted: &EnvModel, h: &StrongHorizons, rng: &mut ReplicaRng) -> Result<GuSample> {
    let mut st = QuenchedState::new(model_tilted.v.clone())?;
    let n = h.k_max + h.window;
    let mut u_mid: Option<Vec<f64>> = None;
    let mut last_term = 0.0;
    for j in 1..=n {
        let letter = model_tilted.sample_letter(rng)?;
        st.advance(&letter.law)?;
        last_term = (-st.log_scale()).exp() * letter.law.shift().iter().sum::<f64>();
        if j == h.k_max {
            u_mid = Some(st.u_proxy());
        }
    }
    let g: f64 = st.dtilde().iter().sum();
    let u = st.u_proxy();
    let window_change = match u_mid {
        Some(m) if h.window > 0 => u
            .iter()
            .zip(&m)
            .map(|(a, b)| (a - b).abs() / a)
            .fold(0.0, f64::max),
        _ => 0.0,
    };
    Ok(GuSample {
        g,
        u,
        tail_ratio: if g > 0.0 { last_term / g } else { f64::INFINITY },
        window_change,
    })
}

/// Samples of `(G, u)` with the worst tail diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuReport {
    pub samples: Vec<GuSample>,
    pub tail_max: f64,
    pub window_change_max: f64,
}

/// Per-replica `(G, u)` under the tilted model.
pub fn estimate_g_u(
    runner: &Runner,
    model: &EnvModel,
    h: &StrongHorizons,
    replicas: u64,
    seed: u64,
) -> Result<GuReport> {
    model.require_regime(Regime::StronglySupercritical)?;
    let tilted = model.tilt()?;
    let plan = ReplicaPlan::new(seed, "strong/g_u", replicas);
    let samples = runner
        .run(&plan, || Samples(Vec::new()), |acc: &mut Samples<GuSample>, rng, _| {
            acc.0.push(sample_g_u(&tilted, h, rng)?);
            Ok(())
        })?
        .0;
    let tail_max = samples.iter().map(|s| s.tail_ratio).fold(0.0, f64::max);
    let window_change_max = samples.iter().map(|s| s.window_change).fold(0.0, f64::max);
    if samples.iter().any(|s| !(s.g > 0.0)) {
        return Err(Error::DegenerateShift("G = 0: the shift vectors vanish".into()));
    }
    if tail_max > h.tail_bound {
        return Err(Error::TailNotConverged(format!(
            "last G-series term / total = {tail_max:.3e} exceeds {:.1e}",
            h.tail_bound
        )));
    }
    Ok(GuReport {
        samples,
        tail_max,
        window_change_max,
    })
}

/// Limiting constants of the strongly supercritical regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongLimitConstants {
    pub g_hat: Estimate,
    pub u_hat: Vec<Estimate>,
    /// `E[Q(i)]` with `Q(i) = |v| u_i / G`.
    pub q_hat: Vec<Estimate>,
    /// `theta_i = |v| E[u_i / G^2]`.
    pub theta: Vec<Estimate>,
    /// `theta_i = E[Q(i)^2 / (|v| u_i)]`, the same quantity in its `Q` form.
    pub theta_q_form: Vec<Estimate>,
    /// `E[Q(i)^2 / u_i]`; `Theta_i(z) = C(z, v)` times this.
    pub theta_base: Vec<Estimate>,
    /// `Theta_i(z)` per type `i` over the support.
    pub big_theta: Vec<Vec<ZEntry>>,
    pub p_dist: Vec<ZEntry>,
    pub p_enumerated_total: f64,
    /// Analytic mass of `p` beyond the enumerated support.
    pub p_tail: Estimate,
    /// Enumerated plus analytic tail, with its standard error.
    pub p_total: Estimate,
    pub z_max: u64,
    pub clamp_count: u64,
    pub tail_max: f64,
    pub window_change_max: f64,
    pub horizons: StrongHorizons,
    pub replicas: u64,
}

impl StrongLimitConstants {
    /// `sum_{|z| = z} Theta_i(z)` from the stored entries.
    pub fn big_theta_total(&self, i: usize, z: u64) -> f64 {
        self.big_theta[i]
            .iter()
            .filter(|e| e.z.iter().sum::<u64>() == z)
            .map(|e| e.value)
            .sum()
    }

    /// `p(z)` for a support vector.
    pub fn p(&self, z: &[u64]) -> Option<&ZEntry> {
        self.p_dist.iter().find(|e| e.z == z)
    }
}

/// `sum_r z_r Q_r^2/(u_r R_r) prod_j R_j^{z_j}`, written without division
/// by `R`.
fn p_integrand(z: &[u64], q: &[f64], r: &[f64], u: &[f64]) -> f64 {
    let mut acc = 0.0;
    for rr in 0..z.len() {
        if z[rr] == 0 {
            continue;
        }
        let mut t = z[rr] as f64 * q[rr] * q[rr] / u[rr];
        for j in 0..z.len() {
            let e = if j == rr { z[j] - 1 } else { z[j] };
            t *= powu_real(r[j], e);
        }
        acc += t;
    }
    acc
}

/// `sum_{|z| > z_max} C(z, v) sum_r z_r Q_r^2/(u_r R_r) prod_j R_j^{z_j}` in
/// closed form: with `a_r = v_r R_r / |v|` and `x = sum_r a_r`, the sum over
/// `|z| = m` of `C(z,v) z_r prod R^z` is `m a_r x^{m-1} / |v|`, and
/// `sum_{m > z_max} m x^{m-1} = ((z_max+1) x^{z_max} - z_max x^{z_max+1}) / (1-x)^2`.
fn p_analytic_tail(z_max: u64, q: &[f64], r: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let vn: f64 = v.iter().sum();
    let x: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / vn;
    let one_minus_x: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / vn;
    let zm = z_max as f64;
    let geo = ((zm + 1.0) * powu_real(x, z_max) - zm * powu_real(x, z_max + 1)) / (one_minus_x * one_minus_x);
    (0..v.len())
        .map(|j| q[j] * q[j] / u[j] * v[j] / vn / vn * geo)
        .sum()
}

/// `Q = |v| u / G` clamped into `(0, 1 - r_floor]`; returns `(Q, R, clamped)`.
fn survival_from_g_u(s: &GuSample, v_norm: f64, r_floor: f64) -> (Vec<f64>, Vec<f64>, bool) {
    let mut clamped = false;
    let q: Vec<f64> = s
        .u
        .iter()
        .map(|ui| {
            let x = v_norm * ui / s.g;
            if x > 1.0 - r_floor {
                clamped = true;
                1.0 - r_floor
            } else {
                x
            }
        })
        .collect();
    let r = q.iter().map(|x| 1.0 - x).collect();
    (q, r, clamped)
}

/// Estimates `G`, `u`, `Q`, `theta`, `Theta` and `p` from shared replicas.
pub fn estimate_strong_constants(
    runner: &Runner,
    model: &EnvModel,
    z_max: u64,
    h: &StrongHorizons,
    replicas: u64,
    seed: u64,
) -> Result<StrongLimitConstants> {
    model.require_regime(Regime::StronglySupercritical)?;
    if z_max == 0 {
        return Err(Error::DomainError("the support needs z_max >= 1".into()));
    }
    let tilted = model.tilt()?;
    let k = model.k;
    let v = model.v.clone();
    let vn = model.v_norm();
    let support = enumerate_support(k, z_max);
    // layout: G | u (k) | Q (k) | theta (k) | theta_q (k) | base (k) | p(z) (|supp|) | tail
    let d = 1 + 5 * k + support.len() + 1;
    let plan = ReplicaPlan::new(seed, "strong/constants", replicas);
    let acc = runner.run(
        &plan,
        || EstimatorAccumulator::diagonal(d, 1),
        |acc, rng, _| {
            let s = sample_g_u(&tilted, h, rng)?;
            if !(s.g > 0.0) {
                return Err(Error::DegenerateShift("G = 0: the shift vectors vanish".into()));
            }
            if s.tail_ratio > h.tail_bound {
                return Err(Error::TailNotConverged(format!(
                    "last G-series term / total = {:.3e} exceeds {:.1e}",
                    s.tail_ratio, h.tail_bound
                )));
            }
            let (q, r, clamped) = survival_from_g_u(&s, vn, h.r_floor);
            acc.tallies[0] += clamped as u64;
            let mut x = Vec::with_capacity(d);
            x.push(s.g);
            x.extend(&s.u);
            x.extend(&q);
            x.extend(s.u.iter().map(|ui| vn * ui / (s.g * s.g)));
            x.extend((0..k).map(|i| q[i] * q[i] / (vn * s.u[i])));
            x.extend((0..k).map(|i| q[i] * q[i] / s.u[i]));
            for z in &support {
                x.push(p_integrand(z, &q, &r, &s.u));
            }
            x.push(p_analytic_tail(z_max, &q, &r, &s.u, &v));
            acc.push(&x);
            Ok(())
        },
    )?;
    let st = &acc.stats;
    let est = |a: usize| st.estimate(a);
    let (o_u, o_q, o_th, o_thq, o_base, o_p) = (1, 1 + k, 1 + 2 * k, 1 + 3 * k, 1 + 4 * k, 1 + 5 * k);
    let o_tail = o_p + support.len();
    let mut p_dist = Vec::with_capacity(support.len());
    let mut weights = Vec::with_capacity(support.len());
    for (idx, z) in support.iter().enumerate() {
        let c = multinomial_weight(z, &v)?;
        weights.push((o_p + idx, c));
        p_dist.push(ZEntry {
            z: z.clone(),
            value: c * st.mean(o_p + idx),
            stderr: c * st.stderr(o_p + idx),
        });
    }
    let p_enumerated_total: f64 = p_dist.iter().map(|e| e.value).sum();
    let mut total_lin = weights.clone();
    total_lin.push((o_tail, 1.0));
    let big_theta = (0..k)
        .map(|i| {
            support
                .iter()
                .map(|z| {
                    let c = multinomial_weight(z, &v)?;
                    Ok(ZEntry {
                        z: z.clone(),
                        value: c * st.mean(o_base + i),
                        stderr: c * st.stderr(o_base + i),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let p_tail = est(o_tail);
    Ok(StrongLimitConstants {
        g_hat: est(0),
        u_hat: (0..k).map(|i| est(o_u + i)).collect(),
        q_hat: (0..k).map(|i| est(o_q + i)).collect(),
        theta: (0..k).map(|i| est(o_th + i)).collect(),
        theta_q_form: (0..k).map(|i| est(o_thq + i)).collect(),
        theta_base: (0..k).map(|i| est(o_base + i)).collect(),
        big_theta,
        p_enumerated_total,
        p_total: Estimate {
            value: p_enumerated_total + p_tail.value,
            // diagonal co-moments only: bound the error of the sum by the
            // sum of the component errors
            stderr: total_lin.iter().map(|(a, c)| c * st.stderr(*a)).sum(),
            n: acc.replicas,
        },
        p_tail,
        p_dist,
        z_max,
        clamp_count: acc.tallies[0],
        tail_max: f64::NAN,
        window_change_max: f64::NAN,
        horizons: h.clone(),
        replicas: acc.replicas,
    })
}

/// Ratio sequences `kappa^{-n} P_{e_i}(event)` with verdicts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub i: usize,
    pub tables: Vec<RatioTable>,
    pub clamp_count: u64,
    pub warnings: Vec<String>,
}

/// Tilted averages of `e^{S_n} P^q_{e_i}(event)` along shared paths.
fn tilted_event_means(
    runner: &Runner,
    tilted: &EnvModel,
    i: usize,
    events: &[Event],
    grid: &[usize],
    replicas: u64,
    seed: u64,
    label: &str,
) -> Result<(CoMoments, u64)> {
    let n_max = *grid.last().expect("nonempty grid");
    let ne = events.len();
    let plan = ReplicaPlan::new(seed, label, replicas);
    let acc = runner.run(
        &plan,
        || EstimatorAccumulator::diagonal(ne * grid.len(), 1),
        |acc, rng, _| {
            let mut st = QuenchedState::new(tilted.v.clone())?;
            let mut x = Vec::with_capacity(ne * grid.len());
            let mut g = 0;
            for n in 1..=n_max {
                let letter = tilted.sample_letter(rng)?;
                st.advance(&letter.law)?;
                if n == grid[g] {
                    for ev in events {
                        let p = match ev {
                            Event::Total(z) => st.scaled_local_prob_total(i, *z)?,
                            Event::Vector(z) => {
                                let c = st.scaled_local_prob_vector_checked(i, z)?;
                                acc.tallies[0] += c.clamped as u64;
                                c.value
                            }
                        };
                        x.push(p);
                    }
                    g += 1;
                }
            }
            acc.push(&x);
            Ok(())
        },
    )?;
    Ok((acc.stats, acc.tallies[0]))
}

fn tables_from(stats: &CoMoments, events: &[Event], grid: &[usize], tol: f64) -> Vec<RatioTable> {
    let ne = events.len();
    events
        .iter()
        .enumerate()
        .map(|(e, ev)| {
            let rows: Vec<RatioRow> = grid
                .iter()
                .enumerate()
                .map(|(g, n)| RatioRow {
                    n: *n,
                    value: stats.mean(g * ne + e),
                    stderr: stats.stderr(g * ne + e),
                })
                .collect();
            let vals: Vec<f64> = rows.iter().map(|r| r.value).collect();
            RatioTable {
                event: ev.clone(),
                rows,
                stabilization: Stabilization::of(&vals, tol),
            }
        })
        .collect()
}

/// `kappa^{-n} P_{e_i}(event)` over an `n`-grid in the strong regime.
pub fn verify_strong_ratio(
    runner: &Runner,
    model: &EnvModel,
    i: usize,
    events: &[Event],
    n_grid: &[usize],
    replicas: u64,
    seed: u64,
    tolerance: f64,
) -> Result<RatioReport> {
    model.require_regime(Regime::StronglySupercritical)?;
    check_type(model, i)?;
    let grid = check_grid(n_grid)?;
    let mut warnings = Vec::new();
    let a2 = model.alpha * model.alpha;
    let thr = ((1.0 + a2) / (1.0 - a2)).ln();
    if events.iter().any(|e| matches!(e, Event::Vector(_))) && model.drift_tilted() >= thr {
        warnings.push(format!(
            "tilted drift {:.4} is not below ln((1+alpha^2)/(1-alpha^2)) = {thr:.4}; vector-level limits are outside their stated hypotheses",
            model.drift_tilted()
        ));
    }
    let tilted = model.tilt()?;
    let (stats, clamps) = tilted_event_means(runner, &tilted, i, events, &grid, replicas, seed, "strong/ratio")?;
    Ok(RatioReport {
        i,
        tables: tables_from(&stats, events, &grid, tolerance),
        clamp_count: clamps,
        warnings,
    })
}

/// Conditional law of `|Z_n|` on `{1..c}` at one `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformRow {
    pub n: usize,
    /// `P(|Z_n| = z | 1 <= |Z_n| <= c)` for `z = 1..=c`.
    pub cond: Vec<Estimate>,
    pub max_deviation: f64,
}

/// Output of [`verify_uniform`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformReport {
    pub regime: Regime,
    pub i: usize,
    pub c: u64,
    pub rows: Vec<UniformRow>,
    pub warnings: Vec<String>,
}

/// `P(|Z_n| = z | 1 <= |Z_n| <= c)` by tilted quenched averaging, with
/// delta-method errors for the ratio to the common denominator.
pub fn verify_uniform(
    runner: &Runner,
    model: &EnvModel,
    regime: Regime,
    i: usize,
    c: u64,
    n_grid: &[usize],
    replicas: u64,
    seed: u64,
) -> Result<UniformReport> {
    check_type(model, i)?;
    if c == 0 {
        return Err(Error::DomainError("c must be at least 1".into()));
    }
    let grid = check_grid(n_grid)?;
    let mut warnings = Vec::new();
    let found = crate::env::analytic_regime(model);
    if found != regime {
        warnings.push(format!("requested regime {regime:?} but the model is {found:?}"));
    }
    let tilted = model.tilt()?;
    let n_max = *grid.last().expect("nonempty grid");
    let cu = c as usize;
    let plan = ReplicaPlan::new(seed, "uniform", replicas);
    let accs = runner.run(
        &plan,
        || vec![CoMoments::full(cu); grid.len()],
        |acc, rng, _| {
            let mut st = QuenchedState::new(tilted.v.clone())?;
            let mut g = 0;
            for n in 1..=n_max {
                let letter = tilted.sample_letter(rng)?;
                st.advance(&letter.law)?;
                if n == grid[g] {
                    acc[g].push(&st.scaled_local_probs_total(i, c)?);
                    g += 1;
                }
            }
            Ok(())
        },
    )?;
    let all: Vec<usize> = (0..cu).collect();
    let rows = grid
        .iter()
        .zip(&accs)
        .map(|(n, cm)| {
            let cond: Vec<Estimate> = (0..cu).map(|z| cm.ratio_to_sum(z, &all)).collect();
            let max_deviation = cond
                .iter()
                .map(|e| (e.value - 1.0 / c as f64).abs())
                .fold(0.0, f64::max);
            UniformRow {
                n: *n,
                cond,
                max_deviation,
            }
        })
        .collect();
    Ok(UniformReport {
        regime,
        i,
        c,
        rows,
        warnings,
    })
}

/// Conditional law `P(Z_m = z | Z_n = e_l)` at one `n` (`m = floor(n t)`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    pub n: usize,
    pub m: usize,
    pub entries: Vec<ZEntry>,
    pub enumerated_total: f64,
}

/// Output of [`verify_p`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PReport {
    pub i: usize,
    pub l: usize,
    pub t: f64,
    pub tables: Vec<ConditionalTable>,
}

/// Ratio-of-means table from full co-moments whose last component is the
/// common denominator.
fn conditional_entries(cm: &CoMoments, support: &[Vec<u64>]) -> Vec<ZEntry> {
    let den = support.len();
    support
        .iter()
        .enumerate()
        .map(|(a, z)| {
            let r = cm.ratio(a, den);
            ZEntry {
                z: z.clone(),
                value: r.value,
                stderr: r.stderr,
            }
        })
        .collect()
}

/// `P_{e_i}(Z_{floor(nt)} = z | Z_n = e_l)` through the factorization
/// `P(Z_m = z) P_z(Z_{n-m} = e_l) / P(Z_n = e_l)`, every factor computed by
/// tilted quenched averaging on a common environment.
pub fn verify_p(
    runner: &Runner,
    model: &EnvModel,
    i: usize,
    l: usize,
    t: f64,
    z_max: u64,
    n_grid: &[usize],
    replicas: u64,
    seed: u64,
) -> Result<PReport> {
    model.require_regime(Regime::StronglySupercritical)?;
    check_type(model, i)?;
    check_type(model, l)?;
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::DomainError("t must lie in (0, 1)".into()));
    }
    let grid = check_grid(n_grid)?;
    let ms: Vec<usize> = grid.iter().map(|n| ((*n as f64 * t).floor() as usize).max(1)).collect();
    if grid.iter().zip(&ms).any(|(n, m)| m >= n) {
        return Err(Error::DomainError("every n must exceed floor(n t) >= 1".into()));
    }
    let tilted = model.tilt()?;
    let support = enumerate_support(model.k, z_max);
    let ns = support.len();
    let n_max = *grid.last().expect("nonempty grid");
    let mut el = vec![0u64; model.k];
    el[l] = 1;
    let plan = ReplicaPlan::new(seed, &format!("strong/p/{i}/{l}/{t}"), replicas);
    let accs = runner.run(
        &plan,
        || vec![CoMoments::full(ns + 1); grid.len()],
        |acc, rng, _| {
            let mut full = QuenchedState::new(tilted.v.clone())?;
            let mut prefix: Vec<Option<QuenchedState<f64>>> = vec![None; grid.len()];
            let mut segs: Vec<QuenchedState<f64>> = (0..grid.len())
                .map(|_| QuenchedState::new(tilted.v.clone()))
                .collect::<Result<_>>()?;
            for n in 1..=n_max {
                let letter = tilted.sample_letter(rng)?;
                full.advance(&letter.law)?;
                for g in 0..grid.len() {
                    if n > ms[g] && n <= grid[g] {
                        segs[g].advance(&letter.law)?;
                    }
                    if n == ms[g] {
                        prefix[g] = Some(full.clone());
                    }
                    if n == grid[g] {
                        let pre = prefix[g].as_ref().expect("prefix state recorded");
                        let mut x = Vec::with_capacity(ns + 1);
                        for z in &support {
                            let a = pre.scaled_local_prob_vector(i, z)?;
                            let b = scaled_segment_prob_to_el(&segs[g], z, l)?;
                            x.push(a * b);
                        }
                        x.push(full.scaled_local_prob_vector(i, &el)?);
                        acc[g].push(&x);
                    }
                }
            }
            Ok(())
        },
    )?;
    let tables = grid
        .iter()
        .zip(&ms)
        .zip(&accs)
        .map(|((n, m), cm)| {
            let entries = conditional_entries(cm, &support);
            let enumerated_total = entries.iter().map(|e| e.value).sum();
            ConditionalTable {
                n: *n,
                m: *m,
                entries,
                enumerated_total,
            }
        })
        .collect();
    Ok(PReport { i, l, t, tables })
}

// ---------------------------------------------------------------------------
// Intermediately supercritical regime
// ---------------------------------------------------------------------------

/// Horizons of the intermediate-regime estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntermHorizons {
    /// Largest ladder time `k` of the `Delta_hat` sum.
    pub k_max: usize,
    /// Length of the conditioned future used for the inner limits.
    pub n_infty: usize,
    /// Largest accepted share of the `Delta_hat` sum coming from `k > k_max / 2`.
    pub tail_bound: f64,
}

impl Default for IntermHorizons {
    fn default() -> Self {
        Self {
            k_max: 200,
            n_infty: 400,
            tail_bound: 1e-2,
        }
    }
}

/// Output of [`estimate_interm_delta`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntermDelta {
    pub i: usize,
    /// `Delta_hat_i = sum_k E[E^+_k[Q(i)^2 / u_i]; tau_k = k]`.
    pub delta_hat: Estimate,
    /// `Delta_i(e_l) = C(e_l, v) Delta_hat_i` for every `l`.
    pub delta_el: Vec<Estimate>,
    /// The `k = 0` term alone (a strictly positive lower bound).
    pub k0_term: Estimate,
    /// Mean contribution of each `k`.
    pub per_k: Vec<f64>,
    /// Frequency of `{tau_k = k}` for each `k`.
    pub ladder_prob: Vec<f64>,
    /// Share of the sum coming from `k > k_max / 2`.
    pub tail_fraction: f64,
    /// Fraction of branched futures that stayed above their start.
    pub future_survival: f64,
    pub horizons: IntermHorizons,
    pub replicas: u64,
}

impl IntermDelta {
    /// `Delta_i(z) = C(z, v) Delta_hat_i`.
    pub fn delta_z(&self, z: &[u64], v: &[f64]) -> Result<Estimate> {
        let c = multinomial_weight(z, v)?;
        Ok(Estimate {
            value: c * self.delta_hat.value,
            stderr: c * self.delta_hat.stderr,
            n: self.delta_hat.n,
        })
    }
}

/// `Delta_hat_i` by branching at the strict descending ladder epochs.
///
/// A tilted path is followed for `k_max` letters. At `k = 0` and at every
/// `k` with `S_k < min(S_0..S_{k-1})` (i.e. `tau_k = k`), an independent
/// future of `n_infty` letters is grown from a copy of the quenched state.
/// The future contributes `V(S_end - S_k) Q(i)^2 / u_i` if it never goes
/// below `S_k` (the h-transform identity for `E^+_k`) and zero otherwise;
/// futures are abandoned as soon as they drop below. `Q` and `u` are read
/// at the end of the future.
pub fn estimate_interm_delta(
    runner: &Runner,
    model: &EnvModel,
    i: usize,
    table: &RenewalTable,
    h: &IntermHorizons,
    replicas: u64,
    seed: u64,
) -> Result<IntermDelta> {
    model.require_regime(Regime::IntermediatelySupercritical)?;
    check_type(model, i)?;
    let tilted = model.tilt()?;
    let km = h.k_max;
    // layout: total | k = 0 term | per-k contributions (km + 1)
    let d = 2 + km + 1;
    let plan = ReplicaPlan::new(seed, &format!("interm/delta/{i}"), replicas);
    let acc = runner.run(
        &plan,
        // tallies: ladder counts per k | futures branched | futures survived
        || EstimatorAccumulator::diagonal(d, km + 3),
        |acc, rng, _| {
            let mut x = vec![0.0; d];
            let mut st = QuenchedState::new(tilted.v.clone())?;
            let mut running_min = f64::INFINITY;
            for k in 0..=km {
                if k > 0 {
                    let letter = tilted.sample_letter(rng)?;
                    st.advance(&letter.law)?;
                }
                let s_k = st.log_scale();
                if s_k < running_min {
                    running_min = s_k;
                    acc.tallies[k] += 1;
                    acc.tallies[km + 1] += 1;
                    let mut fut = st.clone();
                    let mut alive = true;
                    for _ in 0..h.n_infty {
                        let letter = tilted.sample_letter(rng)?;
                        fut.advance(&letter.law)?;
                        if fut.log_scale() < s_k {
                            alive = false;
                            break;
                        }
                    }
                    if alive {
                        acc.tallies[km + 2] += 1;
                        let q = fut.q(i);
                        let u = fut.u_proxy()[i];
                        let c = table.eval(fut.log_scale() - s_k) * q * q / u;
                        x[0] += c;
                        x[2 + k] += c;
                        if k == 0 {
                            x[1] = c;
                        }
                    }
                }
            }
            acc.push(&x);
            Ok(())
        },
    )?;
    let st = &acc.stats;
    let n = acc.replicas as f64;
    let total = st.mean(0);
    let per_k: Vec<f64> = (0..=km).map(|k| st.mean(2 + k)).collect();
    let tail: f64 = per_k[km / 2 + 1..].iter().sum();
    let tail_fraction = if total > 0.0 { tail / total } else { f64::NAN };
    if tail_fraction > h.tail_bound {
        return Err(Error::TailNotConverged(format!(
            "share of Delta_hat from k > k_max/2 is {tail_fraction:.3e} > {:.1e}",
            h.tail_bound
        )));
    }
    let delta_hat = st.estimate(0);
    let delta_el = (0..model.k)
        .map(|l| {
            let mut e = vec![0u64; model.k];
            e[l] = 1;
            let c = multinomial_weight(&e, &model.v)?;
            Ok(Estimate {
                value: c * delta_hat.value,
                stderr: c * delta_hat.stderr,
                n: delta_hat.n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IntermDelta {
        i,
        delta_hat,
        delta_el,
        k0_term: st.estimate(1),
        per_k,
        ladder_prob: acc.tallies[..=km].iter().map(|c| *c as f64 / n).collect(),
        tail_fraction,
        future_survival: acc.tallies[km + 2] as f64 / acc.tallies[km + 1].max(1) as f64,
        horizons: h.clone(),
        replicas: acc.replicas,
    })
}

/// Ratio sequences `P_{e_i}(event) / (kappa^n P(L_n >= 0))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntermRatioReport {
    pub i: usize,
    pub tables: Vec<RatioTable>,
    /// `P(L_n >= 0)` on the grid.
    pub prob_min_nonneg: Vec<RatioRow>,
    pub clamp_count: u64,
}

/// Numerator by tilted quenched averaging, denominator by
/// [`prob_min_nonneg_curve`] on independent streams.
pub fn verify_interm_ratio(
    runner: &Runner,
    model: &EnvModel,
    i: usize,
    events: &[Event],
    n_grid: &[usize],
    replicas: u64,
    walk_replicas: u64,
    seed: u64,
    tolerance: f64,
) -> Result<IntermRatioReport> {
    model.require_regime(Regime::IntermediatelySupercritical)?;
    check_type(model, i)?;
    let grid = check_grid(n_grid)?;
    let tilted = model.tilt()?;
    let (stats, clamps) = tilted_event_means(runner, &tilted, i, events, &grid, replicas, seed, "interm/ratio")?;
    let n_max = *grid.last().expect("nonempty grid");
    let curve = prob_min_nonneg_curve(runner, &tilted, n_max, walk_replicas, seed)?;
    let ne = events.len();
    let tables = events
        .iter()
        .enumerate()
        .map(|(e, ev)| {
            let rows: Vec<RatioRow> = grid
                .iter()
                .enumerate()
                .map(|(g, n)| {
                    let r = stats.estimate(g * ne + e).ratio_independent(&curve[*n]);
                    RatioRow {
                        n: *n,
                        value: r.value,
                        stderr: r.stderr,
                    }
                })
                .collect();
            let vals: Vec<f64> = rows.iter().map(|r| r.value).collect();
            RatioTable {
                event: ev.clone(),
                rows,
                stabilization: Stabilization::of(&vals, tolerance),
            }
        })
        .collect();
    Ok(IntermRatioReport {
        i,
        tables,
        prob_min_nonneg: grid
            .iter()
            .map(|n| RatioRow {
                n: *n,
                value: curve[*n].value,
                stderr: curve[*n].stderr,
            })
            .collect(),
        clamp_count: clamps,
    })
}

/// Output of [`estimate_q`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QReport {
    pub n: usize,
    pub q_dist: Vec<ZEntry>,
    pub t_hat: Vec<ZEntry>,
    pub enumerated_total: f64,
    /// `E^+[1]`, which should be close to one.
    pub plus_mass: Estimate,
}

/// `q(z) = |v| C(z, v) T(z)` with
/// `T(z) = E^+[sum_i z_i Q(i)^2/(|v| u_i R(i)) prod_j R(j)^{z_j}]`, the inner
/// quantities taken at horizon `n` and `E^+` realized as
/// `E[. V(S_n); L_n >= 0]`.
pub fn estimate_q(
    runner: &Runner,
    model: &EnvModel,
    z_max: u64,
    n: usize,
    table: Option<&RenewalTable>,
    replicas: u64,
    seed: u64,
) -> Result<QReport> {
    model.require_regime(Regime::IntermediatelySupercritical)?;
    let table = table.ok_or(Error::MissingRenewalTable)?;
    let tilted = model.tilt()?;
    let support = enumerate_support(model.k, z_max);
    let vn = model.v_norm();
    let plan = ReplicaPlan::new(seed, "interm/q", replicas);
    let acc = runner.run(
        &plan,
        || EstimatorAccumulator::diagonal(support.len() + 1, 0),
        |acc, rng, _| {
            let mut x = vec![0.0; support.len() + 1];
            let mut st = QuenchedState::new(tilted.v.clone())?;
            let mut alive = true;
            for _ in 0..n {
                let letter = tilted.sample_letter(rng)?;
                st.advance(&letter.law)?;
                if st.log_scale() < 0.0 {
                    alive = false;
                    break;
                }
            }
            if alive {
                let w = table.eval(st.log_scale());
                let q: Vec<f64> = (0..model.k).map(|j| st.q(j)).collect();
                let r: Vec<f64> = q.iter().map(|a| 1.0 - a).collect();
                let u = st.u_proxy();
                for (a, z) in support.iter().enumerate() {
                    x[a] = w * p_integrand(z, &q, &r, &u) / vn;
                }
                x[support.len()] = w;
            }
            acc.push(&x);
            Ok(())
        },
    )?;
    let st = &acc.stats;
    let mut q_dist = Vec::with_capacity(support.len());
    let mut t_hat = Vec::with_capacity(support.len());
    for (a, z) in support.iter().enumerate() {
        let c = multinomial_weight(z, &model.v)?;
        t_hat.push(ZEntry {
            z: z.clone(),
            value: st.mean(a),
            stderr: st.stderr(a),
        });
        q_dist.push(ZEntry {
            z: z.clone(),
            value: vn * c * st.mean(a),
            stderr: vn * c * st.stderr(a),
        });
    }
    let enumerated_total = q_dist.iter().map(|e| e.value).sum();
    Ok(QReport {
        n,
        q_dist,
        t_hat,
        enumerated_total,
        plus_mass: st.estimate(support.len()),
    })
}

/// `E[e^{S_n} P_z(|Z_n| = k) | L_n >= 0]` for each `k` in `ks`, each on its
/// own independent replica streams.
pub fn lemma_zj_check(
    runner: &Runner,
    model: &EnvModel,
    z: &[u64],
    ks: &[u64],
    n: usize,
    replicas: u64,
    seed: u64,
) -> Result<Vec<Estimate>> {
    model.require_regime(Regime::IntermediatelySupercritical)?;
    if z.len() != model.k || z.iter().all(|x| *x == 0) {
        return Err(Error::DomainError("z must be a nonzero K-vector".into()));
    }
    let tilted = model.tilt()?;
    ks.iter()
        .map(|&kk| {
            if kk == 0 {
                return Err(Error::DomainError("k must be at least 1".into()));
            }
            let plan = ReplicaPlan::new(seed, &format!("interm/lemma_zj/{kk}"), replicas);
            let cm = runner.run(
                &plan,
                || CoMoments::full(2),
                |acc, rng, _| {
                    let mut st = QuenchedState::new(tilted.v.clone())?;
                    for _ in 0..n {
                        let letter = tilted.sample_letter(rng)?;
                        st.advance(&letter.law)?;
                        if st.log_scale() < 0.0 {
                            acc.push(&[0.0, 0.0]);
                            return Ok(());
                        }
                    }
                    let p = scaled_total_probs_from(&st, z, kk)?[kk as usize - 1];
                    acc.push(&[p, 1.0]);
                    Ok(())
                },
            )?;
            Ok(cm.ratio(0, 1))
        })
        .collect()
}

/// Empirical law of `Z_{tau_{floor(n/2), n}}` given `{Z_n = e_l}` from
/// `e_i`, by the factorization at the random time `tau` on a common tilted
/// environment.
pub fn cond_tau_law(
    runner: &Runner,
    model: &EnvModel,
    i: usize,
    l: usize,
    z_max: u64,
    n: usize,
    replicas: u64,
    seed: u64,
) -> Result<ConditionalTable> {
    model.require_regime(Regime::IntermediatelySupercritical)?;
    check_type(model, i)?;
    check_type(model, l)?;
    if n < 2 {
        return Err(Error::DomainError("n must be at least 2".into()));
    }
    let tilted = model.tilt()?;
    let support = enumerate_support(model.k, z_max);
    let ns = support.len();
    let mut el = vec![0u64; model.k];
    el[l] = 1;
    let start = n / 2;
    let plan = ReplicaPlan::new(seed, &format!("interm/cond_tau/{i}/{l}"), replicas);
    let cm = runner.run(
        &plan,
        || CoMoments::full(ns + 1),
        |acc, rng, _| {
            let mut laws = Vec::with_capacity(n);
            let mut xs = Vec::with_capacity(n);
            for _ in 0..n {
                let letter = tilted.sample_letter(rng)?;
                xs.push(letter.x);
                laws.push(letter.law);
            }
            let walk = WalkPath::from_increments(&xs);
            let tau = functionals(&walk, Some(start))?.tau_kn;
            let pre = QuenchedState::from_env(tilted.v.clone(), &laws[..tau])?;
            let seg = QuenchedState::from_env(tilted.v.clone(), &laws[tau..])?;
            let mut full = pre.clone();
            for law in &laws[tau..] {
                full.advance(law)?;
            }
            let mut x = Vec::with_capacity(ns + 1);
            for z in &support {
                let a = if tau == 0 {
                    // Z_0 = e_i
                    let hit = z.iter().enumerate().all(|(j, zj)| *zj == u64::from(j == i));
                    if hit { 1.0 } else { 0.0 }
                } else {
                    pre.scaled_local_prob_vector(i, z)?
                };
                x.push(a * scaled_segment_prob_to_el(&seg, z, l)?);
            }
            x.push(full.scaled_local_prob_vector(i, &el)?);
            acc.push(&x);
            Ok(())
        },
    )?;
    let entries = conditional_entries(&cm, &support);
    let enumerated_total = entries.iter().map(|e| e.value).sum();
    Ok(ConditionalTable {
        n,
        m: start,
        entries,
        enumerated_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multinomial_weight_examples() {
        assert!((multinomial_weight(&[1, 0], &[1.0, 1.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!((multinomial_weight(&[2, 1], &[1.0, 2.0]).unwrap() - 2.0 / 27.0).abs() < 1e-15);
        assert!(multinomial_weight(&[0, 0], &[1.0, 1.0]).is_err());
        let v = [1.0, 2.0, 0.5];
        let vn: f64 = v.iter().sum();
        let total: f64 = enumerate_support(3, 4)
            .iter()
            .filter(|z| z.iter().sum::<u64>() == 4)
            .map(|z| multinomial_weight(z, &v).unwrap() * vn)
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stabilization_verdicts() {
        assert_eq!(Stabilization::of(&[1.0], 0.1).verdict, Verdict::InsufficientGrid);
        assert_eq!(Stabilization::of(&[1.0, 1.01], 0.05).verdict, Verdict::Stable);
        assert_eq!(Stabilization::of(&[1.0, 2.0], 0.05).verdict, Verdict::NotStable);
    }

    #[test]
    fn p_tail_completes_the_distribution() {
        let v = [1.0, 2.0];
        let u = [0.3, 0.35];
        let g = 2.4;
        let q: Vec<f64> = u.iter().map(|x| 3.0 * x / g).collect();
        let r: Vec<f64> = q.iter().map(|x| 1.0 - x).collect();
        let zmax = 6;
        let enumerated: f64 = enumerate_support(2, zmax)
            .iter()
            .map(|z| multinomial_weight(z, &v).unwrap() * p_integrand(z, &q, &r, &u))
            .sum();
        let tail = p_analytic_tail(zmax, &q, &r, &u, &v);
        assert!((enumerated + tail - 1.0).abs() < 1e-12);
    }
}
