//! The associated random walk `S_n = X_1 + ... + X_n`: path functionals, the
//! probability of staying nonnegative, the renewal function `V` of the walk
//! killed below zero and expectations under the conditioned measure
//! `E^+[Y_n] = E[Y_n V(S_n); L_n >= 0]`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accum::{EstimatorAccumulator, Estimate, Merge, ReplicaPlan, Runner};
use crate::env::{EnvModel, EnvPrefix};
use crate::error::{Error, Result};

/// A realized walk `S_0 = 0, S_1, ..., S_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkPath {
    s: Vec<f64>,
}

impl WalkPath {
    /// Walk with the given increments.
    pub fn from_increments(x: &[f64]) -> Self {
        let mut s = Vec::with_capacity(x.len() + 1);
        let mut acc = 0.0;
        s.push(0.0);
        for xi in x {
            acc += xi;
            s.push(acc);
        }
        Self { s }
    }

    /// Walk from explicit positions; `s[0]` must be zero.
    pub fn from_positions(s: Vec<f64>) -> Result<Self> {
        if s.first() != Some(&0.0) {
            return Err(Error::DomainError("a walk must start at S_0 = 0".into()));
        }
        Ok(Self { s })
    }

    /// Horizon `n`.
    pub fn n(&self) -> usize {
        self.s.len() - 1
    }

    /// Positions `S_0..S_n`.
    pub fn positions(&self) -> &[f64] {
        &self.s
    }

    /// Increments `X_1..X_n`.
    pub fn increments(&self) -> Vec<f64> {
        self.s.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Minimum, maximum and first-minimum times of a path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Functionals {
    pub n: usize,
    /// `L_n = min(S_0..S_n)`.
    pub l_n: f64,
    /// `M_n = max(S_0..S_n)`.
    pub m_n: f64,
    /// First index attaining `L_n`.
    pub tau_n: usize,
    /// Start `k` of the shifted functionals.
    pub k: usize,
    /// `L_{k,n} = min_{0 <= j <= n-k} (S_{k+j} - S_k)`.
    pub l_kn: f64,
    /// First `j` in `[k, n]` with `S_j = min(S_k..S_n)`.
    pub tau_kn: usize,
}

/// First index of the minimum of `s[from..]`, as an absolute index.
fn first_argmin(s: &[f64], from: usize) -> usize {
    let mut best = from;
    for j in from + 1..s.len() {
        if s[j] < s[best] {
            best = j;
        }
    }
    best
}

/// Path functionals, with the shifted ones started at `k` (default 0).
pub fn functionals(path: &WalkPath, k: Option<usize>) -> Result<Functionals> {
    let s = &path.s;
    let n = path.n();
    let k = k.unwrap_or(0);
    if k > n {
        return Err(Error::IndexError { index: k, max: n });
    }
    let tau_n = first_argmin(s, 0);
    let tau_kn = first_argmin(s, k);
    let m_n = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(Functionals {
        n,
        l_n: s[tau_n],
        m_n,
        tau_n,
        k,
        l_kn: s[tau_kn] - s[k],
        tau_kn,
    })
}

/// Draws the time of the first strict descent below zero, capped at
/// `n_max + 1` (meaning the walk stayed nonnegative up to `n_max`).
fn first_negative_time(model: &EnvModel, n_max: usize, rng: &mut crate::accum::ReplicaRng) -> usize {
    let mut s = 0.0;
    for k in 1..=n_max {
        s += model.sample_x(rng);
        if s < 0.0 {
            return k;
        }
    }
    n_max + 1
}

/// Estimates of `P(L_n >= 0)` for `n = 0..=n_max` from shared paths, so the
/// curve is nonincreasing in `n` by construction.
pub fn prob_min_nonneg_curve(
    runner: &Runner,
    model: &EnvModel,
    n_max: usize,
    replicas: u64,
    seed: u64,
) -> Result<Vec<Estimate>> {
    model.validate()?;
    let plan = ReplicaPlan::new(seed, "prob_min_nonneg", replicas);
    let acc = runner.run(
        &plan,
        || EstimatorAccumulator::diagonal(0, n_max + 2),
        |acc, rng, _| {
            let t = first_negative_time(model, n_max, rng);
            acc.tallies[t] += 1;
            acc.replicas += 1;
            Ok(())
        },
    )?;
    let total = acc.replicas as f64;
    let mut out = Vec::with_capacity(n_max + 1);
    // {L_n >= 0} = {first negative time > n}
    let mut dead = 0u64;
    for n in 0..=n_max {
        dead += acc.tallies[n];
        let p = (acc.replicas - dead) as f64 / total;
        out.push(Estimate {
            value: p,
            stderr: (p * (1.0 - p) / total).sqrt(),
            n: acc.replicas,
        });
    }
    Ok(out)
}

/// Estimate of `P(L_n >= 0)` with its binomial standard error.
pub fn prob_min_nonneg(runner: &Runner, model: &EnvModel, n: usize, replicas: u64, seed: u64) -> Result<Estimate> {
    Ok(prob_min_nonneg_curve(runner, model, n, replicas, seed)?[n])
}

/// Estimated renewal function on a grid, with linear extrapolation beyond
/// the last grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalTable {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Truncation horizon `K_max`.
    pub k_max: u64,
    /// Number of replicas `N`.
    pub replicas: u64,
    /// Fraction of paths still strictly below zero at `K_max`, i.e. the
    /// magnitude of the last included term `P(max(S_1..S_K) < 0)`.
    pub truncated_fraction: f64,
    /// Slope used beyond the last grid point.
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct RenewalAcc {
    /// `sum_paths c_x` at each grid point (difference-encoded until reduced).
    s1: Vec<u64>,
    /// `sum_paths c_x^2` at each grid point (difference-encoded).
    s2: Vec<u128>,
    alive: u64,
    paths: u64,
}

impl Merge for RenewalAcc {
    fn merge(&mut self, other: &Self) {
        for (a, b) in self.s1.iter_mut().zip(&other.s1) {
            *a += *b;
        }
        for (a, b) in self.s2.iter_mut().zip(&other.s2) {
            *a += *b;
        }
        self.alive += other.alive;
        self.paths += other.paths;
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid[0] != 0.0 {
        return Err(Error::DomainError("the renewal grid must start at 0".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::DomainError("the renewal grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Least-squares slope of `values` against `grid` over the upper half.
fn tail_slope(grid: &[f64], values: &[f64]) -> f64 {
    let m = grid.len();
    if m < 2 {
        return 0.0;
    }
    let from = m / 2;
    let xs = &grid[from..];
    let ys = &values[from..];
    if xs.len() < 2 {
        return (values[m - 1] - values[m - 2]) / (grid[m - 1] - grid[m - 2]);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxy / sxx).max(0.0)
}

/// `V(x) = 1 + sum_{k=1}^{K_max} P(-S_k <= x, max(S_1..S_k) < 0)` on `grid`.
///
/// Each path is followed until it first becomes nonnegative (or `K_max`);
/// the depth `-S_k` of every visit is binned to the first grid point at or
/// above it. Path counts are tallied as integers, so the estimate does not
/// depend on how replicas are distributed over threads.
pub fn renewal_function(
    runner: &Runner,
    model: &EnvModel,
    grid: &[f64],
    k_max: u64,
    replicas: u64,
    seed: u64,
) -> Result<RenewalTable> {
    model.validate()?;
    check_grid(grid)?;
    if replicas == 0 {
        return Err(Error::DomainError("renewal_function needs N >= 1".into()));
    }
    let m = grid.len();
    let plan = ReplicaPlan::new(seed, "renewal", replicas);
    let acc = runner.run(
        &plan,
        || RenewalAcc {
            s1: vec![0; m],
            s2: vec![0; m],
            alive: 0,
            paths: 0,
        },
        |acc, rng, _| {
            let mut bins: Vec<usize> = Vec::new();
            let mut s = 0.0;
            let mut alive = true;
            for _ in 0..k_max {
                s += model.sample_x(rng);
                if s >= 0.0 {
                    alive = false;
                    break;
                }
                let b = grid.partition_point(|g| *g < -s);
                if b < m {
                    bins.push(b);
                }
            }
            bins.sort_unstable();
            // c_x steps from t-1 to t at the t-th smallest bin
            for (t, b) in bins.iter().enumerate() {
                let t = t as u64 + 1;
                acc.s1[*b] += 1;
                acc.s2[*b] += (2 * t - 1) as u128;
            }
            acc.alive += alive as u64;
            acc.paths += 1;
            Ok(())
        },
    )?;
    let n = acc.paths as f64;
    let (mut c1, mut c2) = (0u64, 0u128);
    let mut values = Vec::with_capacity(m);
    let mut stderr = Vec::with_capacity(m);
    for g in 0..m {
        c1 += acc.s1[g];
        c2 += acc.s2[g];
        let mean = c1 as f64 / n;
        let var = if acc.paths > 1 {
            ((c2 as f64 - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        values.push(1.0 + mean);
        stderr.push((var / n).sqrt());
    }
    let slope = tail_slope(grid, &values);
    Ok(RenewalTable {
        grid: grid.to_vec(),
        values,
        stderr,
        k_max,
        replicas: acc.paths,
        truncated_fraction: acc.alive as f64 / n,
        slope,
    })
}

/// Number of interleaved batches used for the standard errors of
/// [`renewal_function_ladder`].
const LADDER_BATCHES: usize = 32;

#[derive(Clone, Debug, PartialEq)]
struct LadderAcc {
    /// Per batch and internal bin: number of ladder heights in the bin.
    counts: Vec<Vec<u64>>,
    /// Per batch and internal bin: sum of the ladder heights in the bin.
    sums: Vec<Vec<f64>>,
    /// Per batch: number of completed ladder excursions and their height sum.
    done: Vec<u64>,
    total: Vec<f64>,
    truncated: u64,
}

impl Merge for LadderAcc {
    fn merge(&mut self, other: &Self) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        for (a, b) in self.done.iter_mut().zip(&other.done) {
            *a += *b;
        }
        for (a, b) in self.total.iter_mut().zip(&other.total) {
            *a += *b;
        }
        self.truncated += other.truncated;
    }
}

/// Solves `U(x) = 1 + E[U(x - H); H <= x]` on the uniform grid `j * step`,
/// where the law of `H` is given by per-bin masses placed at the bin means
/// (bin `j` covers `((j-1) step, j step]`). `U` is linear between grid
/// points and vanishes below zero.
fn solve_renewal(mass: &[f64], mean: &[f64], step: f64, m: usize) -> Vec<f64> {
    // fractional offset of the atom inside its bin, measured from the right end
    let frac: Vec<f64> = mean
        .iter()
        .enumerate()
        .map(|(j, a)| if j == 0 { 0.0 } else { ((j as f64 * step - a) / step).clamp(0.0, 1.0) })
        .collect();
    let mut u = vec![0.0; m];
    u[0] = 1.0;
    for k in 1..m {
        let mut rhs = 1.0;
        for j in 2..=k.min(mass.len() - 1) {
            let (p, f) = (mass[j], frac[j]);
            if p > 0.0 {
                rhs += p * ((1.0 - f) * u[k - j] + f * u[k - j + 1]);
            }
        }
        let (p1, f1) = if mass.len() > 1 { (mass[1], frac[1]) } else { (0.0, 0.0) };
        rhs += p1 * (1.0 - f1) * u[k - 1];
        u[k] = rhs / (1.0 - p1 * f1);
    }
    u
}

/// Renewal function of the walk killed below zero, computed from its
/// descending ladder heights.
///
/// `V(x) = 1 + sum_k P(-S_k <= x, max(S_1..S_k) < 0)` equals, by time
/// reversal, the renewal function `sum_j P(H_1 + ... + H_j <= x)` of the
/// strict descending ladder heights. Each replica follows the walk until it
/// first becomes negative (at most `k_max` steps) and records the undershoot
/// `H = -S_T`. The ladder-height law is binned on a fine uniform grid with
/// the within-bin mean as atom, the renewal equation is solved numerically
/// and the result is interpolated to `grid`. Beyond the grid the table
/// extrapolates with the renewal-theorem slope `1 / E[H]`.
///
/// Compared with [`renewal_function`], a path that does not finish within
/// `k_max` steps is simply dropped (reported as `truncated_fraction`)
/// instead of removing its deep visits, so the estimate stays accurate far
/// from the origin. Standard errors come from 32 interleaved batches.
pub fn renewal_function_ladder(
    runner: &Runner,
    model: &EnvModel,
    grid: &[f64],
    k_max: u64,
    replicas: u64,
    seed: u64,
) -> Result<RenewalTable> {
    model.validate()?;
    check_grid(grid)?;
    if replicas == 0 {
        return Err(Error::DomainError("renewal_function_ladder needs N >= 1".into()));
    }
    let x_max = grid[grid.len() - 1];
    let min_gap = grid
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let step = if x_max > 0.0 { min_gap.min(x_max / 2000.0) } else { 1.0 };
    // internal grid 0, step, ..., covering x_max
    let m = (x_max / step).ceil() as usize + 1;
    let bins = m + 1;
    let b = LADDER_BATCHES;
    let plan = ReplicaPlan::new(seed, "renewal_ladder", replicas);
    let acc = runner.run(
        &plan,
        || LadderAcc {
            counts: vec![vec![0; bins]; b],
            sums: vec![vec![0.0; bins]; b],
            done: vec![0; b],
            total: vec![0.0; b],
            truncated: 0,
        },
        |acc, rng, r| {
            let mut s = 0.0;
            for _ in 0..k_max {
                s += model.sample_x(rng);
                if s < 0.0 {
                    let h = -s;
                    let batch = (r % b as u64) as usize;
                    let j = (h / step).ceil() as usize;
                    if j < bins {
                        acc.counts[batch][j] += 1;
                        acc.sums[batch][j] += h;
                    }
                    acc.done[batch] += 1;
                    acc.total[batch] += h;
                    return Ok(());
                }
            }
            acc.truncated += 1;
            Ok(())
        },
    )?;
    let table_for = |batches: &[usize]| -> (Vec<f64>, f64) {
        let n: u64 = batches.iter().map(|&k| acc.done[k]).sum();
        if n == 0 {
            return (vec![1.0; m], 0.0);
        }
        let mut mass = vec![0.0; bins];
        let mut mean = vec![0.0; bins];
        for j in 0..bins {
            let c: u64 = batches.iter().map(|&k| acc.counts[k][j]).sum();
            if c > 0 {
                let sum: f64 = batches.iter().map(|&k| acc.sums[k][j]).sum();
                mass[j] = c as f64 / n as f64;
                mean[j] = sum / c as f64;
            }
        }
        let eh = batches.iter().map(|&k| acc.total[k]).sum::<f64>() / n as f64;
        let u = solve_renewal(&mass, &mean, step, m);
        let slope = if eh > 0.0 { 1.0 / eh } else { 0.0 };
        (u, slope)
    };
    let interp = |u: &[f64], x: f64| -> f64 {
        let t = x / step;
        let k = (t.floor() as usize).min(m - 1);
        if k + 1 >= m {
            return u[m - 1];
        }
        let f = t - k as f64;
        u[k] + (u[k + 1] - u[k]) * f
    };
    let all: Vec<usize> = (0..b).collect();
    let (u, slope) = table_for(&all);
    let values: Vec<f64> = grid.iter().map(|&x| interp(&u, x)).collect();
    let per_batch: Vec<Vec<f64>> = (0..b)
        .map(|k| {
            let (ub, _) = table_for(&[k]);
            grid.iter().map(|&x| interp(&ub, x)).collect()
        })
        .collect();
    let stderr: Vec<f64> = (0..grid.len())
        .map(|g| {
            let mu = per_batch.iter().map(|v| v[g]).sum::<f64>() / b as f64;
            let var = per_batch.iter().map(|v| (v[g] - mu).powi(2)).sum::<f64>() / (b as f64 - 1.0);
            (var / b as f64).sqrt()
        })
        .collect();
    let done: u64 = acc.done.iter().sum();
    Ok(RenewalTable {
        grid: grid.to_vec(),
        values,
        stderr,
        k_max,
        replicas: done + acc.truncated,
        truncated_fraction: acc.truncated as f64 / (done + acc.truncated) as f64,
        slope,
    })
}

/// Evenly spaced grid `0, h, 2h, ..., x_max`.
pub fn uniform_grid(x_max: f64, step: f64) -> Vec<f64> {
    let m = (x_max / step).round() as usize;
    (0..=m).map(|i| i as f64 * step).collect()
}

#[derive(Serialize, Deserialize)]
struct RenewalRow {
    x: f64,
    #[serde(rename = "V")]
    v: f64,
    stderr: f64,
}

impl RenewalTable {
    /// `V_hat(x)`: zero for `x < 0`, linear interpolation on the grid and
    /// linear extrapolation beyond it.
    pub fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let m = self.grid.len();
        let last = self.grid[m - 1];
        if x >= last {
            return self.values[m - 1] + self.slope * (x - last);
        }
        let j = self.grid.partition_point(|g| *g <= x);
        // grid[j-1] <= x < grid[j]
        let (x0, x1) = (self.grid[j - 1], self.grid[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }

    /// Whether the values are nondecreasing on the grid.
    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }

    /// Writes the `(x, V, stderr)` table as CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for ((x, v), se) in self.grid.iter().zip(&self.values).zip(&self.stderr) {
            wr.serialize(RenewalRow { x: *x, v: *v, stderr: *se })?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a `(x, V, stderr)` table. Horizon and replica count are not part
    /// of the CSV and are set to zero.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let (mut grid, mut values, mut stderr) = (Vec::new(), Vec::new(), Vec::new());
        for row in rd.deserialize() {
            let row: RenewalRow = row?;
            grid.push(row.x);
            values.push(row.v);
            stderr.push(row.stderr);
        }
        check_grid(&grid)?;
        let slope = tail_slope(&grid, &values);
        Ok(Self {
            grid,
            values,
            stderr,
            k_max: 0,
            replicas: 0,
            truncated_fraction: f64::NAN,
            slope,
        })
    }

    /// Saves the table as CSV.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Loads a CSV table.
    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// One point of the harmonicity check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicityPoint {
    pub x: f64,
    pub v: f64,
    /// `E[V_hat(x + X); x + X >= 0]`.
    pub lhs: f64,
    /// `|lhs - v| / v`.
    pub rel_residual: f64,
}

/// Checks `E[V(x + X); x + X >= 0] = V(x)` for `X ~ N(mean, sd^2)` at the
/// points `xs`, integrating the Gaussian against the tabulated `V_hat` by
/// composite Simpson quadrature (no sampling noise beyond that of `V_hat`).
pub fn harmonicity(table: &RenewalTable, mean: f64, sd: f64, xs: &[f64]) -> Vec<HarmonicityPoint> {
    xs.iter()
        .map(|&x| {
            let lhs = if sd == 0.0 {
                table.eval(x + mean)
            } else {
                let t_lo = (-(x + mean) / sd).max(-12.0);
                let t_hi = 12.0f64;
                if t_lo >= t_hi {
                    0.0
                } else {
                    let n = 8000usize;
                    let h = (t_hi - t_lo) / n as f64;
                    let f = |t: f64| {
                        let y = (x + mean + sd * t).max(0.0);
                        table.eval(y) * (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
                    };
                    let mut acc = f(t_lo) + f(t_hi);
                    for i in 1..n {
                        let t = t_lo + i as f64 * h;
                        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
                    }
                    acc * h / 3.0
                }
            };
            let v = table.eval(x);
            HarmonicityPoint {
                x,
                v,
                lhs,
                rel_residual: (lhs - v).abs() / v,
            }
        })
        .collect()
}

/// Follows one tilted prefix of length `n`, stopping early if the walk goes
/// below zero. Returns `None` when `L_n < 0`.
pub fn sample_nonneg_prefix(
    model: &EnvModel,
    n: usize,
    rng: &mut crate::accum::ReplicaRng,
) -> Result<Option<EnvPrefix>> {
    let mut laws = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    let mut s = 0.0;
    for _ in 0..n {
        let l = model.sample_letter(rng)?;
        s += l.x;
        if s < 0.0 {
            return Ok(None);
        }
        laws.push(l.law);
        xs.push(l.x);
    }
    Ok(Some(EnvPrefix {
        v: model.v.clone(),
        laws,
        x: xs,
    }))
}

/// `E^+[g] = E[g V(S_n); L_n >= 0]` under the (tilted) model `model`.
pub fn plus_expect<F>(
    runner: &Runner,
    model: &EnvModel,
    n: usize,
    replicas: u64,
    seed: u64,
    table: Option<&RenewalTable>,
    g: F,
) -> Result<Estimate>
where
    F: Fn(&EnvPrefix) -> f64 + Sync,
{
    let table = table.ok_or(Error::MissingRenewalTable)?;
    let plan = ReplicaPlan::new(seed, "plus_expect", replicas);
    let acc = runner.run(
        &plan,
        || EstimatorAccumulator::diagonal(1, 0),
        |acc, rng, _| {
            let val = match sample_nonneg_prefix(model, n, rng)? {
                Some(p) => g(&p) * table.eval(p.s_n()),
                None => 0.0,
            };
            acc.push(&[val]);
            Ok(())
        },
    )?;
    Ok(acc.stats.estimate(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn functionals_examples() {
        let p = WalkPath::from_positions(vec![0.0, 1.0, -1.0, 2.0]).unwrap();
        let f = functionals(&p, None).unwrap();
        assert_eq!((f.l_n, f.tau_n, f.m_n), (-1.0, 2, 2.0));
        let p = WalkPath::from_positions(vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(functionals(&p, None).unwrap().tau_n, 0);
        let p = WalkPath::from_positions(vec![0.0, 2.0, 1.0, 3.0]).unwrap();
        let f = functionals(&p, Some(1)).unwrap();
        assert_eq!((f.tau_kn, f.l_kn), (2, -1.0));
        assert!(functionals(&p, Some(4)).is_err());
    }

    #[test]
    fn table_eval_interpolates_and_extrapolates() {
        let t = RenewalTable {
            grid: vec![0.0, 1.0, 2.0],
            values: vec![1.0, 2.0, 3.0],
            stderr: vec![0.0; 3],
            k_max: 1,
            replicas: 1,
            truncated_fraction: 0.0,
            slope: 1.0,
        };
        assert_eq!(t.eval(-0.1), 0.0);
        assert_eq!(t.eval(0.0), 1.0);
        assert_eq!(t.eval(0.5), 1.5);
        assert_eq!(t.eval(1.0), 2.0);
        assert_eq!(t.eval(4.0), 5.0);
    }
}
