//! Mergeable Monte Carlo accumulators and the deterministic replica runner.
//!
//! Replicas are grouped into fixed-size blocks. Every replica owns an
//! independent ChaCha stream derived from `(seed, tag, replica index)`, each
//! block is accumulated sequentially, and block partials are folded in block
//! order. The result therefore depends only on the plan, never on the number
//! of worker threads or on how blocks are split into shards: concatenating
//! the block partials of several shards and reducing them gives the same bits
//! as a single run.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-replica random number generator.
pub type ReplicaRng = ChaCha8Rng;

/// Associative combination of partial results.
pub trait Merge {
    /// Absorbs `other` into `self`.
    fn merge(&mut self, other: &Self);
}

/// A point estimate with its normal-approximation standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    /// Number of replicas behind the estimate.
    pub n: u64,
}

impl Estimate {
    /// An exact value.
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            stderr: 0.0,
            n: 0,
        }
    }

    /// `|a - b| <= k * sqrt(se_a^2 + se_b^2)`.
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * self.stderr.hypot(other.stderr)
    }

    /// Ratio `a / b` of independent estimates (delta method).
    pub fn ratio_independent(&self, other: &Estimate) -> Estimate {
        let r = self.value / other.value;
        let rel = (self.stderr / self.value).hypot(other.stderr / other.value);
        Estimate {
            value: r,
            stderr: (r * rel).abs(),
            n: self.n.min(other.n),
        }
    }
}

/// Streaming means and (co)variances of a `d`-dimensional observation,
/// merged with the pairwise update of Chan, Golub and LeVeque.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoMoments {
    d: usize,
    full: bool,
    count: u64,
    mean: Vec<f64>,
    /// Co-moment sums: `d*d` entries when `full`, else the `d` diagonal ones.
    m2: Vec<f64>,
}

impl CoMoments {
    /// Tracks means and the full covariance matrix.
    pub fn full(d: usize) -> Self {
        Self {
            d,
            full: true,
            count: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d * d],
        }
    }

    /// Tracks means and variances only.
    pub fn diagonal(d: usize) -> Self {
        Self {
            d,
            full: false,
            count: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    /// Dimension.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of observations.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Adds one observation.
    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.d);
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        if self.full {
            for a in 0..self.d {
                for b in 0..self.d {
                    self.m2[a * self.d + b] += delta[a] * (x[b] - self.mean[b]);
                }
            }
        } else {
            for a in 0..self.d {
                self.m2[a] += delta[a] * (x[a] - self.mean[a]);
            }
        }
    }

    /// Mean of component `a`.
    pub fn mean(&self, a: usize) -> f64 {
        self.mean[a]
    }

    /// All means.
    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    /// Sample covariance of components `a`, `b` (requires `full` unless `a == b`).
    pub fn cov(&self, a: usize, b: usize) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let m = if self.full {
            self.m2[a * self.d + b]
        } else {
            assert_eq!(a, b, "off-diagonal covariance needs full co-moments");
            self.m2[a]
        };
        m / (self.count - 1) as f64
    }

    /// Standard error of the mean of component `a`.
    pub fn stderr(&self, a: usize) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.cov(a, a).max(0.0) / self.count as f64).sqrt()
    }

    /// Mean and standard error of component `a`.
    pub fn estimate(&self, a: usize) -> Estimate {
        Estimate {
            value: self.mean(a),
            stderr: self.stderr(a),
            n: self.count,
        }
    }

    /// Standard error of the mean of `sum_a c_a X_a`.
    pub fn linear_stderr(&self, c: &[(usize, f64)]) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let mut var = 0.0;
        for &(a, ca) in c {
            for &(b, cb) in c {
                var += ca * cb * self.cov(a, b);
            }
        }
        (var.max(0.0) / self.count as f64).sqrt()
    }

    /// Ratio of means `mean(a) / mean(b)` with a delta-method standard error
    /// that accounts for the correlation of the two components.
    pub fn ratio(&self, a: usize, b: usize) -> Estimate {
        let (ma, mb) = (self.mean(a), self.mean(b));
        let r = ma / mb;
        let se = self.linear_stderr(&[(a, 1.0), (b, -r)]) / mb.abs();
        Estimate {
            value: r,
            stderr: se,
            n: self.count,
        }
    }

    /// Ratio `mean(a) / sum_{b in den} mean(b)` with delta-method error.
    pub fn ratio_to_sum(&self, a: usize, den: &[usize]) -> Estimate {
        let mb: f64 = den.iter().map(|b| self.mean(*b)).sum();
        let r = self.mean(a) / mb;
        let mut c: Vec<(usize, f64)> = den.iter().map(|b| (*b, -r)).collect();
        match c.iter_mut().find(|(i, _)| *i == a) {
            Some(entry) => entry.1 += 1.0,
            None => c.push((a, 1.0)),
        }
        Estimate {
            value: r,
            stderr: self.linear_stderr(&c) / mb.abs(),
            n: self.count,
        }
    }
}

impl Merge for CoMoments {
    fn merge(&mut self, other: &Self) {
        assert_eq!(self.d, other.d);
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta: Vec<f64> = other
            .mean
            .iter()
            .zip(&self.mean)
            .map(|(b, a)| b - a)
            .collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * nb / n;
        }
        let w = na * nb / n;
        if self.full {
            for a in 0..self.d {
                for b in 0..self.d {
                    let i = a * self.d + b;
                    self.m2[i] += other.m2[i] + delta[a] * delta[b] * w;
                }
            }
        } else {
            for a in 0..self.d {
                self.m2[a] += other.m2[a] + delta[a] * delta[a] * w;
            }
        }
        self.count += other.count;
    }
}

/// General-purpose estimator accumulator: co-moments of the per-replica
/// observation vector, integer tallies (event counts, clamp counters) and
/// the number of replicas absorbed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorAccumulator {
    pub stats: CoMoments,
    pub tallies: Vec<u64>,
    pub replicas: u64,
}

impl EstimatorAccumulator {
    /// Accumulator with full covariance tracking.
    pub fn full(d: usize, tallies: usize) -> Self {
        Self {
            stats: CoMoments::full(d),
            tallies: vec![0; tallies],
            replicas: 0,
        }
    }

    /// Accumulator with variance-only tracking.
    pub fn diagonal(d: usize, tallies: usize) -> Self {
        Self {
            stats: CoMoments::diagonal(d),
            tallies: vec![0; tallies],
            replicas: 0,
        }
    }

    /// Records one replica's observation.
    pub fn push(&mut self, x: &[f64]) {
        self.stats.push(x);
        self.replicas += 1;
    }
}

impl Merge for EstimatorAccumulator {
    fn merge(&mut self, other: &Self) {
        self.stats.merge(&other.stats);
        for (a, b) in self.tallies.iter_mut().zip(&other.tallies) {
            *a += *b;
        }
        self.replicas += other.replicas;
    }
}

/// Elementwise merge of equally shaped accumulator vectors.
impl<A: Merge> Merge for Vec<A> {
    fn merge(&mut self, other: &Self) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

/// Per-replica samples kept in replica order; merging concatenates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Samples<T>(pub Vec<T>);

impl<T: Clone> Merge for Samples<T> {
    fn merge(&mut self, other: &Self) {
        self.0.extend(other.0.iter().cloned());
    }
}

impl<A: Merge, B: Merge> Merge for (A, B) {
    fn merge(&mut self, other: &Self) {
        self.0.merge(&other.0);
        self.1.merge(&other.1);
    }
}

/// Stable 64-bit tag of a stream label (FNV-1a), used to give every
/// estimator component its own family of replica streams.
pub fn stream_tag(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The random stream of replica `index` in the family `(seed, tag)`.
pub fn replica_rng(seed: u64, tag: u64, index: u64) -> ReplicaRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)));
    rng.set_stream(index);
    rng
}

/// Replica layout of one Monte Carlo computation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaPlan {
    pub seed: u64,
    pub tag: u64,
    pub replicas: u64,
    pub block_size: u64,
}

/// Default number of replicas per block.
pub const DEFAULT_BLOCK: u64 = 512;

impl ReplicaPlan {
    /// Plan with the default block size and a tag derived from `label`.
    pub fn new(seed: u64, label: &str, replicas: u64) -> Self {
        Self {
            seed,
            tag: stream_tag(label),
            replicas,
            block_size: DEFAULT_BLOCK,
        }
    }

    /// Number of blocks.
    pub fn blocks(&self) -> u64 {
        self.replicas.div_ceil(self.block_size.max(1))
    }

    /// Replica indices of block `b`.
    pub fn block_range(&self, b: u64) -> Range<u64> {
        let bs = self.block_size.max(1);
        let start = b * bs;
        start..(start + bs).min(self.replicas)
    }
}

/// Folds block partials in order. Returns `None` for an empty list.
pub fn reduce<A: Merge + Clone>(parts: &[A]) -> Option<A> {
    let mut it = parts.iter();
    let mut acc = it.next()?.clone();
    for p in it {
        acc.merge(p);
    }
    Some(acc)
}

/// Worker pool executing replica plans.
pub struct Runner {
    pool: rayon::ThreadPool,
    threads: usize,
}

impl Runner {
    /// A pool with `threads` workers (`0` means one per available core).
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::ConfigError(format!("cannot build worker pool: {e}")))?;
        let threads = pool.current_num_threads();
        Ok(Self { pool, threads })
    }

    /// Number of worker threads.
    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Computes the block partials for `blocks` (a shard of the plan).
    pub fn run_blocks<A, I, F>(
        &self,
        plan: &ReplicaPlan,
        blocks: Range<u64>,
        init: I,
        body: F,
    ) -> Result<Vec<A>>
    where
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(&mut A, &mut ReplicaRng, u64) -> Result<()> + Sync,
    {
        let results: Vec<Result<A>> = self.pool.install(|| {
            blocks
                .into_par_iter()
                .map(|b| {
                    let mut acc = init();
                    for r in plan.block_range(b) {
                        let mut rng = replica_rng(plan.seed, plan.tag, r);
                        body(&mut acc, &mut rng, r)?;
                    }
                    Ok(acc)
                })
                .collect()
        });
        results.into_iter().collect()
    }

    /// Runs the whole plan and reduces the block partials in block order.
    pub fn run<A, I, F>(&self, plan: &ReplicaPlan, init: I, body: F) -> Result<A>
    where
        A: Merge + Clone + Send,
        I: Fn() -> A + Sync,
        F: Fn(&mut A, &mut ReplicaRng, u64) -> Result<()> + Sync,
    {
        let parts = self.run_blocks(plan, 0..plan.blocks(), &init, body)?;
        Ok(reduce(&parts).unwrap_or_else(init))
    }
}
