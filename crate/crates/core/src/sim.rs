//! Exact samplers of the branching process.
//!
//! A linear-fractional law with mean matrix `M` and shift `w` decomposes as
//! follows for a parent of type `i`: with probability `1 - |M(i)|/(1+|w|)` it
//! has no children; otherwise it has one "head" child of type `J ~ c/|c|`,
//! `c_j = M(i,j) - |M(i)| w_j / (1+|w|)`, plus `G` further children with
//! `P(G = g) = (1+|w|)^{-1} (|w|/(1+|w|))^g` whose types are i.i.d. `w/|w|`.
//! Expanding the generating function of this construction gives back
//! `1 - (M(i), 1-s)/(1 + (w, 1-s))`. The same decomposition with
//! `(M_{1,n}, D_n)` samples `Z_n` directly from the quenched law.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::accum::ReplicaRng;
use crate::env::VALIDITY_TOL;
use crate::error::{Error, Result};
use crate::linfrac::{LinFracLaw, QuenchedState};

/// Default explosion cap on the population size of one generation.
pub const DEFAULT_CAP: u64 = 10_000_000;

/// Draws from a categorical law given by nonnegative weights.
fn categorical(weights: &[f64], total: f64, rng: &mut ReplicaRng) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (j, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Binomial draw with edge cases handled.
fn binomial(n: u64, p: f64, rng: &mut ReplicaRng) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid binomial").sample(rng)
    }
}

/// Adds a multinomial(`total`, `weights / sum`) draw into `out` by
/// sequential binomials.
fn multinomial_into(total: u64, weights: &[f64], out: &mut [u64], rng: &mut ReplicaRng) {
    let mut rem = total;
    let mut mass: f64 = weights.iter().sum();
    let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    for (j, w) in weights.iter().enumerate() {
        if rem == 0 {
            break;
        }
        if j == last {
            out[j] += rem;
            break;
        }
        let p = (w / mass).clamp(0.0, 1.0);
        let x = binomial(rem, p, rng);
        out[j] += x;
        rem -= x;
        mass -= w;
    }
}

/// Geometric number of failures with success probability `p`.
fn geometric(p: f64, rng: &mut ReplicaRng) -> u64 {
    if p >= 1.0 {
        0
    } else {
        Geometric::new(p).expect("valid geometric").sample(rng)
    }
}

/// Sum of `r` i.i.d. geometric failure counts with success probability `p`
/// (negative binomial), drawn exactly as a Gamma-mixed Poisson for large `r`.
fn negative_binomial(r: u64, p: f64, rng: &mut ReplicaRng) -> u64 {
    if r == 0 || p >= 1.0 {
        return 0;
    }
    if r <= 64 {
        return (0..r).map(|_| geometric(p, rng)).sum();
    }
    let lambda = Gamma::new(r as f64, (1.0 - p) / p).expect("valid gamma").sample(rng);
    if lambda <= 0.0 {
        0
    } else {
        Poisson::new(lambda).expect("valid poisson").sample(rng) as u64
    }
}

/// Head/tail decomposition of a linear-fractional law with given `M`-rows
/// and shift, precomputed for repeated sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct OffspringSampler {
    k: usize,
    /// Survival probability per parent type.
    survive: Vec<f64>,
    /// Clamped head weights per parent type and their sums.
    heads: Vec<Vec<f64>>,
    head_mass: Vec<f64>,
    /// `1 / (1 + |w|)`, the success probability of the geometric tail.
    tail_success: f64,
    /// Tail type weights `w` (unnormalized).
    tail_types: Vec<f64>,
}

impl OffspringSampler {
    /// Sampler for one environment letter; `InvalidLaw` if `(M, w)` is not
    /// a genuine offspring law.
    pub fn new(law: &LinFracLaw<f64>) -> Result<Self> {
        let k = law.dim();
        let wn: f64 = law.shift().iter().sum();
        let a = 1.0 + wn;
        let mut heads = Vec::with_capacity(k);
        let mut head_mass = Vec::with_capacity(k);
        let mut survive = Vec::with_capacity(k);
        for i in 0..k {
            let mi = law.mean_matrix().row_sum(i);
            let c = law.head_weights(i);
            if c.iter().any(|x| *x / mi < -VALIDITY_TOL) {
                return Err(Error::InvalidLaw(format!(
                    "head weights of type {i} are negative ({c:?}): (M, w) is not an offspring law"
                )));
            }
            if mi / a > 1.0 + VALIDITY_TOL {
                return Err(Error::InvalidLaw(format!(
                    "survival probability of type {i} is {} > 1: (M, w) is not an offspring law",
                    mi / a
                )));
            }
            let c: Vec<f64> = c.into_iter().map(|x| x.max(0.0)).collect();
            head_mass.push(c.iter().sum());
            heads.push(c);
            survive.push((mi / a).min(1.0));
        }
        Ok(Self {
            k,
            survive,
            heads,
            head_mass,
            tail_success: 1.0 / a,
            tail_types: law.shift().to_vec(),
        })
    }

    /// Sampler for the quenched law of `Z_n`; `DegenerateShift` if `D_n = 0`.
    pub fn quenched(state: &QuenchedState<f64>) -> Result<Self> {
        if state.n() == 0 {
            return Err(Error::DomainError("direct sampling needs n >= 1".into()));
        }
        let d: f64 = state.dtilde().iter().sum();
        if !(d > 0.0) {
            return Err(Error::DegenerateShift(
                "D_n = 0: the quenched law has no geometric part".into(),
            ));
        }
        let k = state.dim();
        let mut heads = Vec::with_capacity(k);
        let mut head_mass = Vec::with_capacity(k);
        for i in 0..k {
            let c: Vec<f64> = state.head_weights_tilde(i).into_iter().map(|x| x.max(0.0)).collect();
            head_mass.push(c.iter().sum());
            heads.push(c);
        }
        Ok(Self {
            k,
            survive: (0..k).map(|i| state.q(i)).collect(),
            heads,
            head_mass,
            tail_success: state.one_minus_h(),
            tail_types: state.dtilde().to_vec(),
        })
    }

    /// Dimension `K`.
    pub fn dim(&self) -> usize {
        self.k
    }

    /// Offspring of one parent of type `i`.
    pub fn sample(&self, i: usize, rng: &mut ReplicaRng) -> Vec<u64> {
        let mut out = vec![0u64; self.k];
        if rng.random::<f64>() >= self.survive[i] {
            return out;
        }
        out[categorical(&self.heads[i], self.head_mass[i], rng)] += 1;
        let g = geometric(self.tail_success, rng);
        multinomial_into(g, &self.tail_types, &mut out, rng);
        out
    }

    /// Total offspring of `counts[i]` parents of each type `i`, drawn with
    /// the distributionally identical batched scheme (binomial survivors,
    /// multinomial heads, negative-binomial tails).
    pub fn sample_generation(&self, counts: &[u64], rng: &mut ReplicaRng) -> Vec<u64> {
        let mut out = vec![0u64; self.k];
        let mut survivors_total = 0u64;
        for (i, &n) in counts.iter().enumerate() {
            let s = binomial(n, self.survive[i], rng);
            survivors_total += s;
            multinomial_into(s, &self.heads[i], &mut out, rng);
        }
        let g = negative_binomial(survivors_total, self.tail_success, rng);
        multinomial_into(g, &self.tail_types, &mut out, rng);
        out
    }

    /// Draw conditioned on `1 <= total <= c` or on an exact total: the total
    /// is given, the head type and `total - 1` tail types are drawn.
    fn sample_given_total(&self, i: usize, total: u64, rng: &mut ReplicaRng) -> Vec<u64> {
        let mut out = vec![0u64; self.k];
        out[categorical(&self.heads[i], self.head_mass[i], rng)] += 1;
        multinomial_into(total - 1, &self.tail_types, &mut out, rng);
        out
    }
}

/// One offspring draw from `law` for a parent of type `i`.
pub fn sample_offspring(law: &LinFracLaw<f64>, i: usize, rng: &mut ReplicaRng) -> Result<Vec<u64>> {
    if i >= law.dim() {
        return Err(Error::IndexError {
            index: i,
            max: law.dim() - 1,
        });
    }
    Ok(OffspringSampler::new(law)?.sample(i, rng))
}

/// Population `Z_n` at generation `n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationState {
    pub generation: usize,
    pub counts: Vec<u64>,
}

impl PopulationState {
    /// `|Z_n|`.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// A simulated trajectory `Z_0, ..., Z_N`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<PopulationState>,
    /// Set when a generation exceeded the explosion cap; the trajectory
    /// ends at that generation.
    pub explosion_capped: bool,
    /// Seed recorded by the caller for replay (not used by the sampler).
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct TrajectoryRecord<'a> {
    n: usize,
    counts: &'a [u64],
    total: u64,
}

impl Trajectory {
    /// Final state.
    pub fn last(&self) -> &PopulationState {
        self.states.last().expect("a trajectory has at least one state")
    }

    /// Writes one JSON line `{n, counts, total}` per generation.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.states {
            let rec = TrajectoryRecord {
                n: s.generation,
                counts: &s.counts,
                total: s.total(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Particle-level simulation from `z0` along `env[0..horizon]`.
pub fn simulate_particles(
    env: &[LinFracLaw<f64>],
    z0: &[u64],
    horizon: usize,
    rng: &mut ReplicaRng,
    cap: u64,
) -> Result<Trajectory> {
    if horizon > env.len() {
        return Err(Error::DomainError(format!(
            "horizon {horizon} exceeds the environment length {}",
            env.len()
        )));
    }
    if cap == 0 {
        return Err(Error::DomainError("the explosion cap must be positive".into()));
    }
    let samplers: Vec<OffspringSampler> = env[..horizon]
        .iter()
        .map(OffspringSampler::new)
        .collect::<Result<_>>()?;
    if let Some(s) = samplers.first() {
        if s.dim() != z0.len() {
            return Err(Error::DomainError("z0 has the wrong dimension".into()));
        }
    }
    let mut states = vec![PopulationState {
        generation: 0,
        counts: z0.to_vec(),
    }];
    let mut capped = false;
    for (n, sampler) in samplers.iter().enumerate() {
        let cur = &states[n].counts;
        let next = if cur.iter().all(|c| *c == 0) {
            vec![0; cur.len()]
        } else {
            sampler.sample_generation(cur, rng)
        };
        let total: u64 = next.iter().sum();
        states.push(PopulationState {
            generation: n + 1,
            counts: next,
        });
        if total > cap {
            capped = true;
            break;
        }
    }
    Ok(Trajectory {
        states,
        explosion_capped: capped,
        seed: None,
    })
}

/// Exact draw of `Z_n` started from `e_i`, from the quenched law.
pub fn sample_zn_direct(state: &QuenchedState<f64>, i: usize, rng: &mut ReplicaRng) -> Result<PopulationState> {
    if i >= state.dim() {
        return Err(Error::IndexError {
            index: i,
            max: state.dim() - 1,
        });
    }
    let s = OffspringSampler::quenched(state)?;
    Ok(PopulationState {
        generation: state.n(),
        counts: s.sample(i, rng),
    })
}

/// Conditioning events for [`conditional_sampler`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// `{Z_n = z}` for a fixed nonzero vector (e.g. `e_l`).
    Exact(Vec<u64>),
    /// `{1 <= |Z_n| <= c}`.
    TotalBetween(u64),
}

/// Quenched masses `P(|Z_n| = z)` for `z = 1..=c`.
pub fn total_masses(state: &QuenchedState<f64>, i: usize, c: u64) -> Result<Vec<f64>> {
    (1..=c).map(|z| state.local_prob_total(i, z)).collect()
}

/// Quenched probability of a condition.
pub fn condition_mass(state: &QuenchedState<f64>, i: usize, cond: &Condition) -> Result<f64> {
    match cond {
        Condition::Exact(z) => state.local_prob_vector(i, z),
        Condition::TotalBetween(c) => Ok(total_masses(state, i, *c)?.iter().sum()),
    }
}

/// Exact draw of `Z_n` from `e_i` conditioned on `cond`, by renormalizing
/// the closed-form masses.
pub fn conditional_sampler(
    state: &QuenchedState<f64>,
    i: usize,
    cond: &Condition,
    rng: &mut ReplicaRng,
) -> Result<PopulationState> {
    if condition_mass(state, i, cond)? <= 0.0 {
        return Err(Error::ZeroMassCondition);
    }
    let counts = match cond {
        Condition::Exact(z) => z.clone(),
        Condition::TotalBetween(c) => {
            let masses = total_masses(state, i, *c)?;
            let total: f64 = masses.iter().sum();
            let z = categorical(&masses, total, rng) as u64 + 1;
            OffspringSampler::quenched(state)?.sample_given_total(i, z, rng)
        }
    };
    Ok(PopulationState {
        generation: state.n(),
        counts,
    })
}

/// Writes an environment fixture (a JSON list of `{M, w}` letters).
pub fn save_env_fixture(path: &Path, env: &[LinFracLaw<f64>]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(f, env)?;
    Ok(())
}

/// Reads an environment fixture.
pub fn load_env_fixture(path: &Path) -> Result<Vec<LinFracLaw<f64>>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

/// Parses a JSON-lines trajectory export back into population states.
pub fn read_trajectory_jsonl<R: BufRead>(r: R) -> Result<Vec<PopulationState>> {
    #[derive(Deserialize)]
    struct Rec {
        n: usize,
        counts: Vec<u64>,
    }
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Rec = serde_json::from_str(&line)?;
        out.push(PopulationState {
            generation: rec.n,
            counts: rec.counts,
        });
    }
    Ok(out)
}
