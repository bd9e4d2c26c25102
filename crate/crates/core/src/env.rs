//! Random environment models with a common left eigenvector `v`, regime
//! classification and exponential tilting.
//!
//! A letter is built from independent draws of `X = ln rho ~ N(mu, sigma^2)`,
//! a raw positive matrix `A` with i.i.d. uniform entries and a shift vector
//! `w`. The mean matrix is `M(i,j) = A(i,j) rho v_j / sum_r v_r A(r,j)`, which
//! guarantees `v M = rho v`. Pairs `(A, w)` that violate the entry-ratio bound
//! or do not define a genuine offspring law are redrawn; `rho` is kept, so the
//! law of `X` (and therefore every tilting identity) is unaffected.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::accum::{replica_rng, stream_tag, CoMoments, Estimate, ReplicaPlan, ReplicaRng, Runner};
use crate::error::{Error, Result};
use crate::linfrac::{perron_root, LinFracLaw, QuenchedState};
use crate::matrix::Matrix;
use crate::walk::WalkPath;

/// Maximum number of `(A, w)` redraws per letter.
pub const MAX_REDRAWS: usize = 1000;

/// Tolerance on normalized head weights when checking that `(M, w)` is a
/// genuine offspring law.
pub const VALIDITY_TOL: f64 = 1e-12;

/// Law of `X = ln rho`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoLaw {
    /// Only `"gaussian_logrho"` is supported.
    pub family: String,
    pub mu: f64,
    pub sigma: f64,
}

/// Entrywise uniform law of the raw matrix `A` on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeLaw {
    pub lo: f64,
    pub hi: f64,
}

/// Entrywise law of the shift vector before the optional `v` scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "lowercase")]
pub enum ShiftFamily {
    Uniform { lo: f64, hi: f64 },
    Lognormal { mu: f64, sigma: f64 },
    Constant { value: f64 },
}

/// Law of the shift vector `w`: `w_j = xi_j` with `xi_j` i.i.d. from
/// `dist` (or one common draw for all `j` when `shared`), optionally
/// multiplied by `v_j` (`scale_by_v`) and by the letter's Perron root `rho`
/// (`scale_by_rho`).
///
/// With `shared` and `scale_by_v` the direction of `w` is exactly `v`, which
/// survives the validity rejection below; independent coordinates only give
/// `E[w] ~ v` before rejection, and the accepted draws are slightly tilted
/// away from `v`.
///
/// A linear-fractional law needs `|M(i)| <= 1 + |w|` (a nonnegative
/// extinction mass), so with unbounded `rho` the shift has to grow with
/// `rho`; `scale_by_rho` does this while keeping `(A, xi)` independent of
/// `rho`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftLaw {
    #[serde(flatten)]
    pub dist: ShiftFamily,
    #[serde(default)]
    pub scale_by_v: bool,
    #[serde(default)]
    pub scale_by_rho: bool,
    #[serde(default)]
    pub shared: bool,
}

/// Distribution of one environment letter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvModel {
    #[serde(rename = "K")]
    pub k: usize,
    pub v: Vec<f64>,
    pub alpha: f64,
    pub rho_law: RhoLaw,
    pub shape_law: ShapeLaw,
    pub w_law: ShiftLaw,
    pub seed: u64,
}

/// One sampled letter together with its `X = ln rho`.
#[derive(Clone, Debug, PartialEq)]
pub struct Letter {
    pub law: LinFracLaw<f64>,
    pub x: f64,
}

/// Regime of the process, by the sign of the tilted drift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    StronglySupercritical,
    IntermediatelySupercritical,
    WeaklySupercritical,
    NotSupercritical,
}

/// Output of [`EnvModel::classify`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// `E[e^{-X}]`.
    pub kappa: f64,
    /// `E[X e^{-X}] / kappa`, the drift under the tilted measure.
    pub drift_tilted: f64,
    /// `E[X]`.
    pub drift: f64,
    pub regime: Regime,
    /// Whether `E_P[X] < ln((1 + alpha^2) / (1 - alpha^2))`.
    pub condition_egen_value0: bool,
    pub egen_threshold: f64,
    /// `(1 - alpha^2) / (1 + alpha^2)`.
    pub beta: f64,
    /// Monte Carlo estimate of `E_P[|ln vartheta|^3]`.
    pub vartheta_moment: f64,
    pub vartheta_moment_stderr: f64,
    /// Monte Carlo estimate of `E_P[(X + ln |w|)^2]`.
    pub shift_moment: f64,
    /// Smallest one-step survival probability seen over the tilted draws.
    pub min_survival: f64,
    pub draws: u64,
    pub warnings: Vec<String>,
}

/// Importance strategy for [`weighted_expect`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TiltMethod {
    /// Sample the tilted model directly.
    Tilted,
    /// Sample the original model and weight by `e^{-S_n} / kappa^n`.
    Importance,
}

/// Number of tilted draws used by the Monte Carlo parts of `classify`.
pub const CLASSIFY_DRAWS: u64 = 10_000;

/// Absolute tolerance on the analytic tilted drift for regime decisions.
pub const REGIME_TOL: f64 = 1e-9;

impl EnvModel {
    /// Parses and validates a JSON model description.
    pub fn from_json(s: &str) -> Result<Self> {
        let m: EnvModel = serde_json::from_str(s).map_err(|e| Error::ConfigError(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Checks parameter ranges and the supported families.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigError(m));
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if self.v.len() != self.k {
            return bad(format!("v has length {} but K = {}", self.v.len(), self.k));
        }
        if self.v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return bad("v must be strictly positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)".into());
        }
        if self.rho_law.family != "gaussian_logrho" {
            return Err(Error::UnsupportedFamily(self.rho_law.family.clone()));
        }
        if !self.rho_law.mu.is_finite() || !(self.rho_law.sigma >= 0.0 && self.rho_law.sigma.is_finite()) {
            return bad("rho_law needs finite mu and sigma >= 0".into());
        }
        let ShapeLaw { lo, hi } = self.shape_law;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("shape_law needs 0 < lo <= hi".into());
        }
        match self.w_law.dist {
            ShiftFamily::Uniform { lo, hi } if !(lo >= 0.0 && hi >= lo && hi.is_finite()) => {
                bad("uniform w_law needs 0 <= lo <= hi".into())
            }
            ShiftFamily::Lognormal { mu, sigma } if !(mu.is_finite() && sigma >= 0.0 && sigma.is_finite()) => {
                bad("lognormal w_law needs finite mu and sigma >= 0".into())
            }
            ShiftFamily::Constant { value } if !(value >= 0.0 && value.is_finite()) => {
                bad("constant w_law needs a nonnegative value".into())
            }
            _ => Ok(()),
        }
    }

    /// `|v|`.
    pub fn v_norm(&self) -> f64 {
        self.v.iter().sum()
    }

    /// `kappa = E[e^{-X}] = e^{-mu + sigma^2 / 2}`.
    pub fn kappa(&self) -> f64 {
        (-self.rho_law.mu + 0.5 * self.rho_law.sigma * self.rho_law.sigma).exp()
    }

    /// `E_P[X] = mu - sigma^2`.
    pub fn drift_tilted(&self) -> f64 {
        self.rho_law.mu - self.rho_law.sigma * self.rho_law.sigma
    }

    /// `beta = (1 - alpha^2) / (1 + alpha^2)`.
    pub fn beta(&self) -> f64 {
        let a2 = self.alpha * self.alpha;
        (1.0 - a2) / (1.0 + a2)
    }

    /// Draws `X = ln rho`.
    pub fn sample_x(&self, rng: &mut ReplicaRng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.rho_law.mu + self.rho_law.sigma * z
    }

    fn uniform(rng: &mut ReplicaRng, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            lo + (hi - lo) * rng.random::<f64>()
        } else {
            lo
        }
    }

    fn draw_xi(&self, rng: &mut ReplicaRng) -> f64 {
        match self.w_law.dist {
            ShiftFamily::Uniform { lo, hi } => Self::uniform(rng, lo, hi),
            ShiftFamily::Lognormal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
            ShiftFamily::Constant { value } => value,
        }
    }

    fn sample_shift(&self, rho: f64, rng: &mut ReplicaRng) -> Vec<f64> {
        let scale = if self.w_law.scale_by_rho { rho } else { 1.0 };
        let common = if self.w_law.shared { Some(self.draw_xi(rng)) } else { None };
        (0..self.k)
            .map(|j| {
                let xi = scale * common.unwrap_or_else(|| self.draw_xi(rng));
                if self.w_law.scale_by_v {
                    xi * self.v[j]
                } else {
                    xi
                }
            })
            .collect()
    }

    /// Builds `M` from a raw matrix by column reweighting.
    pub fn mean_from_shape(&self, a: &Matrix<f64>, rho: f64) -> Matrix<f64> {
        let k = self.k;
        let col: Vec<f64> = (0..k)
            .map(|j| (0..k).map(|i| self.v[i] * a.get(i, j)).sum())
            .collect();
        Matrix::from_fn(k, |i, j| a.get(i, j) * rho * self.v[j] / col[j])
    }

    /// Builds a letter with the given `X` by drawing `(A, w)` until the law
    /// satisfies the ratio bound and is a genuine offspring law.
    pub fn construct_with_x(&self, x: f64, rng: &mut ReplicaRng) -> Result<LinFracLaw<f64>> {
        let rho = x.exp();
        let (mut ratio_fail, mut validity_fail) = (0usize, 0usize);
        for _ in 0..MAX_REDRAWS {
            let a = Matrix::from_fn(self.k, |_, _| Self::uniform(rng, self.shape_law.lo, self.shape_law.hi));
            let w = self.sample_shift(rho, rng);
            let law = LinFracLaw::new(self.mean_from_shape(&a, rho), w)?;
            if !law.ratio_ok(&self.alpha) {
                ratio_fail += 1;
                continue;
            }
            if law.min_head_weight() < -VALIDITY_TOL || law.max_survival() > 1.0 + VALIDITY_TOL {
                validity_fail += 1;
                continue;
            }
            return Ok(law);
        }
        Err(Error::RejectionExhausted {
            attempts: MAX_REDRAWS,
            reason: format!(
                "{ratio_fail} draws violated the ratio bound 1/alpha, {validity_fail} did not define an offspring law"
            ),
        })
    }

    /// Draws one letter.
    pub fn sample_letter(&self, rng: &mut ReplicaRng) -> Result<Letter> {
        let x = self.sample_x(rng);
        let law = self.construct_with_x(x, rng)?;
        Ok(Letter { law, x })
    }

    /// Draws an environment prefix of length `n`.
    pub fn sample_prefix(&self, n: usize, rng: &mut ReplicaRng) -> Result<EnvPrefix> {
        let mut laws = Vec::with_capacity(n);
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            let l = self.sample_letter(rng)?;
            laws.push(l.law);
            xs.push(l.x);
        }
        Ok(EnvPrefix {
            v: self.v.clone(),
            laws,
            x: xs,
        })
    }

    /// The tilted model: `X ~ N(mu - sigma^2, sigma^2)`, `(A, w)` unchanged.
    pub fn tilt(&self) -> Result<EnvModel> {
        if self.rho_law.family != "gaussian_logrho" {
            return Err(Error::UnsupportedFamily(self.rho_law.family.clone()));
        }
        let mut m = self.clone();
        m.rho_law.mu = self.drift_tilted();
        Ok(m)
    }

    /// Regime classification with the Monte Carlo hypothesis checks.
    pub fn classify(&self) -> Result<RegimeReport> {
        self.validate()?;
        let mu = self.rho_law.mu;
        let drift_tilted = self.drift_tilted();
        let regime = analytic_regime(self);
        let a2 = self.alpha * self.alpha;
        let egen_threshold = ((1.0 + a2) / (1.0 - a2)).ln();
        let condition_egen_value0 = drift_tilted < egen_threshold;

        let tilted = self.tilt()?;
        let mut rng = replica_rng(self.seed, stream_tag("classify"), 0);
        let mut stats = CoMoments::diagonal(2);
        let mut min_survival = f64::INFINITY;
        for _ in 0..CLASSIFY_DRAWS {
            let letter = tilted.sample_letter(&mut rng)?;
            let theta = compute_vartheta(&letter.law, &self.v)?;
            let wn: f64 = letter.law.shift().iter().sum();
            let shift_term = if wn > 0.0 { (letter.x + wn.ln()).powi(2) } else { f64::INFINITY };
            stats.push(&[theta.ln().abs().powi(3), shift_term]);
            for i in 0..self.k {
                let q = letter.law.mean_matrix().row_sum(i) / (1.0 + wn);
                min_survival = min_survival.min(q);
            }
        }
        let mut warnings = Vec::new();
        if !condition_egen_value0 {
            warnings.push(format!(
                "tilted drift {drift_tilted:.6} is not below ln((1+alpha^2)/(1-alpha^2)) = {egen_threshold:.6}; vector-level limits are outside their stated hypotheses"
            ));
        }
        let shift_moment = stats.mean(1);
        if !shift_moment.is_finite() {
            warnings.push("E_P[(X + ln|w|)^2] is not finite (zero shift vectors drawn)".into());
        }
        if min_survival < 1e-8 {
            warnings.push(format!(
                "one-step survival probabilities approach zero (min {min_survival:.3e})"
            ));
        }
        if regime == Regime::WeaklySupercritical && mu.abs() <= REGIME_TOL {
            warnings.push("E[X] = 0: the associated walk has no positive drift".into());
        }
        Ok(RegimeReport {
            kappa: self.kappa(),
            drift_tilted,
            drift: mu,
            regime,
            condition_egen_value0,
            egen_threshold,
            beta: self.beta(),
            vartheta_moment: stats.mean(0),
            vartheta_moment_stderr: stats.stderr(0),
            shift_moment,
            min_survival,
            draws: CLASSIFY_DRAWS,
            warnings,
        })
    }

    /// Errors with `RegimeMismatch` unless the analytic regime is `expected`.
    pub fn require_regime(&self, expected: Regime) -> Result<()> {
        let found = analytic_regime(self);
        if found != expected {
            return Err(Error::RegimeMismatch {
                expected: format!("{expected:?}"),
                found: format!("{found:?}"),
            });
        }
        Ok(())
    }
}

/// Regime from the analytic Gaussian identities only.
pub fn analytic_regime(model: &EnvModel) -> Regime {
    let mu = model.rho_law.mu;
    let d = model.drift_tilted();
    if mu < -REGIME_TOL || (mu.abs() <= REGIME_TOL && model.rho_law.sigma == 0.0) {
        Regime::NotSupercritical
    } else if d > REGIME_TOL {
        Regime::StronglySupercritical
    } else if d >= -REGIME_TOL {
        Regime::IntermediatelySupercritical
    } else {
        Regime::WeaklySupercritical
    }
}

/// A realized environment prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvPrefix {
    pub v: Vec<f64>,
    pub laws: Vec<LinFracLaw<f64>>,
    pub x: Vec<f64>,
}

impl EnvPrefix {
    /// Length `n`.
    pub fn len(&self) -> usize {
        self.laws.len()
    }

    /// Whether the prefix is empty.
    pub fn is_empty(&self) -> bool {
        self.laws.is_empty()
    }

    /// `S_n`.
    pub fn s_n(&self) -> f64 {
        self.x.iter().sum()
    }

    /// The associated walk `S_0, ..., S_n`.
    pub fn walk(&self) -> WalkPath {
        WalkPath::from_increments(&self.x)
    }

    /// Quenched state after the whole prefix.
    pub fn quenched(&self) -> Result<QuenchedState<f64>> {
        QuenchedState::from_env(self.v.clone(), &self.laws)
    }
}

/// `vartheta = 1 + rho^{-2} sum_i v_i sum_{j,k} E_i[Z_j Z_k]`, in closed form
/// `1 + rho^{-2} sum_i v_i |M(i)| (1 + 2 |w|)`.
pub fn compute_vartheta(law: &LinFracLaw<f64>, v: &[f64]) -> Result<f64> {
    let rho = perron_root(law, v)?;
    let wn: f64 = law.shift().iter().sum();
    let acc: f64 = (0..law.dim())
        .map(|i| v[i] * law.mean_matrix().row_sum(i) * (1.0 + 2.0 * wn))
        .sum();
    Ok(1.0 + acc / (rho * rho))
}

/// `E_P[f(prefix)]` over prefixes of length `n`, either sampled from the
/// tilted model or importance-weighted under the original one.
pub fn weighted_expect<F>(
    runner: &Runner,
    model: &EnvModel,
    n: usize,
    replicas: u64,
    seed: u64,
    method: TiltMethod,
    f: F,
) -> Result<Estimate>
where
    F: Fn(&EnvPrefix) -> f64 + Sync,
{
    if n == 0 || replicas == 0 {
        return Err(Error::DomainError("weighted_expect needs n, N >= 1".into()));
    }
    let (sampler, kappa) = match method {
        TiltMethod::Tilted => (model.tilt()?, 1.0),
        TiltMethod::Importance => (model.clone(), model.kappa()),
    };
    let plan = ReplicaPlan::new(seed, &format!("weighted_expect/{method:?}"), replicas);
    let acc = runner.run(
        &plan,
        || CoMoments::diagonal(1),
        |acc, rng, _| {
            let prefix = sampler.sample_prefix(n, rng)?;
            let weight = match method {
                TiltMethod::Tilted => 1.0,
                TiltMethod::Importance => (-prefix.s_n() - n as f64 * kappa.ln()).exp(),
            };
            acc.push(&[weight * f(&prefix)]);
            Ok(())
        },
    )?;
    Ok(acc.estimate(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn model(mu: f64, sigma: f64) -> EnvModel {
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
            seed: 1,
        }
    }

    #[test]
    fn construction_examples() {
        let mut m = model(0.0, 0.0);
        m.v = vec![1.0, 1.0];
        let a = Matrix::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(m.mean_from_shape(&a, 2.0).to_rows(), vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(m.mean_from_shape(&a, 3.0).to_rows(), vec![vec![1.5, 1.5], vec![1.5, 1.5]]);
    }

    #[test]
    fn sampled_letters_have_the_drawn_root() {
        let m = model(0.8, 0.5);
        let mut rng = replica_rng(3, 4, 5);
        for _ in 0..200 {
            let l = m.sample_letter(&mut rng).unwrap();
            let rho = perron_root(&l.law, &m.v).unwrap();
            assert!((rho / l.x.exp() - 1.0).abs() < 1e-12);
            assert!(l.law.ratio_ok(&m.alpha));
            assert!(l.law.min_head_weight() >= -VALIDITY_TOL);
            assert!(l.law.max_survival() <= 1.0 + VALIDITY_TOL);
        }
    }

    #[test]
    fn classification_examples() {
        let mut m = model(1.0, 0.0);
        let r = m.classify().unwrap();
        assert!((r.kappa - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(r.regime, Regime::StronglySupercritical);
        m.rho_law = RhoLaw {
            family: "gaussian_logrho".into(),
            mu: 0.25,
            sigma: 0.5,
        };
        assert_eq!(m.classify().unwrap().regime, Regime::IntermediatelySupercritical);
        m.rho_law.mu = 0.0;
        assert_eq!(m.classify().unwrap().regime, Regime::WeaklySupercritical);
    }

    #[test]
    fn vartheta_of_l0_is_six() {
        let l0 = LinFracLaw::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 1.0]).unwrap();
        assert!((compute_vartheta(&l0, &[1.0, 1.0]).unwrap() - 6.0).abs() < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        let m = model(0.8, 0.5);
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"family\":\"uniform\""));
        assert_eq!(EnvModel::from_json(&s).unwrap(), m);
    }
}
