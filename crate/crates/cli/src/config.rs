//! Experiment configuration: model, suite, budgets, tolerances and output.
//!
//! Every budget and tolerance has a documented default (the values used by
//! the acceptance runs), so a minimal config names only the model, the suite
//! and the seed.

use std::path::{Path, PathBuf};

use mbpre_core::env::EnvModel;
use mbpre_core::estimators::{IntermHorizons, StrongHorizons};
use mbpre_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Verification suite to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    QuenchedSelftest,
    StrongRatio,
    StrongP,
    Uniform,
    IntermRatio,
    IntermQ,
    Renewal,
}

impl Suite {
    /// Kebab-case name as used in configs.
    pub fn name(&self) -> &'static str {
        match self {
            Suite::QuenchedSelftest => "quenched-selftest",
            Suite::StrongRatio => "strong-ratio",
            Suite::StrongP => "strong-p",
            Suite::Uniform => "uniform",
            Suite::IntermRatio => "interm-ratio",
            Suite::IntermQ => "interm-q",
            Suite::Renewal => "renewal",
        }
    }
}

/// One `(i, l, t)` choice of the conditional-law check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PChoice {
    pub i: usize,
    pub l: usize,
    pub t: f64,
}

/// Renewal-function budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenewalBudget {
    /// Paths used to estimate `V`.
    pub replicas: u64,
    /// Step cap per path.
    pub k_max: u64,
    /// Grid `0, step, ..., x_max`.
    pub x_max: f64,
    pub step: f64,
    /// Points at which harmonicity is checked.
    pub check_points: Vec<f64>,
    /// Directory for cached renewal tables (keyed by model, grid, `k_max`,
    /// replicas, seed and method); no caching when absent.
    pub cache_dir: Option<PathBuf>,
}

impl Default for RenewalBudget {
    fn default() -> Self {
        Self {
            replicas: 1_000_000,
            k_max: 10_000,
            x_max: 40.0,
            step: 0.05,
            check_points: (0..10).map(|j| 0.5 * j as f64).collect(),
            cache_dir: None,
        }
    }
}

/// Monte Carlo budgets and horizons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    /// Replicas of the main estimator.
    pub replicas: u64,
    /// Replicas of the limit-constant estimators.
    pub constant_replicas: u64,
    /// Replicas of the walk used for `P(L_n >= 0)`.
    pub walk_replicas: u64,
    pub n_grid: Vec<usize>,
    /// Starting type.
    pub i: usize,
    /// Target type of `{Z_n = e_l}` events.
    pub l: usize,
    /// Population sizes of the `|Z_n| = z` events.
    pub z_values: Vec<u64>,
    /// Window `{1..c}` of the uniformity check.
    pub c: u64,
    /// Largest `|z|` of enumerated supports.
    pub z_max: u64,
    pub p_choices: Vec<PChoice>,
    pub strong: StrongHorizons,
    pub interm: IntermHorizons,
    pub renewal: RenewalBudget,
    /// Horizon of the `E^+` functional of `q`.
    pub q_horizon: usize,
    /// Horizon of the conditional law at the minimum.
    pub cond_n: usize,
    /// Horizon of the `k`-independence check.
    pub lemma_n: usize,
    /// Population sizes compared by the `k`-independence check.
    pub lemma_k: Vec<u64>,
    /// Number of random environments of the quenched self-test.
    pub selftest_fixtures: u64,
    /// Largest environment length of the quenched self-test.
    pub selftest_max_len: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            replicas: 100_000,
            constant_replicas: 100_000,
            walk_replicas: 1_000_000,
            n_grid: vec![24, 36],
            i: 0,
            l: 0,
            z_values: vec![1, 2, 3],
            c: 5,
            z_max: 4,
            p_choices: vec![PChoice { i: 0, l: 0, t: 0.5 }, PChoice { i: 1, l: 1, t: 0.3 }],
            strong: StrongHorizons::default(),
            interm: IntermHorizons::default(),
            renewal: RenewalBudget::default(),
            q_horizon: 400,
            cond_n: 96,
            lemma_n: 200,
            lemma_k: vec![1, 2],
            selftest_fixtures: 20,
            selftest_max_len: 4,
        }
    }
}

/// Pass/fail tolerances of the suite verdicts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Closed form vs coefficient extraction.
    pub oracle_abs: f64,
    /// Vector masses vs total masses.
    pub mass_sum_abs: f64,
    /// Relative change between the last two grid points (strong regime).
    pub stabilization_rel: f64,
    /// Relative drift between the last two grid points (intermediate regime).
    pub interm_drift_rel: f64,
    /// Agreement of two estimates in combined standard errors.
    pub agreement_sigmas: f64,
    /// Largest deviation of a conditional cell from `1/c`.
    pub uniform_max_dev: f64,
    /// Allowed deviation of the total mass of `p` from one.
    pub p_total_abs: f64,
    /// Relative harmonicity residual of `V`.
    pub harmonic_rel: f64,
    /// Allowed deviation of `V(0)` from one.
    pub v0_abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            oracle_abs: 1e-9,
            mass_sum_abs: 1e-12,
            stabilization_rel: 0.05,
            interm_drift_rel: 0.10,
            agreement_sigmas: 3.0,
            uniform_max_dev: 0.02,
            p_total_abs: 0.02,
            harmonic_rel: 0.02,
            v0_abs: 0.01,
        }
    }
}

/// Artifact format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

/// Output location and formats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            formats: vec![Format::Csv, Format::Jsonl],
        }
    }
}

/// A complete experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: EnvModel,
    pub suite: Suite,
    pub seed: u64,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSpec,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::ConfigError(msg.into())
}

impl ExperimentConfig {
    /// Parses and validates a JSON config.
    pub fn from_json(s: &str) -> Result<Self, Error> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::IoError(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    /// Checks the suite-specific requirements on budgets and tolerances.
    pub fn validate(&self) -> Result<(), Error> {
        self.model.validate()?;
        let b = &self.budgets;
        let k = self.model.k;
        if b.i >= k || b.l >= k {
            return Err(config_error(format!("types i = {}, l = {} must be below K = {k}", b.i, b.l)));
        }
        let needs_grid = matches!(
            self.suite,
            Suite::StrongRatio | Suite::Uniform | Suite::IntermRatio
        );
        if needs_grid && (b.n_grid.is_empty() || b.n_grid.contains(&0)) {
            return Err(config_error("budgets.n_grid needs positive horizons"));
        }
        if self.suite == Suite::StrongP && b.n_grid.is_empty() {
            return Err(config_error("budgets.n_grid needs at least one horizon"));
        }
        if b.replicas == 0 || b.constant_replicas == 0 || b.walk_replicas == 0 {
            return Err(config_error("replica budgets must be positive"));
        }
        if matches!(self.suite, Suite::StrongRatio) && (b.z_values.is_empty() || b.z_values.contains(&0)) {
            return Err(config_error("budgets.z_values needs population sizes >= 1"));
        }
        if self.suite == Suite::Uniform && b.c == 0 {
            return Err(config_error("budgets.c must be at least 1"));
        }
        if matches!(self.suite, Suite::StrongP | Suite::IntermQ | Suite::QuenchedSelftest) && b.z_max == 0 {
            return Err(config_error("budgets.z_max must be at least 1"));
        }
        if self.suite == Suite::StrongP {
            if b.p_choices.is_empty() {
                return Err(config_error("budgets.p_choices needs at least one (i, l, t)"));
            }
            for p in &b.p_choices {
                if p.i >= k || p.l >= k || !(p.t > 0.0 && p.t < 1.0) {
                    return Err(config_error(format!("invalid p choice {p:?}")));
                }
            }
        }
        if self.suite == Suite::IntermQ && (b.lemma_k.is_empty() || b.lemma_k.contains(&0)) {
            return Err(config_error("budgets.lemma_k needs population sizes >= 1"));
        }
        if matches!(self.suite, Suite::IntermRatio | Suite::IntermQ | Suite::Renewal) {
            let r = &b.renewal;
            if !(r.step > 0.0 && r.x_max > r.step) || r.replicas == 0 || r.k_max == 0 {
                return Err(config_error("budgets.renewal needs step > 0, x_max > step and positive budgets"));
            }
        }
        if self.suite == Suite::QuenchedSelftest && (b.selftest_fixtures == 0 || b.selftest_max_len == 0) {
            return Err(config_error("self-test budgets must be positive"));
        }
        if self.output.formats.is_empty() {
            return Err(config_error("output.formats must name at least one format"));
        }
        let t = &self.tolerances;
        let all = [
            t.oracle_abs,
            t.mass_sum_abs,
            t.stabilization_rel,
            t.interm_drift_rel,
            t.agreement_sigmas,
            t.uniform_max_dev,
            t.p_total_abs,
            t.harmonic_rel,
            t.v0_abs,
        ];
        if all.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(config_error("tolerances must be positive and finite"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical serialization of everything that can
    /// change a numeric result: the output location and the renewal cache
    /// directory are left out, so replaying a config into another directory
    /// reproduces the same records.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSpec::default();
        c.budgets.renewal.cache_dir = None;
        hex_sha256(&serde_json::to_vec(&c).expect("config serializes"))
    }

    /// Hex SHA-256 of the canonical serialization of the model alone.
    pub fn fixture_hash(&self) -> String {
        hex_sha256(&serde_json::to_vec(&self.model).expect("model serializes"))
    }

    /// Whether the given format is requested.
    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}

/// Lower-case hex SHA-256 digest.
pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
