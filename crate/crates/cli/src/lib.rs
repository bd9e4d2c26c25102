//! Batch runner for the verification suites of `mbpre-core`.
//!
//! A run reads an [`config::ExperimentConfig`], executes its suite on a
//! worker pool, and writes `results.jsonl`, one CSV per plot table and a
//! `manifest.json` with the verdicts. Numeric artifacts depend only on the
//! config and the seed; timestamps appear in the manifest alone.

pub mod config;
pub mod output;
pub mod suites;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mbpre_core::accum::Runner;
use mbpre_core::Error;

use config::{ExperimentConfig, Format};
use output::{jsonl_bytes, write_atomic, ResultRecord, RunManifest};

/// Name of the results file.
pub const RESULTS_FILE: &str = "results.jsonl";
/// Name of the manifest file.
pub const MANIFEST_FILE: &str = "manifest.json";

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Runs `cfg` with `threads` workers (`0`: one per core) and writes all
/// artifacts into `out_dir`, which is created if needed.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path, threads: usize) -> Result<RunManifest, Error> {
    cfg.validate()?;
    let started = unix_now();
    let runner = Runner::new(threads)?;
    let report = suites::run_suite(&runner, cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::IoError(format!("{}: {e}", out_dir.display())))?;
    let config_hash = cfg.config_hash();
    let fixture_hash = cfg.fixture_hash();
    let mut artifacts = Vec::new();
    if cfg.wants(Format::Jsonl) {
        let records: Vec<ResultRecord> = report
            .outputs
            .iter()
            .map(|o| ResultRecord {
                estimator: o.estimator.clone(),
                key: o.key.clone(),
                fixture_hash: fixture_hash.clone(),
                config_hash: config_hash.clone(),
                seed: cfg.seed,
                horizons: o.horizons.clone(),
                value: o.value,
                stderr: o.stderr,
                diagnostics: o.diagnostics.clone(),
            })
            .collect();
        write_atomic(&out_dir.join(RESULTS_FILE), &jsonl_bytes(&records)?)?;
        artifacts.push(RESULTS_FILE.to_string());
    }
    if cfg.wants(Format::Csv) {
        for t in &report.tables {
            let name = format!("{}.csv", t.name);
            write_atomic(&out_dir.join(&name), &t.to_bytes()?)?;
            artifacts.push(name);
        }
    }
    let manifest = RunManifest {
        tool: "mbpre".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        suite: cfg.suite.name().into(),
        config_hash,
        fixture_hash,
        seed: cfg.seed,
        threads: runner.threads(),
        started_unix: started,
        finished_unix: unix_now(),
        all_pass: report.all_pass(),
        verdicts: report.verdicts,
        diagnostics: report.diagnostics,
        artifacts,
    };
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(&out_dir.join(MANIFEST_FILE), &bytes)?;
    Ok(manifest)
}

/// Output directory: the command-line value wins over the config's.
pub fn resolve_out_dir(cli: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf, Error> {
    cli.or_else(|| cfg.output.dir.clone())
        .ok_or_else(|| Error::ConfigError("no output directory: pass --out or set output.dir".into()))
}
