//! Result records, plot tables, verdicts and the run manifest, plus the
//! atomic file writers used for every artifact.

use std::io::Write;
use std::path::{Path, PathBuf};

use mbpre_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Pass/fail outcome of one check against a recorded tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckVerdict {
    pub name: String,
    pub pass: bool,
    /// The measured quantity compared with `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckVerdict {
    /// Passes iff `value <= tolerance` (a NaN value fails).
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass: value <= tolerance,
            value,
            tolerance,
            detail: detail.into(),
        }
    }

    /// Passes iff `value > 0`; the tolerance is recorded as zero.
    pub fn positive(name: impl Into<String>, value: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass: value > 0.0,
            value,
            tolerance: 0.0,
            detail: detail.into(),
        }
    }

    /// Passes iff `flag`; the value is `1` for true and `0` for false.
    pub fn holds(name: impl Into<String>, flag: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass: flag,
            value: if flag { 1.0 } else { 0.0 },
            tolerance: 1.0,
            detail: detail.into(),
        }
    }
}

/// One scalar output of an estimator before the run metadata is attached.
#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub estimator: String,
    /// Identifies the scalar within the estimator output (type, `n`, `z`, ...).
    pub key: Value,
    pub horizons: Value,
    pub value: f64,
    pub stderr: f64,
    pub diagnostics: Value,
}

impl Output {
    pub fn new(estimator: &str, key: Value, value: f64, stderr: f64) -> Self {
        Self {
            estimator: estimator.into(),
            key,
            horizons: Value::Null,
            value,
            stderr,
            diagnostics: Value::Null,
        }
    }

    pub fn horizons(mut self, h: Value) -> Self {
        self.horizons = h;
        self
    }

    pub fn diagnostics(mut self, d: Value) -> Self {
        self.diagnostics = d;
        self
    }
}

/// A line of `results.jsonl`. Contains no timestamps, so identical configs
/// and seeds give identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub estimator: String,
    pub key: Value,
    pub fixture_hash: String,
    pub config_hash: String,
    pub seed: u64,
    pub horizons: Value,
    pub value: f64,
    pub stderr: f64,
    pub diagnostics: Value,
}

/// A flat CSV table; cells are already formatted.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    /// File stem, e.g. `strong_ratio` for `strong_ratio.csv`.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Serializes the table; an empty table gives the header line only.
    pub fn to_bytes(&self) -> Result<Vec<u8>, Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_error)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_error)?;
        }
        w.into_inner().map_err(|e| Error::IoError(e.to_string()))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::IoError(e.to_string())
}

/// Formats a float with the shortest representation that round-trips.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x}")
    }
}

/// Formats a type vector as `(a,b,...)`.
pub fn zlabel(z: &[u64]) -> String {
    format!("({})", z.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
}

/// A plottable point of a series, the input of [`emit_plotdata`].
#[derive(Clone, Debug, PartialEq)]
pub enum PlotPoint {
    /// A ratio sequence with its limiting reference value.
    Ratio {
        n: usize,
        series: String,
        ratio: f64,
        stderr: f64,
        reference: f64,
    },
    /// A cell of a conditional law on `{1..c}`.
    Uniform {
        n: usize,
        z: u64,
        cond_prob: f64,
        stderr: f64,
        uniform_ref: f64,
    },
    /// A generic long-format value.
    Long {
        n: usize,
        series: String,
        value: f64,
        stderr: f64,
    },
}

/// Turns results into a CSV table with the column layout matching their
/// kind: `{n, series, ratio, stderr, theta_ref}` for ratio sequences,
/// `{n, z, cond_prob, stderr, uniform_ref}` for uniformity checks and the
/// long format `{n, series, value, stderr}` otherwise. `reference` names the
/// reference column of ratio tables. Empty input gives a header-only table
/// in the long format unless `kind` says otherwise.
pub fn emit_plotdata(name: &str, kind: PlotKind, points: &[PlotPoint]) -> CsvTable {
    let mut t = match kind {
        PlotKind::Ratio { reference } => CsvTable::new(name, &["n", "series", "ratio", "stderr", reference]),
        PlotKind::Uniform => CsvTable::new(name, &["n", "z", "cond_prob", "stderr", "uniform_ref"]),
        PlotKind::Long => CsvTable::new(name, &["n", "series", "value", "stderr"]),
    };
    for p in points {
        let row = match (kind, p) {
            (
                PlotKind::Ratio { .. },
                PlotPoint::Ratio {
                    n,
                    series,
                    ratio,
                    stderr,
                    reference,
                },
            ) => vec![n.to_string(), series.clone(), num(*ratio), num(*stderr), num(*reference)],
            (
                PlotKind::Uniform,
                PlotPoint::Uniform {
                    n,
                    z,
                    cond_prob,
                    stderr,
                    uniform_ref,
                },
            ) => vec![n.to_string(), z.to_string(), num(*cond_prob), num(*stderr), num(*uniform_ref)],
            (
                PlotKind::Long,
                PlotPoint::Long {
                    n,
                    series,
                    value,
                    stderr,
                },
            ) => vec![n.to_string(), series.clone(), num(*value), num(*stderr)],
            _ => panic!("plot point {p:?} does not match the table kind {kind:?}"),
        };
        t.push(row);
    }
    t
}

/// Column layout of [`emit_plotdata`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Ratio { reference: &'static str },
    Uniform,
    Long,
}

/// Everything a suite produces.
#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub outputs: Vec<Output>,
    pub tables: Vec<CsvTable>,
    pub verdicts: Vec<CheckVerdict>,
    /// Suite-level diagnostics copied into the manifest.
    pub diagnostics: serde_json::Map<String, Value>,
}

impl SuiteReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

/// Run summary written atomically at the end of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub suite: String,
    pub config_hash: String,
    pub fixture_hash: String,
    pub seed: u64,
    pub threads: usize,
    /// Seconds since the Unix epoch.
    pub started_unix: f64,
    pub finished_unix: f64,
    pub verdicts: Vec<CheckVerdict>,
    pub all_pass: bool,
    pub diagnostics: serde_json::Map<String, Value>,
    /// Artifact file names relative to the output directory.
    pub artifacts: Vec<String>,
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// that is renamed into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io_at(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_at(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_at(path, e))?;
    tmp.persist(path).map_err(|e| io_at(path, e.error))?;
    Ok(())
}

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::IoError(format!("{}: {e}", path.display()))
}

/// One JSON document per line.
pub fn jsonl_bytes<T: Serialize>(items: &[T]) -> Result<Vec<u8>, Error> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.push(b'\n');
    }
    Ok(out)
}
