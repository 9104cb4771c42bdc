use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Method, SeedResult};
use crate::error::{Error, Result};

/// Serializes non-finite values as the strings `inf`, `-inf` and `nan` so
/// they survive JSON.
mod extended_f64 {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct ExtendedVisitor;

    impl Visitor<'_> for ExtendedVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            f.write_str("a number or one of inf, -inf, nan")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            v.trim().parse().map_err(|_| E::custom(format!("invalid number `{v}`")))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(ExtendedVisitor)
    }
}

/// One `(method, seed, alpha)` aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: Method,
    pub seed: usize,
    pub alpha: f64,
    pub setup: u8,
    pub scenario: u8,
    pub mean_coverage: f64,
    /// Mean over finite intervals only; `inf` when every interval is infinite.
    #[serde(with = "extended_f64")]
    pub mean_width: f64,
    #[serde(with = "extended_f64")]
    pub median_width: f64,
    pub inf_fraction: f64,
    pub ess_median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCoverageRow {
    pub seed: usize,
    pub alpha: f64,
    pub method: Method,
    pub t0: f64,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: usize,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub grid_rows: Vec<GridCoverageRow>,
    pub failed_seeds: Vec<FailedSeed>,
}

/// Across-seed aggregate of one `(method, alpha)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub alpha: f64,
    pub n_seeds: usize,
    pub mean_coverage: f64,
    /// Sample variance of the per-seed coverages; 0 for a single seed.
    pub coverage_variance: f64,
    #[serde(with = "extended_f64")]
    pub mean_width: f64,
    pub inf_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const COVERAGE_CSV: &str = "coverage.csv";
pub const COVERAGE_JSON: &str = "coverage.json";
pub const GRID_DIR: &str = "grid";
const FAILED_PREFIX: &str = "# failed_seed,";

fn grid_file_name(seed: usize, alpha: f64) -> String {
    format!("grid_coverage_seed{seed}_alpha{alpha}.csv")
}

fn parse_grid_file_name(name: &str) -> Option<(usize, f64)> {
    let rest = name.strip_prefix("grid_coverage_seed")?.strip_suffix(".csv")?;
    let (seed, alpha) = rest.split_once("_alpha")?;
    Some((seed.parse().ok()?, alpha.parse().ok()?))
}

impl CoverageReport {
    pub(super) fn assemble(cfg: &ExperimentConfig, results: Vec<Result<SeedResult>>) -> Self {
        let mut report = CoverageReport::default();
        for (seed, result) in results.into_iter().enumerate() {
            let result = match result {
                Ok(r) => r,
                Err(e) => {
                    report.failed_seeds.push(FailedSeed { seed, error: e.to_string() });
                    continue;
                }
            };
            for o in &result.outcomes {
                report.rows.push(CoverageRow {
                    method: o.method,
                    seed,
                    alpha: o.alpha,
                    setup: cfg.setup,
                    scenario: cfg.scenario,
                    mean_coverage: o.mean_coverage,
                    mean_width: o.mean_width,
                    median_width: o.median_width,
                    inf_fraction: o.inf_fraction,
                    ess_median: o.ess_median,
                });
                for (&t0, &coverage) in result.grid.iter().zip(&o.grid_coverage) {
                    report.grid_rows.push(GridCoverageRow { seed, alpha: o.alpha, method: o.method, t0, coverage });
                }
            }
        }
        report.canonicalize();
        report
    }

    /// Orders rows by seed, method, alpha and grid rows by seed, alpha,
    /// method, treatment.
    pub fn canonicalize(&mut self) {
        self.rows.sort_by(|a, b| (a.seed, a.method).cmp(&(b.seed, b.method)).then(a.alpha.total_cmp(&b.alpha)));
        self.grid_rows.sort_by(|a, b| {
            a.seed
                .cmp(&b.seed)
                .then(a.alpha.total_cmp(&b.alpha))
                .then(a.method.cmp(&b.method))
                .then(a.t0.total_cmp(&b.t0))
        });
        self.failed_seeds.sort_by_key(|f| f.seed);
    }

    /// Per-seed rows of one method at one alpha.
    pub fn rows_for(&self, method: Method, alpha: f64) -> impl Iterator<Item = &CoverageRow> {
        self.rows.iter().filter(move |r| r.method == method && r.alpha == alpha)
    }

    pub fn summarize(&self) -> Vec<MethodSummary> {
        let mut keys: Vec<(Method, f64)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|(m, a)| *m == r.method && *a == r.alpha) {
                keys.push((r.method, r.alpha));
            }
        }
        keys.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
        keys.into_iter()
            .map(|(method, alpha)| {
                let rows: Vec<&CoverageRow> = self.rows_for(method, alpha).collect();
                let n = rows.len() as f64;
                let mean_coverage = rows.iter().map(|r| r.mean_coverage).sum::<f64>() / n;
                let coverage_variance = if rows.len() > 1 {
                    rows.iter().map(|r| (r.mean_coverage - mean_coverage).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                let finite: Vec<f64> = rows.iter().map(|r| r.mean_width).filter(|w| w.is_finite()).collect();
                let mean_width =
                    if finite.is_empty() { f64::INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 };
                MethodSummary {
                    method,
                    alpha,
                    n_seeds: rows.len(),
                    mean_coverage,
                    coverage_variance,
                    mean_width,
                    inf_fraction: rows.iter().map(|r| r.inf_fraction).sum::<f64>() / n,
                }
            })
            .collect()
    }

    pub fn summary(&self, method: Method, alpha: f64) -> Option<MethodSummary> {
        self.summarize().into_iter().find(|s| s.method == method && s.alpha == alpha)
    }
}

fn write_coverage_csv(report: &CoverageReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if report.rows.is_empty() {
        w.write_record([
            "method",
            "seed",
            "alpha",
            "setup",
            "scenario",
            "mean_coverage",
            "mean_width",
            "median_width",
            "inf_fraction",
            "ess_median",
        ])?;
    }
    for row in &report.rows {
        w.serialize(row)?;
    }
    let mut file = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    for f in &report.failed_seeds {
        writeln!(file, "{FAILED_PREFIX}{},{}", f.seed, f.error.replace('\n', " "))?;
    }
    Ok(())
}

/// Plot table `method,t0,coverage` of one (seed, alpha).
#[derive(Serialize, Deserialize)]
struct GridLine {
    method: Method,
    t0: f64,
    coverage: f64,
}

/// Writes the report under `dir`: `coverage.csv` and/or `coverage.json`, plus
/// one `grid/grid_coverage_seed{S}_alpha{A}.csv` per (seed, alpha) with grid
/// rows. Returns the written paths.
pub fn emit_report(report: &CoverageReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Csv) {
        let path = dir.join(COVERAGE_CSV);
        write_coverage_csv(report, &path)?;
        written.push(path);
    }
    if formats.contains(&ReportFormat::Json) {
        let path = dir.join(COVERAGE_JSON);
        fs::write(&path, serde_json::to_string_pretty(report)?)?;
        written.push(path);
    }
    if !report.grid_rows.is_empty() {
        let grid_dir = dir.join(GRID_DIR);
        fs::create_dir_all(&grid_dir)?;
        let mut start = 0;
        while start < report.grid_rows.len() {
            let (seed, alpha) = (report.grid_rows[start].seed, report.grid_rows[start].alpha);
            let end =
                start + report.grid_rows[start..].iter().take_while(|r| r.seed == seed && r.alpha == alpha).count();
            let path = grid_dir.join(grid_file_name(seed, alpha));
            let mut w = csv::Writer::from_path(&path)?;
            for r in &report.grid_rows[start..end] {
                w.serialize(GridLine { method: r.method, t0: r.t0, coverage: r.coverage })?;
            }
            w.flush()?;
            written.push(path);
            start = end;
        }
    }
    Ok(written)
}

fn read_coverage_csv(path: &Path) -> Result<(Vec<CoverageRow>, Vec<FailedSeed>)> {
    let text = fs::read_to_string(path)?;
    let mut failed = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(FAILED_PREFIX) {
            let (seed, error) = rest.split_once(',').unwrap_or((rest, ""));
            let seed = seed.parse().map_err(|_| Error::invalid(format!("malformed failed-seed line `{line}`")))?;
            failed.push(FailedSeed { seed, error: error.to_string() });
        }
    }
    let rows = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<CoverageRow>, _>>()?;
    Ok((rows, failed))
}

/// Reads a report written by [`emit_report`], preferring the CSV form.
pub fn read_report(dir: &Path) -> Result<CoverageReport> {
    let csv_path = dir.join(COVERAGE_CSV);
    let mut report = if csv_path.exists() {
        let (rows, failed_seeds) = read_coverage_csv(&csv_path)?;
        CoverageReport { rows, grid_rows: Vec::new(), failed_seeds }
    } else {
        let json: CoverageReport = serde_json::from_str(&fs::read_to_string(dir.join(COVERAGE_JSON))?)?;
        CoverageReport { grid_rows: Vec::new(), ..json }
    };
    let grid_dir = dir.join(GRID_DIR);
    if grid_dir.is_dir() {
        for entry in fs::read_dir(&grid_dir)? {
            let path = entry?.path();
            let Some((seed, alpha)) = path.file_name().and_then(|n| n.to_str()).and_then(parse_grid_file_name) else {
                continue;
            };
            for line in csv::Reader::from_path(&path)?.deserialize() {
                let GridLine { method, t0, coverage } = line?;
                report.grid_rows.push(GridCoverageRow { seed, alpha, method, t0, coverage });
            }
        }
    }
    report.canonicalize();
    Ok(report)
}
