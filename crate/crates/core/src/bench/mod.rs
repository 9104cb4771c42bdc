//! Coverage experiment harness.
//!
//! One experiment runs a scenario over many seeds. Each seed generates data,
//! splits it 50/25/25, fits the S-learner on the training part, binds oracle
//! densities and (when needed) fits the propensity estimator, builds the
//! treatment grid and then, for every test row and grid treatment, forms each
//! method's interval and checks it against one counterfactual draw.

mod report;

pub use report::{
    emit_report, read_report, CoverageReport, CoverageRow, FailedSeed, GridCoverageRow, MethodSummary, ReportFormat,
};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cadrf::{fit_cadrf, DoseResponseModel};
use crate::conformal::{check_level, nonconformity_abs, standard_radius, CalibratedScores, PredictionInterval};
use crate::data::{split_dataset, Dataset, Part, SplitFractions};
use crate::error::{Error, Result};
use crate::learner::{DefaultLearner, GbrtParams};
use crate::propensity::{
    fit_propensity, kernel_bandwidth, log_w_global, log_w_local, log_w_local_prop, OracleDensity, PropensityConfig,
    PropensityModel, TreatmentBounds,
};
use crate::rng::derive_seed;
use crate::synthgen::{generate, sample_counterfactual, treatment_grid, ScenarioSpec};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "DOSECONF_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    StandardCp,
    WcpLocal,
    WcpGlobalOracle,
    WcpGlobalPropensity,
    WcpLocalOracle,
    WcpLocalPropensity,
}

/// Where a method's propensity density comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DensitySource {
    Oracle,
    Estimated,
}

/// The weight family a method applies to calibration points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    Uniform,
    Kernel,
    Global,
    LocalPropensity,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::StandardCp,
        Method::WcpLocal,
        Method::WcpGlobalOracle,
        Method::WcpGlobalPropensity,
        Method::WcpLocalOracle,
        Method::WcpLocalPropensity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::StandardCp => "standard_cp",
            Method::WcpLocal => "wcp_local",
            Method::WcpGlobalOracle => "wcp_global_oracle",
            Method::WcpGlobalPropensity => "wcp_global_propensity",
            Method::WcpLocalOracle => "wcp_local_oracle",
            Method::WcpLocalPropensity => "wcp_local_propensity",
        }
    }

    pub fn density_source(self) -> Option<DensitySource> {
        match self {
            Method::StandardCp | Method::WcpLocal => None,
            Method::WcpGlobalOracle | Method::WcpLocalOracle => Some(DensitySource::Oracle),
            Method::WcpGlobalPropensity | Method::WcpLocalPropensity => Some(DensitySource::Estimated),
        }
    }

    pub fn weighting(self) -> Weighting {
        match self {
            Method::StandardCp => Weighting::Uniform,
            Method::WcpLocal => Weighting::Kernel,
            Method::WcpGlobalOracle | Method::WcpGlobalPropensity => Weighting::Global,
            Method::WcpLocalOracle | Method::WcpLocalPropensity => Weighting::LocalPropensity,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Parses `all` or a comma-separated list of method names.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    if s.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let mut methods = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Method = part.parse()?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    Ok(methods)
}

/// Which propensity-based variants run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMode {
    Oracle,
    Estimated,
    #[default]
    Both,
}

impl PropensityMode {
    fn allows(self, source: Option<DensitySource>) -> bool {
        matches!(
            (self, source),
            (_, None)
                | (PropensityMode::Both, _)
                | (PropensityMode::Oracle, Some(DensitySource::Oracle))
                | (PropensityMode::Estimated, Some(DensitySource::Estimated))
        )
    }
}

impl FromStr for PropensityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(PropensityMode::Oracle),
            "estimated" => Ok(PropensityMode::Estimated),
            "both" => Ok(PropensityMode::Both),
            _ => Err(Error::Config(format!("unknown propensity mode `{s}`"))),
        }
    }
}

/// What the intervals are evaluated against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Every test row at every grid treatment, against a counterfactual draw.
    #[default]
    Grid,
    /// Every test row at its observed treatment, against its observed outcome.
    Observed,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(EvalMode::Grid),
            "observed" => Ok(EvalMode::Observed),
            _ => Err(Error::Config(format!("unknown evaluation mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub setup: u8,
    pub scenario: u8,
    /// Multiplier on the outcome noise.
    pub noise_scale: f64,
    pub n_seeds: usize,
    /// Master seed; per-seed seeds are derived from it.
    pub seed: u64,
    pub n_samples: usize,
    pub alphas: Vec<f64>,
    pub grid_k: usize,
    pub methods: Vec<Method>,
    pub propensity: PropensityMode,
    pub eval: EvalMode,
    pub fractions: SplitFractions,
    pub learner: GbrtParams,
    pub propensity_model: PropensityConfig,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    /// Desk-scale profile: 10 seeds of 1000 samples.
    fn default() -> Self {
        Self {
            setup: 3,
            scenario: 1,
            noise_scale: 1.0,
            n_seeds: 10,
            seed: 0,
            n_samples: 1000,
            alphas: vec![0.1, 0.05],
            grid_k: 40,
            methods: Method::ALL.to_vec(),
            propensity: PropensityMode::Both,
            eval: EvalMode::Grid,
            fractions: SplitFractions::default(),
            learner: GbrtParams::default(),
            propensity_model: PropensityConfig::default(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// 50 seeds of 5000 samples.
    pub fn paper_scale(mut self) -> Self {
        self.n_seeds = 50;
        self.n_samples = 5000;
        self
    }

    pub fn scenario_spec(&self, seed: u64) -> ScenarioSpec {
        ScenarioSpec::new(self.setup, self.scenario, self.n_samples, seed).with_noise_scale(self.noise_scale)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario_spec(0).scenario()?;
        if self.alphas.is_empty() {
            return Err(Error::Config("at least one alpha is required".into()));
        }
        for &a in &self.alphas {
            check_level(a).map_err(|_| Error::Config(format!("alpha {a} is outside (0, 1)")))?;
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be positive".into()));
        }
        if self.grid_k < 2 {
            return Err(Error::Config("grid_k must be at least 2".into()));
        }
        self.fractions.sizes(self.n_samples)?;
        if self.eval == EvalMode::Observed && self.methods.iter().any(|m| *m != Method::StandardCp) {
            return Err(Error::Config("observed evaluation supports only standard_cp".into()));
        }
        if self.effective_methods().is_empty() {
            return Err(Error::Config(format!(
                "no configured method is compatible with propensity mode {:?}",
                self.propensity
            )));
        }
        Ok(())
    }

    /// Configured methods restricted to those the propensity mode allows.
    pub fn effective_methods(&self) -> Vec<Method> {
        self.methods.iter().copied().filter(|m| self.propensity.allows(m.density_source())).collect()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_reader(std::fs::File::open(path)?)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Seed of the `index`-th run.
    pub fn run_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, &[index as u64])
    }
}

/// Per-grid-point weighted calibration, computed once and reused for every
/// test query at that treatment.
#[derive(Clone, Debug)]
pub struct LocalCalibration {
    grid: Vec<f64>,
    tables: Vec<CalibratedScores>,
}

impl LocalCalibration {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Calibration at grid index `g`.
    pub fn at(&self, g: usize) -> &CalibratedScores {
        &self.tables[g]
    }

    /// Calibration at treatment `t0`, which must be a grid value.
    pub fn get(&self, t0: f64) -> Result<&CalibratedScores> {
        self.grid
            .iter()
            .position(|g| g.to_bits() == t0.to_bits())
            .map(|g| &self.tables[g])
            .ok_or(Error::RecalibrationRequired { t0 })
    }
}

/// Builds the weighted calibration at every grid treatment. `log_weight(i, t0)`
/// is the log weight of calibration point `i` when targeting `t0`; it is
/// called exactly once per (point, grid value).
pub fn precalibrate_local<W>(
    scores: &[f64],
    grid: &[f64],
    bounds: TreatmentBounds,
    log_weight: W,
) -> Result<LocalCalibration>
where
    W: Fn(usize, f64) -> f64,
{
    if grid.is_empty() {
        return Err(Error::invalid("treatment grid is empty"));
    }
    if let Some(t0) = grid.iter().find(|t| !bounds.contains(**t)) {
        return Err(Error::invalid(format!("grid value {t0} is outside [{}, {}]", bounds.lower, bounds.upper)));
    }
    let tables = grid
        .iter()
        .map(|&t0| {
            let lw: Vec<f64> = (0..scores.len()).map(|i| log_weight(i, t0)).collect();
            CalibratedScores::from_log_weights(scores, &lw)
        })
        .collect::<Result<_>>()?;
    Ok(LocalCalibration { grid: grid.to_vec(), tables })
}

/// Everything one seed's grid evaluation needs. Densities are injected so
/// tests can substitute their own.
pub struct SeedContext<'a> {
    pub model: &'a dyn DoseResponseModel,
    pub cal: &'a Dataset,
    pub test: &'a Dataset,
    pub grid: &'a [f64],
    pub bounds: TreatmentBounds,
    pub oracle: Option<&'a dyn PropensityModel>,
    pub estimate: Option<&'a dyn PropensityModel>,
    /// Treatment scale behind the kernel bandwidth of `wcp_local`.
    pub local_sigma: f64,
}

/// Results of one method at one alpha on one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    pub alpha: f64,
    pub mean_coverage: f64,
    pub mean_width: f64,
    pub median_width: f64,
    pub inf_fraction: f64,
    pub ess_median: f64,
    /// Coverage at each grid point; empty under observed evaluation.
    pub grid_coverage: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::INFINITY;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Running containment and width tallies.
#[derive(Default)]
struct Tally {
    covered: usize,
    total: usize,
    infinite: usize,
    finite_widths: Vec<f64>,
}

impl Tally {
    fn record(&mut self, interval: PredictionInterval, y: f64) {
        self.total += 1;
        if interval.contains(y) {
            self.covered += 1;
        }
        if interval.is_bounded() {
            self.finite_widths.push(interval.width());
        } else {
            self.infinite += 1;
        }
    }

    fn coverage(&self) -> f64 {
        self.covered as f64 / self.total as f64
    }

    fn finish(mut self, method: Method, alpha: f64, ess_median: f64, grid_coverage: Vec<f64>) -> MethodOutcome {
        let mean_width = if self.finite_widths.is_empty() {
            f64::INFINITY
        } else {
            self.finite_widths.iter().sum::<f64>() / self.finite_widths.len() as f64
        };
        MethodOutcome {
            method,
            alpha,
            mean_coverage: self.coverage(),
            mean_width,
            median_width: median(&mut self.finite_widths),
            inf_fraction: self.infinite as f64 / self.total as f64,
            ess_median,
            grid_coverage,
        }
    }
}

fn density_for<'a>(ctx: &SeedContext<'a>, source: DensitySource) -> Result<&'a dyn PropensityModel> {
    match source {
        DensitySource::Oracle => ctx.oracle,
        DensitySource::Estimated => ctx.estimate,
    }
    .ok_or_else(|| Error::Config(format!("no {source:?} propensity density bound")))
}

/// Method-specific calibration across the grid plus test-point log weights.
enum Calibration {
    Shared(CalibratedScores),
    PerGrid(LocalCalibration),
}

impl Calibration {
    fn at(&self, g: usize) -> &CalibratedScores {
        match self {
            Calibration::Shared(c) => c,
            Calibration::PerGrid(c) => c.at(g),
        }
    }
}

/// Evaluates `methods` at every (test row, grid treatment). `outcomes[j][g]`
/// is the counterfactual draw for test row `j` at grid value `g`; it is
/// shared across methods.
pub fn evaluate_grid(
    ctx: &SeedContext<'_>,
    methods: &[Method],
    alphas: &[f64],
    outcomes: &[Vec<f64>],
) -> Result<Vec<MethodOutcome>> {
    let (cal, test, grid) = (ctx.cal.samples(), ctx.test.samples(), ctx.grid);
    if cal.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if outcomes.len() != test.len() || outcomes.iter().any(|row| row.len() != grid.len()) {
        return Err(Error::invalid("one counterfactual outcome per test row and grid value required"));
    }
    let scores: Vec<f64> = cal.iter().map(|s| nonconformity_abs(s.y, ctx.model.predict(&s.x, s.t))).collect();
    let predictions: Vec<Vec<f64>> =
        test.iter().map(|s| grid.iter().map(|&t0| ctx.model.predict(&s.x, t0)).collect()).collect();

    let mut results = Vec::with_capacity(methods.len() * alphas.len());
    for &method in methods {
        let (calibration, test_log_weights) = match method.weighting() {
            Weighting::Uniform => {
                (Calibration::Shared(CalibratedScores::from_log_weights(&scores, &vec![0.0; scores.len()])?), None)
            }
            Weighting::Kernel => {
                let h = kernel_bandwidth(ctx.local_sigma);
                let table = precalibrate_local(&scores, grid, ctx.bounds, |i, t0| log_w_local(cal[i].t, t0, h))?;
                (Calibration::PerGrid(table), None)
            }
            Weighting::Global | Weighting::LocalPropensity => {
                let density = density_for(ctx, method.density_source().expect("propensity method"))?;
                let cal_log_pi: Vec<f64> = cal.iter().map(|s| density.log_density(&s.x, s.t)).collect();
                let test_lw: Vec<Vec<f64>> =
                    test.iter().map(|s| grid.iter().map(|&t0| -density.log_density(&s.x, t0)).collect()).collect();
                let calibration = if method.weighting() == Weighting::Global {
                    let lw: Vec<f64> =
                        cal.iter().zip(&cal_log_pi).map(|(s, lp)| log_w_global(*lp, s.t, ctx.bounds)).collect();
                    Calibration::Shared(CalibratedScores::from_log_weights(&scores, &lw)?)
                } else {
                    let h = kernel_bandwidth(density.scale());
                    Calibration::PerGrid(precalibrate_local(&scores, grid, ctx.bounds, |i, t0| {
                        log_w_local_prop(cal_log_pi[i], cal[i].t, t0, h, ctx.bounds)
                    })?)
                };
                (calibration, Some(test_lw))
            }
        };
        let mut ess: Vec<f64> = (0..grid.len()).map(|g| calibration.at(g).effective_sample_size()).collect();
        let ess_median = median(&mut ess);

        for &alpha in alphas {
            let mut tally = Tally::default();
            let mut grid_coverage = Vec::with_capacity(grid.len());
            for g in 0..grid.len() {
                let scores_g = calibration.at(g);
                let mut covered = 0usize;
                for j in 0..test.len() {
                    let test_lw = test_log_weights.as_ref().map_or(0.0, |lw| lw[j][g]);
                    let interval = scores_g.interval(predictions[j][g], test_lw, alpha)?;
                    covered += usize::from(interval.contains(outcomes[j][g]));
                    tally.record(interval, outcomes[j][g]);
                }
                grid_coverage.push(covered as f64 / test.len() as f64);
            }
            results.push(tally.finish(method, alpha, ess_median, grid_coverage));
        }
    }
    Ok(results)
}

/// Standard split CP at each test row's observed treatment, against its
/// observed outcome.
pub fn evaluate_observed<M: DoseResponseModel + ?Sized>(
    model: &M,
    cal: &Dataset,
    test: &Dataset,
    alphas: &[f64],
) -> Result<Vec<MethodOutcome>> {
    let mut scores: Vec<f64> = cal.samples().iter().map(|s| nonconformity_abs(s.y, model.predict(&s.x, s.t))).collect();
    scores.sort_by(f64::total_cmp);
    alphas
        .iter()
        .map(|&alpha| {
            let radius = standard_radius(&scores, alpha)?;
            let mut tally = Tally::default();
            for s in test.samples() {
                tally.record(PredictionInterval::symmetric(model.predict(&s.x, s.t), radius), s.y);
            }
            Ok(tally.finish(Method::StandardCp, alpha, scores.len() as f64, Vec::new()))
        })
        .collect()
}

/// Outputs of one successful seed.
#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed_index: usize,
    pub grid: Vec<f64>,
    pub outcomes: Vec<MethodOutcome>,
}

/// Data for run `index`, already split.
pub fn seed_dataset(cfg: &ExperimentConfig, index: usize) -> Result<Dataset> {
    let seed = cfg.run_seed(index);
    split_dataset(generate(&cfg.scenario_spec(seed))?, cfg.fractions, seed)
}

/// The full pipeline for run `index`.
pub fn run_seed(cfg: &ExperimentConfig, index: usize) -> Result<SeedResult> {
    let seed = cfg.run_seed(index);
    let spec = cfg.scenario_spec(seed);
    let scenario = spec.scenario()?;
    let data = seed_dataset(cfg, index)?;
    let (train, cal, test) = (data.part(Part::Train)?, data.part(Part::Calibration)?, data.part(Part::Test)?);
    let learner = DefaultLearner::new(GbrtParams { seed: derive_seed(seed, &[1]), ..cfg.learner.clone() });
    let model = fit_cadrf(&learner, &train)?;

    if cfg.eval == EvalMode::Observed {
        let outcomes = evaluate_observed(&model, &cal, &test, &cfg.alphas)?;
        return Ok(SeedResult { seed_index: index, grid: Vec::new(), outcomes });
    }

    let methods = cfg.effective_methods();
    let grid = treatment_grid(&train, cfg.grid_k)?;
    let bounds = TreatmentBounds::new(grid[0], grid[grid.len() - 1])?;
    let oracle = OracleDensity::new(scenario);
    let needs_estimate = methods.iter().any(|m| m.density_source() == Some(DensitySource::Estimated));
    let estimate = if needs_estimate { Some(fit_propensity(&train, &cal, &cfg.propensity_model, seed)?) } else { None };
    let local_sigma = estimate.as_ref().map_or(oracle.scale(), |e| e.scale());

    let outcomes: Vec<Vec<f64>> = test
        .samples()
        .iter()
        .enumerate()
        .map(|(j, s)| {
            grid.iter()
                .enumerate()
                .map(|(g, &t0)| sample_counterfactual(&spec, &s.x, t0, derive_seed(seed, &[j as u64, g as u64])))
                .collect()
        })
        .collect::<Result<_>>()?;

    let ctx = SeedContext {
        model: &model,
        cal: &cal,
        test: &test,
        grid: &grid,
        bounds,
        oracle: Some(&oracle),
        estimate: estimate.as_ref().map(|e| e as &dyn PropensityModel),
        local_sigma,
    };
    let outcomes = evaluate_grid(&ctx, &methods, &cfg.alphas, &outcomes)?;
    Ok(SeedResult { seed_index: index, grid, outcomes })
}

/// Worker count from `DOSECONF_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Runs every seed concurrently and merges the results. Seeds that fail are
/// listed in the report rather than aborting the sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<CoverageReport> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<SeedResult>> =
        pool.install(|| (0..cfg.n_seeds).into_par_iter().map(|s| run_seed(cfg, s)).collect());
    Ok(CoverageReport::assemble(cfg, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::predict_interval_weighted_log;
    use crate::data::Sample;
    use crate::propensity::ConstantDensity;
    use std::sync::Mutex;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            n_seeds: 2,
            n_samples: 200,
            grid_k: 5,
            learner: GbrtParams { n_rounds: 40, ..Default::default() },
            propensity_model: PropensityConfig {
                learner: GbrtParams { n_rounds: 40, ..Default::default() },
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert_eq!(parse_methods("all").unwrap().len(), 6);
        assert_eq!(parse_methods("standard_cp,wcp_local").unwrap(), vec![Method::StandardCp, Method::WcpLocal]);
        assert!(parse_methods("bogus").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = [
            ExperimentConfig { methods: vec![], ..Default::default() },
            ExperimentConfig { alphas: vec![1.0], ..Default::default() },
            ExperimentConfig { alphas: vec![], ..Default::default() },
            ExperimentConfig { setup: 7, ..Default::default() },
            ExperimentConfig { n_seeds: 0, ..Default::default() },
            ExperimentConfig { eval: EvalMode::Observed, ..Default::default() },
            ExperimentConfig {
                methods: vec![Method::WcpGlobalOracle],
                propensity: PropensityMode::Estimated,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn propensity_mode_filters_methods() {
        let cfg = ExperimentConfig { propensity: PropensityMode::Oracle, ..Default::default() };
        assert_eq!(
            cfg.effective_methods(),
            vec![Method::StandardCp, Method::WcpLocal, Method::WcpGlobalOracle, Method::WcpLocalOracle]
        );
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = small_config();
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"setup": 2, "scenario": 2}"#).unwrap();
        assert_eq!(partial.n_seeds, 10);
        assert_eq!(partial.setup, 2);
    }

    fn toy_calibration() -> (Vec<f64>, Dataset) {
        let samples: Vec<Sample> =
            (0..30).map(|i| Sample::new(vec![i as f64 / 30.0], i as f64 / 3.0, ((i * 7) % 11) as f64 / 4.0)).collect();
        let cal = Dataset::new(samples).unwrap();
        let scores = cal.samples().iter().map(|s| s.y).collect();
        (scores, cal)
    }

    #[test]
    fn precalibration_matches_on_the_fly_intervals() {
        let (scores, cal) = toy_calibration();
        let bounds = TreatmentBounds::new(0.0, 10.0).unwrap();
        let grid = [1.0, 4.5, 9.0];
        let h = 1.3;
        let calls = Mutex::new(0usize);
        let table = precalibrate_local(&scores, &grid, bounds, |i, t0| {
            *calls.lock().unwrap() += 1;
            log_w_local(cal.samples()[i].t, t0, h)
        })
        .unwrap();
        assert_eq!(*calls.lock().unwrap(), grid.len() * scores.len());

        let zero = |_: &[f64], _: f64| 0.0;
        for &t0 in &grid {
            for alpha in [0.1, 0.2] {
                let cached = table.get(t0).unwrap().interval(0.0, 0.0, alpha).unwrap();
                let direct =
                    predict_interval_weighted_log(&zero, &cal, |_, _, t| log_w_local(t, t0, h), 0.0, &[0.0], t0, alpha)
                        .unwrap();
                assert_eq!(cached, direct);
            }
        }
        assert!(matches!(table.get(2.0), Err(Error::RecalibrationRequired { .. })));
        assert!(precalibrate_local(&scores, &[11.0], bounds, |_, _| 0.0).is_err());
        assert!(precalibrate_local(&scores, &[], bounds, |_, _| 0.0).is_err());
    }

    /// Records every density query.
    struct Spy {
        inner: ConstantDensity,
        queries: Mutex<Vec<(Vec<u64>, u64)>>,
    }

    impl Spy {
        fn new(value: f64) -> Self {
            Self { inner: ConstantDensity { value, scale: 2.0 }, queries: Mutex::new(Vec::new()) }
        }

        fn sorted_queries(&self) -> Vec<(Vec<u64>, u64)> {
            let mut q = self.queries.lock().unwrap().clone();
            q.sort();
            q
        }
    }

    impl PropensityModel for Spy {
        fn log_density(&self, x: &[f64], t: f64) -> f64 {
            self.queries.lock().unwrap().push((x.iter().map(|v| v.to_bits()).collect(), t.to_bits()));
            self.inner.log_density(x, t)
        }

        fn scale(&self) -> f64 {
            self.inner.scale()
        }
    }

    fn toy_context<'a>(
        cal: &'a Dataset,
        test: &'a Dataset,
        grid: &'a [f64],
        oracle: Option<&'a dyn PropensityModel>,
        estimate: Option<&'a dyn PropensityModel>,
    ) -> SeedContext<'a> {
        static MODEL: fn(&[f64], f64) -> f64 = |x, t| x[0] + 0.1 * t;
        SeedContext {
            model: &MODEL,
            cal,
            test,
            grid,
            bounds: TreatmentBounds::new(-100.0, 100.0).unwrap(),
            oracle,
            estimate,
            local_sigma: 2.0,
        }
    }

    fn toy_test() -> (Dataset, Vec<f64>, Vec<Vec<f64>>) {
        let test = Dataset::new((0..8).map(|j| Sample::new(vec![j as f64 / 8.0], 0.0, 0.0)).collect()).unwrap();
        let grid = vec![0.0, 2.5, 5.0, 7.5];
        let outcomes = (0..8)
            .map(|j| grid.iter().map(|t| j as f64 / 8.0 + 0.1 * t + ((j * 5) % 7) as f64 / 3.0 - 1.0).collect())
            .collect();
        (test, grid, outcomes)
    }

    #[test]
    fn oracle_and_estimated_variants_query_the_same_points() {
        let (_, cal) = toy_calibration();
        let (test, grid, outcomes) = toy_test();
        let (oracle, estimate) = (Spy::new(0.2), Spy::new(0.2));
        let ctx = toy_context(&cal, &test, &grid, Some(&oracle), Some(&estimate));
        let a = evaluate_grid(&ctx, &[Method::WcpGlobalOracle, Method::WcpLocalOracle], &[0.1], &outcomes).unwrap();
        let b =
            evaluate_grid(&ctx, &[Method::WcpGlobalPropensity, Method::WcpLocalPropensity], &[0.1], &outcomes).unwrap();
        assert!(!oracle.sorted_queries().is_empty());
        assert_eq!(oracle.sorted_queries(), estimate.sorted_queries());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mean_coverage, y.mean_coverage);
            assert_eq!(x.grid_coverage, y.grid_coverage);
        }
    }

    #[test]
    fn constant_density_reduces_global_weighting_to_standard_cp() {
        let (_, cal) = toy_calibration();
        let (test, grid, outcomes) = toy_test();
        let flat = ConstantDensity { value: 0.05, scale: 1.0 };
        let ctx = toy_context(&cal, &test, &grid, Some(&flat), None);
        let out = evaluate_grid(&ctx, &[Method::StandardCp, Method::WcpGlobalOracle], &[0.1, 0.2], &outcomes).unwrap();
        for alpha in 0..2 {
            let (std, global) = (&out[alpha], &out[2 + alpha]);
            assert_eq!(std.mean_coverage, global.mean_coverage);
            assert_eq!(std.mean_width, global.mean_width);
            assert_eq!(std.median_width, global.median_width);
            assert_eq!(std.grid_coverage, global.grid_coverage);
        }
    }

    #[test]
    fn missing_density_is_an_error() {
        let (_, cal) = toy_calibration();
        let (test, grid, outcomes) = toy_test();
        let ctx = toy_context(&cal, &test, &grid, None, None);
        assert!(evaluate_grid(&ctx, &[Method::WcpGlobalOracle], &[0.1], &outcomes).is_err());
    }

    #[test]
    fn grid_coverage_matches_naive_recount() {
        let cfg = small_config();
        let result = run_seed(&cfg, 0).unwrap();
        let seed = cfg.run_seed(0);
        let spec = cfg.scenario_spec(seed);
        let data = seed_dataset(&cfg, 0).unwrap();
        let (train, cal, test) =
            (data.part(Part::Train).unwrap(), data.part(Part::Calibration).unwrap(), data.part(Part::Test).unwrap());
        let learner = DefaultLearner::new(GbrtParams { seed: derive_seed(seed, &[1]), ..cfg.learner.clone() });
        let model = fit_cadrf(&learner, &train).unwrap();
        let oracle = OracleDensity::new(spec.scenario().unwrap());
        let bounds = TreatmentBounds::new(result.grid[0], *result.grid.last().unwrap()).unwrap();

        let alpha = cfg.alphas[0];
        let outcome = result.outcomes.iter().find(|o| o.method == Method::WcpGlobalOracle && o.alpha == alpha).unwrap();
        let mut covered = 0usize;
        for (j, s) in test.samples().iter().enumerate() {
            for (g, &t0) in result.grid.iter().enumerate() {
                let y = sample_counterfactual(&spec, &s.x, t0, derive_seed(seed, &[j as u64, g as u64])).unwrap();
                let interval = predict_interval_weighted_log(
                    &model,
                    &cal,
                    |_, x, t| log_w_global(oracle.log_density(x, t), t, bounds),
                    -oracle.log_density(&s.x, t0),
                    &s.x,
                    t0,
                    alpha,
                )
                .unwrap();
                covered += usize::from(interval.contains(y));
            }
        }
        let naive = covered as f64 / (test.len() * result.grid.len()) as f64;
        assert_eq!(outcome.mean_coverage, naive);
        let grid_mean = outcome.grid_coverage.iter().sum::<f64>() / outcome.grid_coverage.len() as f64;
        assert!((grid_mean - naive).abs() < 1e-12);
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = ExperimentConfig { n_seeds: 2, ..small_config() };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.failed_seeds.is_empty());
        assert_eq!(a.rows.len(), 2 * 6 * 2);
        for row in &a.rows {
            assert!((0.0..=1.0).contains(&row.mean_coverage));
            assert!((0.0..=1.0).contains(&row.inf_fraction));
        }
    }

    #[test]
    fn observed_evaluation_runs_standard_cp_only() {
        let cfg = ExperimentConfig {
            setup: 1,
            eval: EvalMode::Observed,
            methods: vec![Method::StandardCp],
            n_seeds: 1,
            ..small_config()
        };
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.rows.len(), cfg.alphas.len());
        assert!(report.grid_rows.is_empty());
    }

    #[test]
    fn failing_seeds_are_recorded_not_fatal() {
        // A single training row leaves no treatment range for the grid.
        let cfg = ExperimentConfig { n_samples: 3, n_seeds: 2, grid_k: 2, ..small_config() };
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.failed_seeds.len(), 2);
        assert!(report.rows.is_empty());
    }
}
