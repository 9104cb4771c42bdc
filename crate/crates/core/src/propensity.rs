//! Generalized propensity densities and the likelihood-ratio weights built
//! from them.
//!
//! Evaluating a dose-response model at every treatment in `[t_L, t_U]` treats
//! the test treatment as uniform on that range, so the likelihood ratio for
//! calibration point `(x_i, t_i)` is `1[t_L, t_U](t_i) / pi(t_i | x_i)` (the
//! global propensity weight). Local weights replace the uniform target with a
//! Gaussian kernel around a target dose `t0`; the local-propensity weight is
//! their product.
//!
//! The estimated density follows a conformal recipe: a learner predicts the
//! treatment from the covariates, a split conformal predictive system over
//! the calibration residuals gives a discrete predictive distribution of the
//! treatment at any `x`, and a Gaussian KDE over that distribution gives the
//! density.

use std::collections::HashMap;
use std::io::Write;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::cps::SplitCps;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kde::{BandwidthRule, KernelDensity};
use crate::learner::{DefaultLearner, GbrtModel, GbrtParams, Predictor, RegressionLearner};
use crate::rng::derive_seed;
use crate::synthgen::Scenario;

/// Lower clamp applied to every propensity density before it is inverted.
pub const DENSITY_FLOOR: f64 = 1e-12;

fn floored(log_density: f64) -> f64 {
    if log_density.is_nan() {
        DENSITY_FLOOR.ln()
    } else {
        log_density.max(DENSITY_FLOOR.ln())
    }
}

/// A conditional treatment density `pi(t | x)`.
pub trait PropensityModel: Send + Sync {
    /// Log density, never below `ln(DENSITY_FLOOR)`.
    fn log_density(&self, x: &[f64], t: f64) -> f64;

    fn density(&self, x: &[f64], t: f64) -> f64 {
        self.log_density(x, t).exp().max(DENSITY_FLOOR)
    }

    /// Standard deviation of the treatment distribution, used to pick the
    /// local kernel bandwidth.
    fn scale(&self) -> f64;
}

/// Exact densities of the synthetic benchmarks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleDensity {
    scenario: Scenario,
}

impl OracleDensity {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario }
    }
}

impl PropensityModel for OracleDensity {
    fn log_density(&self, x: &[f64], t: f64) -> f64 {
        floored(self.scenario.treatment_log_pdf(x, t))
    }

    fn scale(&self) -> f64 {
        self.scenario.treatment_scale()
    }
}

/// Exact `pi(t | x)` for a benchmark scenario (no floor applied).
pub fn oracle_propensity(setup: u8, scenario: u8, x: &[f64], t: f64) -> Result<f64> {
    let s = Scenario::new(setup, scenario)?;
    if x.len() != s.covariate_dim() {
        return Err(Error::invalid(format!("setup {setup} has {} covariates, got {}", s.covariate_dim(), x.len())));
    }
    Ok(s.treatment_log_pdf(x, t).exp())
}

/// A density that is the same everywhere; reduces propensity weights to
/// plain indicator (or kernel) weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantDensity {
    pub value: f64,
    pub scale: f64,
}

impl PropensityModel for ConstantDensity {
    fn log_density(&self, _: &[f64], _: f64) -> f64 {
        floored(self.value.ln())
    }

    fn scale(&self) -> f64 {
        self.scale
    }
}

impl<P: PropensityModel + ?Sized> PropensityModel for &P {
    fn log_density(&self, x: &[f64], t: f64) -> f64 {
        (**self).log_density(x, t)
    }

    fn scale(&self) -> f64 {
        (**self).scale()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropensityConfig {
    pub learner: GbrtParams,
    pub bandwidth: BandwidthRule,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self { learner: GbrtParams::default(), bandwidth: BandwidthRule::Silverman }
    }
}

/// Conformal estimate of the treatment density given covariates.
///
/// For an unweighted split CPS the predictive sample at `x` is the residual
/// sample shifted by the learner's prediction, and the bandwidth rule is
/// shift invariant, so every per-row KDE is the residual KDE translated by
/// `t_hat(x)`. The estimator keeps that one KDE and caches `t_hat(x)` per
/// covariate row.
pub struct PropensityEstimator {
    learner: GbrtModel,
    cps: SplitCps,
    residual_kde: KernelDensity,
    bandwidth_rule: BandwidthRule,
    sigma: f64,
    cache: RwLock<HashMap<Vec<u64>, f64>>,
}

impl std::fmt::Debug for PropensityEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PropensityEstimator")
            .field("n_calibration", &self.cps.residuals().len())
            .field("bandwidth", &self.residual_kde.bandwidth())
            .field("sigma", &self.sigma)
            .finish()
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Fits the treatment learner on `train`, calibrates the CPS on `cal` and fits
/// the KDE over the predictive treatment distribution.
pub fn fit_propensity(
    train: &Dataset,
    cal: &Dataset,
    cfg: &PropensityConfig,
    seed: u64,
) -> Result<PropensityEstimator> {
    if train.is_empty() || cal.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train_t = train.treatments();
    if train_t.len() < 2 || sample_sd(&train_t) == 0.0 {
        return Err(Error::invalid("training treatments have zero variance"));
    }
    let params = GbrtParams { seed: derive_seed(seed, &[0x70]), ..cfg.learner.clone() };
    let learner = DefaultLearner::new(params).fit(&train.covariates(), &train_t)?;

    let residuals: Vec<f64> = cal.samples().iter().map(|s| s.t - learner.predict_row(&s.x)).collect();
    let residual_kde = KernelDensity::fit(&residuals, cfg.bandwidth)
        .map_err(|e| Error::invalid(format!("degenerate treatment residuals: {e}")))?;
    let sigma = sample_sd(&residuals);
    Ok(PropensityEstimator {
        learner,
        cps: SplitCps::from_residuals(residuals)?,
        residual_kde,
        bandwidth_rule: cfg.bandwidth,
        sigma,
        cache: RwLock::new(HashMap::new()),
    })
}

impl PropensityEstimator {
    /// Learner prediction of the treatment at `x`, cached per covariate row.
    pub fn predicted_treatment(&self, x: &[f64]) -> f64 {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(&t) = self.cache.read().unwrap().get(&key) {
            return t;
        }
        let t = self.learner.predict_row(x);
        self.cache.write().unwrap().insert(key, t);
        t
    }

    pub fn cps(&self) -> &SplitCps {
        &self.cps
    }

    pub fn learner(&self) -> &GbrtModel {
        &self.learner
    }

    /// The CPS predictive sample of the treatment at `x`.
    pub fn predictive_sample(&self, x: &[f64]) -> Vec<f64> {
        let center = self.predicted_treatment(x);
        self.cps.residuals().iter().map(|r| center + r).collect()
    }

    /// Fits a KDE directly on the predictive sample at `x`.
    pub fn predictive_kde(&self, x: &[f64]) -> Result<KernelDensity> {
        KernelDensity::fit(&self.predictive_sample(x), self.bandwidth_rule)
    }

    /// Density at every calibration sample's own treatment.
    pub fn calibration_densities(&self, cal: &Dataset) -> Vec<f64> {
        cal.samples().iter().map(|s| self.density(&s.x, s.t)).collect()
    }

    pub fn bandwidth(&self) -> f64 {
        self.residual_kde.bandwidth()
    }
}

impl PropensityModel for PropensityEstimator {
    fn log_density(&self, x: &[f64], t: f64) -> f64 {
        floored(self.residual_kde.log_density(t - self.predicted_treatment(x)))
    }

    fn scale(&self) -> f64 {
        self.sigma
    }
}

/// Treatment range `[t_L, t_U]` the target distribution is uniform on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentBounds {
    pub lower: f64,
    pub upper: f64,
}

impl TreatmentBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_finite() && upper.is_finite() && lower <= upper {
            Ok(Self { lower, upper })
        } else {
            Err(Error::invalid(format!("invalid treatment bounds [{lower}, {upper}]")))
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.lower <= t && t <= self.upper
    }
}

/// Gaussian kernel configuration for local weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidth: f64,
    pub sigma_pi: f64,
}

/// `h = 2 * (0.2 * sigma)^2`.
pub fn kernel_bandwidth(sigma_pi: f64) -> f64 {
    2.0 * (0.2 * sigma_pi).powi(2)
}

impl KernelConfig {
    pub fn from_sigma(sigma_pi: f64) -> Result<Self> {
        let bandwidth = kernel_bandwidth(sigma_pi);
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!("sigma {sigma_pi} gives an unusable bandwidth")));
        }
        Ok(Self { bandwidth, sigma_pi })
    }

    pub fn with_bandwidth(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!("invalid bandwidth {bandwidth}")));
        }
        Ok(Self { bandwidth, sigma_pi: f64::NAN })
    }
}

/// Global propensity weight `1[t_L, t_U](t) / pi`.
pub fn w_global(pi: f64, t: f64, bounds: TreatmentBounds) -> Result<f64> {
    if pi.is_nan() || pi <= 0.0 {
        return Err(Error::InvalidWeights(format!("propensity density must be positive, got {pi}")));
    }
    Ok(if bounds.contains(t) { 1.0 / pi } else { 0.0 })
}

/// Unnormalized Gaussian kernel `exp(-u^2 / 2)`, `u = (t_i - t0) / h`.
pub fn w_local(t_i: f64, t0: f64, cfg: &KernelConfig) -> f64 {
    log_w_local(t_i, t0, cfg.bandwidth).exp()
}

/// Local-propensity weight: indicator times kernel over the propensity at
/// `(x, t_i)`. At `t_i == t0` the kernel is 1 and this equals [`w_global`].
pub fn w_local_prop<P: PropensityModel + ?Sized>(
    x: &[f64],
    t_i: f64,
    t0: f64,
    model: &P,
    cfg: &KernelConfig,
    bounds: TreatmentBounds,
) -> Result<f64> {
    Ok(w_local(t_i, t0, cfg) * w_global(model.density(x, t_i), t_i, bounds)?)
}

pub fn log_w_global(log_pi: f64, t: f64, bounds: TreatmentBounds) -> f64 {
    if bounds.contains(t) {
        -log_pi
    } else {
        f64::NEG_INFINITY
    }
}

pub fn log_w_local(t_i: f64, t0: f64, bandwidth: f64) -> f64 {
    let u = (t_i - t0) / bandwidth;
    -0.5 * u * u
}

pub fn log_w_local_prop(log_pi: f64, t_i: f64, t0: f64, bandwidth: f64, bounds: TreatmentBounds) -> f64 {
    log_w_global(log_pi, t_i, bounds) + log_w_local(t_i, t0, bandwidth)
}

/// `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidWeights("weights must be finite and non-negative".into()));
    }
    let max = weights.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::InvalidWeights("all weights are zero".into()));
    }
    let (sum, sum_sq) = weights.iter().map(|w| w / max).fold((0.0, 0.0), |(s, q), w| (s + w, q + w * w));
    Ok((sum * sum / sum_sq).clamp(1.0, weights.len() as f64))
}

/// One row of the propensity diagnostics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityDiagnostic {
    pub sample_id: usize,
    pub t: f64,
    pub pi_oracle: f64,
    pub pi_hat: f64,
}

/// Oracle and estimated density at each sample's observed treatment.
pub fn propensity_diagnostics<O, E>(data: &Dataset, oracle: &O, estimate: &E) -> Vec<PropensityDiagnostic>
where
    O: PropensityModel + ?Sized,
    E: PropensityModel + ?Sized,
{
    data.samples()
        .iter()
        .enumerate()
        .map(|(sample_id, s)| PropensityDiagnostic {
            sample_id,
            t: s.t,
            pi_oracle: oracle.density(&s.x, s.t),
            pi_hat: estimate.density(&s.x, s.t),
        })
        .collect()
}

/// Writes diagnostics as CSV `sample_id,t,pi_oracle,pi_hat`.
pub fn write_diagnostics<W: Write>(writer: W, rows: &[PropensityDiagnostic]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
