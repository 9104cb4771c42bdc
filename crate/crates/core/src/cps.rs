//! Split conformal predictive systems.
//!
//! With the signed conformity score `y - y_hat`, the calibration residuals
//! shifted by the point prediction form a discrete predictive distribution for
//! the outcome. Weighting the residuals with likelihood-ratio masses (and an
//! atom at `+inf` for the test point) gives the weighted variant.

use serde::{Deserialize, Serialize};

use crate::cadrf::DoseResponseModel;
use crate::conformal::{check_level, log_test_weight, log_weights, PredictionInterval, WeightedScoreDistribution};
use crate::data::Dataset;
use crate::error::{Error, Result};

pub fn conformity_signed(y: f64, y_hat: f64) -> f64 {
    y - y_hat
}

/// `Q(r, phi) = P{R < r} + phi * P{R = r}` under the weighted score
/// distribution. The `+inf` atom is never below a finite `r_new`. `phi` is
/// clamped into `[0, 1]`.
pub fn cps_q(dist: &WeightedScoreDistribution, r_new: f64, phi: f64) -> f64 {
    let phi = phi.clamp(0.0, 1.0);
    let q = dist.mass_below(r_new) + phi * dist.mass_at(r_new);
    let q = if r_new == f64::INFINITY { q + phi * dist.infinity_mass() } else { q };
    q.clamp(0.0, 1.0)
}

/// Discrete predictive distribution of the outcome at one test point.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDistribution {
    center: f64,
    residuals: WeightedScoreDistribution,
    phi: f64,
}

/// Plot-ready form: support points and the right-continuous CDF at each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictivePlotData {
    pub support: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn new(center: f64, residuals: WeightedScoreDistribution, phi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::invalid(format!("tie randomizer {phi} is outside [0, 1]")));
        }
        if !center.is_finite() {
            return Err(Error::invalid("point prediction is not finite"));
        }
        Ok(Self { center, residuals, phi })
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn residuals(&self) -> &WeightedScoreDistribution {
        &self.residuals
    }

    /// Candidate outcome values `y_hat + R_i`, ascending.
    pub fn support(&self) -> Vec<f64> {
        self.residuals.scores().iter().map(|r| self.center + r).collect()
    }

    pub fn masses(&self) -> &[f64] {
        self.residuals.masses()
    }

    pub fn infinity_mass(&self) -> f64 {
        self.residuals.infinity_mass()
    }

    /// Randomized predictive CDF at outcome `y`.
    pub fn cdf(&self, y: f64) -> f64 {
        cps_q(&self.residuals, conformity_signed(y, self.center), self.phi)
    }

    /// Smallest support value whose cumulative mass reaches `level`; `+inf`
    /// when the finite mass falls short.
    pub fn upper_quantile(&self, level: f64) -> Result<f64> {
        Ok(self.center + self.residuals.quantile(level)?)
    }

    /// Largest support value with at least `1 - level` of the mass at or
    /// above it, counting the test atom at `-inf`; `-inf` if none.
    pub fn lower_quantile(&self, level: f64) -> Result<f64> {
        Ok(self.center + self.residuals.lower_quantile(level)?)
    }

    /// Central `[alpha/2, 1 - alpha/2]` band.
    pub fn band(&self, alpha: f64) -> Result<PredictionInterval> {
        check_level(alpha)?;
        PredictionInterval::new(self.lower_quantile(alpha / 2.0)?, self.upper_quantile(1.0 - alpha / 2.0)?)
    }

    /// Midpoint of the lower and upper median.
    pub fn median(&self) -> Result<f64> {
        let band = PredictionInterval::new(self.lower_quantile(0.5)?, self.upper_quantile(0.5)?)?;
        Ok(0.5 * (band.lower + band.upper))
    }

    pub fn plot_data(&self) -> PredictivePlotData {
        let mut cum = 0.0;
        let cdf = self
            .residuals
            .masses()
            .iter()
            .map(|m| {
                cum += m;
                cum.min(1.0)
            })
            .collect();
        PredictivePlotData { support: self.support(), cdf }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.plot_data())?)
    }
}

/// Signed calibration residuals of a fitted model; the unweighted split CPS.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitCps {
    residuals: Vec<f64>,
}

impl SplitCps {
    pub fn calibrate<M: DoseResponseModel + ?Sized>(model: &M, cal: &Dataset) -> Result<Self> {
        if cal.is_empty() {
            return Err(Error::invalid("calibration split is empty"));
        }
        let residuals = cal.samples().iter().map(|s| conformity_signed(s.y, model.predict(&s.x, s.t))).collect();
        Ok(Self { residuals })
    }

    pub fn from_residuals(residuals: Vec<f64>) -> Result<Self> {
        if residuals.is_empty() || residuals.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("residuals must be finite and non-empty"));
        }
        Ok(Self { residuals })
    }

    /// Residuals in calibration order.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// Unweighted predictive distribution around `y_hat`.
    pub fn predictive(&self, y_hat: f64, phi: f64) -> Result<PredictiveDistribution> {
        PredictiveDistribution::new(y_hat, WeightedScoreDistribution::uniform(self.residuals.clone())?, phi)
    }

    /// Weighted predictive distribution around `y_hat`; one weight per residual.
    pub fn predictive_weighted(
        &self,
        y_hat: f64,
        weights: &[f64],
        test_weight: f64,
        phi: f64,
    ) -> Result<PredictiveDistribution> {
        if weights.len() != self.residuals.len() {
            return Err(Error::InvalidWeights("one weight per calibration residual required".into()));
        }
        let dist = WeightedScoreDistribution::from_log_weights(
            self.residuals.clone(),
            &log_weights(weights)?,
            log_test_weight(test_weight)?,
        )?;
        PredictiveDistribution::new(y_hat, dist, phi)
    }
}

/// Weighted split CPS at `(x_new, t_new)`.
pub fn cps_predictive_distribution<M, W>(
    model: &M,
    cal: &Dataset,
    weight_fn: W,
    x_new: &[f64],
    t_new: f64,
    phi: f64,
) -> Result<PredictiveDistribution>
where
    M: DoseResponseModel + ?Sized,
    W: Fn(&[f64], f64) -> f64,
{
    let cps = SplitCps::calibrate(model, cal)?;
    let weights: Vec<f64> = cal.samples().iter().map(|s| weight_fn(&s.x, s.t)).collect();
    cps.predictive_weighted(model.predict(x_new, t_new), &weights, weight_fn(x_new, t_new), phi)
}
