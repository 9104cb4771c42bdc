//! Split conformal prediction and weighted split conformal prediction.
//!
//! Calibration nonconformity scores (absolute residuals) are turned into a
//! discrete distribution of point masses plus one atom at `+inf` standing in
//! for the unseen test score. Standard split conformal gives every atom mass
//! `1/(n+1)`; the weighted variant gives calibration point `i` mass
//! `w_i / (sum_j w_j + w_new)` and the `+inf` atom mass
//! `w_new / (sum_j w_j + w_new)`. The interval radius is the `1 - alpha`
//! quantile of that distribution and is infinite whenever the finite atoms
//! cannot reach the level.
//!
//! Cumulative masses are compared against `level - QUANTILE_TOL`. The slack
//! makes the uniform-weight path pick exactly the order statistic selected by
//! the closed-form index `ceil((1 - alpha)(m + 1))`, independent of how the
//! floating-point cumulative sum rounds.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::{SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};

use crate::cadrf::DoseResponseModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::propensity::effective_sample_size;

/// Absolute slack applied to cumulative-mass comparisons.
pub const QUANTILE_TOL: f64 = 1e-12;

pub fn nonconformity_abs(y: f64, y_hat: f64) -> f64 {
    (y - y_hat).abs()
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("level {level} is outside (0, 1)")))
    }
}

/// A closed interval over the extended reals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
}

impl PredictionInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower > upper || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(Error::invalid(format!("invalid interval [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper })
    }

    /// `[center - radius, center + radius]`; an infinite radius yields the whole line.
    pub fn symmetric(center: f64, radius: f64) -> Self {
        if radius == f64::INFINITY {
            return Self::unbounded();
        }
        Self { lower: center - radius, upper: center + radius }
    }

    pub fn unbounded() -> Self {
        Self { lower: f64::NEG_INFINITY, upper: f64::INFINITY }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn contains_interval(&self, other: &PredictionInterval) -> bool {
        self.lower <= other.lower && other.upper <= self.upper
    }
}

fn bound_to_json<S: Serializer>(v: f64) -> std::result::Result<serde_json::Value, S::Error> {
    Ok(if v == f64::INFINITY {
        serde_json::Value::from("inf")
    } else if v == f64::NEG_INFINITY {
        serde_json::Value::from("-inf")
    } else {
        serde_json::Value::from(v)
    })
}

impl Serialize for PredictionInterval {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("PredictionInterval", 2)?;
        s.serialize_field("lower", &bound_to_json::<S>(self.lower)?)?;
        s.serialize_field("upper", &bound_to_json::<S>(self.upper)?)?;
        s.end()
    }
}

struct Bound(f64);

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct BoundVisitor;
        impl Visitor<'_> for BoundVisitor {
            type Value = Bound;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or one of \"inf\", \"-inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Bound, E> {
                Ok(Bound(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Bound, E> {
                Ok(Bound(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Bound, E> {
                Ok(Bound(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Bound, E> {
                match v {
                    "inf" | "+inf" => Ok(Bound(f64::INFINITY)),
                    "-inf" | "\u{2212}inf" => Ok(Bound(f64::NEG_INFINITY)),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }
        deserializer.deserialize_any(BoundVisitor)
    }
}

impl<'de> Deserialize<'de> for PredictionInterval {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            lower: Bound,
            upper: Bound,
        }
        let raw = Raw::deserialize(deserializer)?;
        PredictionInterval::new(raw.lower.0, raw.upper.0).map_err(de::Error::custom)
    }
}

/// Normalized point masses on calibration scores plus a mass at `+inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedScoreDistribution {
    scores: Vec<f64>,
    masses: Vec<f64>,
    infinity_mass: f64,
}

impl WeightedScoreDistribution {
    /// Builds a distribution from explicit masses. Atoms are re-sorted by
    /// score; masses must be non-negative and sum (with `infinity_mass`) to 1.
    pub fn new(scores: Vec<f64>, masses: Vec<f64>, infinity_mass: f64) -> Result<Self> {
        if scores.len() != masses.len() {
            return Err(Error::invalid("scores and masses differ in length"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        if masses.iter().chain([&infinity_mass]).any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidWeights("masses must be finite and non-negative".into()));
        }
        let total: f64 = masses.iter().sum::<f64>() + infinity_mass;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights(format!("masses sum to {total}, expected 1")));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        Ok(Self {
            scores: order.iter().map(|&i| scores[i]).collect(),
            masses: order.iter().map(|&i| masses[i]).collect(),
            infinity_mass,
        })
    }

    /// Uniform masses `1/(n+1)` as in unweighted split conformal prediction.
    pub fn uniform(scores: Vec<f64>) -> Result<Self> {
        let zeros = vec![0.0; scores.len()];
        Self::from_log_weights(scores, &zeros, 0.0)
    }

    /// Normalizes calibration weights and the test-point weight into masses.
    pub fn from_weights(scores: Vec<f64>, weights: &[f64], test_weight: f64) -> Result<Self> {
        let log_weights = log_weights(weights)?;
        Self::from_log_weights(scores, &log_weights, log_test_weight(test_weight)?)
    }

    /// Same as [`from_weights`](Self::from_weights) with weights given as
    /// natural logarithms (`-inf` for a zero weight). Normalization happens in
    /// log space so extreme likelihood ratios neither overflow nor underflow.
    pub fn from_log_weights(scores: Vec<f64>, log_weights: &[f64], test_log_weight: f64) -> Result<Self> {
        check_log_weights(log_weights, test_log_weight)?;
        if scores.len() != log_weights.len() {
            return Err(Error::invalid("scores and weights differ in length"));
        }
        let lse = log_sum_exp(log_weights.iter().copied().chain([test_log_weight]));
        let mass = |lw: f64| (lw - lse).exp().clamp(0.0, 1.0);
        let masses: Vec<f64> = log_weights.iter().map(|&lw| mass(lw)).collect();
        let infinity_mass = mass(test_log_weight);
        // Re-normalize so clamping and rounding never break the sum invariant.
        let total: f64 = masses.iter().sum::<f64>() + infinity_mass;
        let masses = masses.into_iter().map(|m| m / total).collect();
        Self::new(scores, masses, infinity_mass / total)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn infinity_mass(&self) -> f64 {
        self.infinity_mass
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Smallest score whose cumulative mass reaches `level`, or `+inf`.
    pub fn quantile(&self, level: f64) -> Result<f64> {
        check_level(level)?;
        let target = level - QUANTILE_TOL;
        let mut cum = 0.0;
        for (i, (&s, &m)) in self.scores.iter().zip(&self.masses).enumerate() {
            cum += m;
            let tie_continues = self.scores.get(i + 1) == Some(&s);
            if !tie_continues && cum >= target {
                return Ok(s);
            }
        }
        Ok(f64::INFINITY)
    }

    /// Mirror image of [`quantile`](Self::quantile) for lower bounds: the
    /// largest score `s` with mass at or above `s` of at least `1 - level`,
    /// where the test atom counts as lying at `-inf`. Returns `-inf` when no
    /// score qualifies.
    pub fn lower_quantile(&self, level: f64) -> Result<f64> {
        check_level(level)?;
        let target = (1.0 - level) - QUANTILE_TOL;
        let mut cum = 0.0;
        for i in (0..self.scores.len()).rev() {
            cum += self.masses[i];
            let tie_continues = i > 0 && self.scores[i - 1] == self.scores[i];
            if !tie_continues && cum >= target {
                return Ok(self.scores[i]);
            }
        }
        Ok(f64::NEG_INFINITY)
    }

    pub fn mass_below(&self, r: f64) -> f64 {
        let end = self.scores.partition_point(|&s| s < r);
        self.masses[..end].iter().sum()
    }

    pub fn mass_at(&self, r: f64) -> f64 {
        let start = self.scores.partition_point(|&s| s < r);
        let end = self.scores.partition_point(|&s| s <= r);
        self.masses[start..end].iter().sum()
    }

    /// Effective sample size of the calibration masses (test atom excluded).
    pub fn effective_sample_size(&self) -> Result<f64> {
        effective_sample_size(&self.masses)
    }
}

/// `Quantile(level; F)`: smallest score whose cumulative mass reaches `level`,
/// `+inf` when the finite atoms fall short.
pub fn weighted_quantile(dist: &WeightedScoreDistribution, level: f64) -> Result<f64> {
    dist.quantile(level)
}

pub(crate) fn log_weights(weights: &[f64]) -> Result<Vec<f64>> {
    weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            if w.is_finite() && w >= 0.0 {
                Ok(w.ln())
            } else {
                Err(Error::InvalidWeights(format!("weight {i} is {w}")))
            }
        })
        .collect()
}

pub(crate) fn log_test_weight(w: f64) -> Result<f64> {
    if w > 0.0 && !w.is_nan() {
        Ok(w.ln())
    } else {
        Err(Error::InvalidWeights(format!("test-point weight must be positive, got {w}")))
    }
}

fn check_log_weights(log_weights: &[f64], test_log_weight: f64) -> Result<()> {
    if let Some(i) = log_weights.iter().position(|lw| lw.is_nan() || *lw == f64::INFINITY) {
        return Err(Error::InvalidWeights(format!("calibration weight {i} is not finite")));
    }
    if !log_weights.iter().any(|lw| lw.is_finite()) {
        return Err(Error::InvalidWeights("all calibration weights are zero".into()));
    }
    if test_log_weight.is_nan() || test_log_weight == f64::NEG_INFINITY {
        return Err(Error::InvalidWeights("test-point weight must be positive".into()));
    }
    Ok(())
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Calibration scores with (unnormalized) weights, ready to answer quantile
/// queries for any test-point weight in `O(log n)`.
///
/// Weights are kept relative to the largest calibration weight; tied scores
/// are merged into one atom. This is the precalibrated form used for every
/// weighted interval, so on-the-fly and cached queries share one code path.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedScores {
    scores: Vec<f64>,
    weights: Vec<f64>,
    cum_weights: Vec<f64>,
    log_shift: f64,
    ess: f64,
}

impl CalibratedScores {
    pub fn from_log_weights(scores: &[f64], log_weights: &[f64]) -> Result<Self> {
        if scores.len() != log_weights.len() {
            return Err(Error::invalid("scores and weights differ in length"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        check_log_weights(log_weights, 0.0)?;
        let log_shift = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rel: Vec<f64> = log_weights.iter().map(|lw| (lw - log_shift).exp()).collect();
        let ess = effective_sample_size(&rel)?;

        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let mut merged: Vec<f64> = Vec::with_capacity(scores.len());
        let mut weights: Vec<f64> = Vec::with_capacity(scores.len());
        let mut cum_weights: Vec<f64> = Vec::with_capacity(scores.len());
        let mut cum = 0.0;
        for i in order {
            cum += rel[i];
            if merged.last() == Some(&scores[i]) {
                *weights.last_mut().unwrap() += rel[i];
                *cum_weights.last_mut().unwrap() = cum;
            } else {
                merged.push(scores[i]);
                weights.push(rel[i]);
                cum_weights.push(cum);
            }
        }
        Ok(Self { scores: merged, weights, cum_weights, log_shift, ess })
    }

    pub fn from_weights(scores: &[f64], weights: &[f64]) -> Result<Self> {
        Self::from_log_weights(scores, &log_weights(weights)?)
    }

    /// Quantile at `level` of the distribution completed with a test atom of
    /// log-weight `test_log_weight` at `+inf`.
    pub fn quantile(&self, test_log_weight: f64, level: f64) -> Result<f64> {
        check_level(level)?;
        if test_log_weight.is_nan() || test_log_weight == f64::NEG_INFINITY {
            return Err(Error::InvalidWeights("test-point weight must be positive".into()));
        }
        let test_weight = (test_log_weight - self.log_shift).exp();
        let total = self.cum_weights.last().copied().unwrap_or(0.0) + test_weight;
        if !total.is_finite() {
            return Ok(f64::INFINITY);
        }
        let target = level - QUANTILE_TOL;
        let k = self.cum_weights.partition_point(|&c| (c / total).min(1.0) < target);
        Ok(self.scores.get(k).copied().unwrap_or(f64::INFINITY))
    }

    /// Interval `y_hat ± quantile(1 - alpha)`.
    pub fn interval(&self, y_hat: f64, test_log_weight: f64, alpha: f64) -> Result<PredictionInterval> {
        let radius = self.quantile(test_log_weight, 1.0 - alpha)?;
        Ok(PredictionInterval::symmetric(y_hat, radius))
    }

    /// Effective sample size of the calibration weights.
    pub fn effective_sample_size(&self) -> f64 {
        self.ess
    }

    /// Materializes the normalized distribution for one test-point weight.
    pub fn distribution(&self, test_log_weight: f64) -> Result<WeightedScoreDistribution> {
        let log_weights: Vec<f64> = self.weights.iter().map(|w| w.ln() + self.log_shift).collect();
        WeightedScoreDistribution::from_log_weights(self.scores.clone(), &log_weights, test_log_weight)
    }
}

/// Absolute residuals of the model on the calibration set, sorted ascending.
pub fn calibrate_standard<M: DoseResponseModel + ?Sized>(model: &M, cal: &Dataset) -> Vec<f64> {
    let mut scores: Vec<f64> = cal.samples().iter().map(|s| nonconformity_abs(s.y, model.predict(&s.x, s.t))).collect();
    scores.sort_by(f64::total_cmp);
    scores
}

/// Smallest `k` with `k / (m + 1) >= level - QUANTILE_TOL`.
fn conformal_rank(m: usize, level: f64) -> usize {
    let denom = (m + 1) as f64;
    let target = level - QUANTILE_TOL;
    let mut k = (target * denom).ceil().max(1.0) as usize;
    while k > 1 && (k - 1) as f64 / denom >= target {
        k -= 1;
    }
    while (k as f64) / denom < target {
        k += 1;
    }
    k
}

/// Radius of the split conformal interval: the `ceil((1 - alpha)(m + 1))`-th
/// smallest score, or `+inf` when that rank exceeds `m`.
pub fn standard_radius(sorted_scores: &[f64], alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    if sorted_scores.is_empty() {
        return Err(Error::invalid("no calibration scores"));
    }
    let k = conformal_rank(sorted_scores.len(), 1.0 - alpha);
    Ok(sorted_scores.get(k - 1).copied().unwrap_or(f64::INFINITY))
}

pub fn predict_interval_standard<M: DoseResponseModel + ?Sized>(
    model: &M,
    sorted_scores: &[f64],
    x: &[f64],
    t: f64,
    alpha: f64,
) -> Result<PredictionInterval> {
    let radius = standard_radius(sorted_scores, alpha)?;
    Ok(PredictionInterval::symmetric(model.predict(x, t), radius))
}

/// Weighted split conformal interval at `(x_new, t_new)` with likelihood-ratio
/// weights given by `weight_fn` on the calibration points and the test point.
pub fn predict_interval_weighted<M, W>(
    model: &M,
    cal: &Dataset,
    weight_fn: W,
    x_new: &[f64],
    t_new: f64,
    alpha: f64,
) -> Result<PredictionInterval>
where
    M: DoseResponseModel + ?Sized,
    W: Fn(&[f64], f64) -> f64,
{
    let weights: Vec<f64> = cal.samples().iter().map(|s| weight_fn(&s.x, s.t)).collect();
    let test_log_weight = log_test_weight(weight_fn(x_new, t_new))?;
    let log_w = log_weights(&weights)?;
    predict_interval_weighted_log(model, cal, |i, _, _| log_w[i], test_log_weight, x_new, t_new, alpha)
}

/// Log-space variant of [`predict_interval_weighted`]: `log_weight_fn` receives
/// the calibration index, covariates and treatment.
pub fn predict_interval_weighted_log<M, W>(
    model: &M,
    cal: &Dataset,
    log_weight_fn: W,
    test_log_weight: f64,
    x_new: &[f64],
    t_new: f64,
    alpha: f64,
) -> Result<PredictionInterval>
where
    M: DoseResponseModel + ?Sized,
    W: Fn(usize, &[f64], f64) -> f64,
{
    check_level(alpha)?;
    if cal.is_empty() {
        return Err(Error::invalid("calibration split is empty"));
    }
    let (scores, log_w): (Vec<f64>, Vec<f64>) = cal
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| (nonconformity_abs(s.y, model.predict(&s.x, s.t)), log_weight_fn(i, &s.x, s.t)))
        .unzip();
    CalibratedScores::from_log_weights(&scores, &log_w)?.interval(model.predict(x_new, t_new), test_log_weight, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn cal_with_residuals(residuals: &[f64]) -> Dataset {
        let samples = residuals.iter().enumerate().map(|(i, &r)| Sample::new(vec![i as f64], i as f64, r)).collect();
        Dataset::new(samples).unwrap()
    }

    fn zero_model(_: &[f64], _: f64) -> f64 {
        0.0
    }

    #[test]
    fn absolute_nonconformity() {
        assert_eq!(nonconformity_abs(3.0, 3.0), 0.0);
        assert_eq!(nonconformity_abs(1.0, 4.0), 3.0);
        assert_eq!(nonconformity_abs(-2.5, 1.5), 4.0);
    }

    #[test]
    fn quantile_walks_cumulative_mass() {
        let d = WeightedScoreDistribution::new(vec![1.0, 2.0, 3.0], vec![0.25; 3], 0.25).unwrap();
        assert_eq!(weighted_quantile(&d, 0.75).unwrap(), 3.0);
        assert_eq!(weighted_quantile(&d, 0.5).unwrap(), 2.0);
        assert_eq!(weighted_quantile(&d, 1e-9).unwrap(), 1.0);

        let short = WeightedScoreDistribution::new(vec![5.0], vec![0.5], 0.5).unwrap();
        assert_eq!(weighted_quantile(&short, 0.9).unwrap(), f64::INFINITY);
        assert!(weighted_quantile(&short, 0.0).is_err());
        assert!(weighted_quantile(&short, 1.0).is_err());
    }

    #[test]
    fn ties_accumulate_before_the_quantile_is_taken() {
        let d = WeightedScoreDistribution::new(vec![2.0, 1.0, 2.0], vec![0.2, 0.2, 0.2], 0.4).unwrap();
        assert_eq!(d.quantile(0.3).unwrap(), 2.0);
        assert_eq!(d.quantile(0.6).unwrap(), 2.0);
        assert_eq!(d.quantile(0.61).unwrap(), f64::INFINITY);
        assert!((d.mass_at(2.0) - 0.4).abs() < 1e-15);
        assert!((d.mass_below(2.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn distribution_validation() {
        assert!(WeightedScoreDistribution::new(vec![1.0], vec![0.4], 0.4).is_err());
        assert!(WeightedScoreDistribution::new(vec![1.0], vec![-0.1], 1.1).is_err());
        assert!(WeightedScoreDistribution::new(vec![f64::INFINITY], vec![0.5], 0.5).is_err());
        assert!(WeightedScoreDistribution::from_weights(vec![1.0, 2.0], &[0.0, 0.0], 1.0).is_err());
        assert!(WeightedScoreDistribution::from_weights(vec![1.0], &[-1.0], 1.0).is_err());
        assert!(WeightedScoreDistribution::from_weights(vec![1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn masses_normalize_at_any_weight_scale() {
        for scale in [1e-300, 1e-20, 1.0, 1e20, 1e300] {
            let w: Vec<f64> = [1.0, 2.0, 3.0, 4.0].iter().map(|v| v * scale).collect();
            let d = WeightedScoreDistribution::from_weights(vec![4.0, 3.0, 2.0, 1.0], &w, 5.0 * scale).unwrap();
            let total: f64 = d.masses().iter().sum::<f64>() + d.infinity_mass();
            assert!((total - 1.0).abs() < 1e-9);
            assert!((d.infinity_mass() - 5.0 / 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn calibration_scores_are_sorted_residuals() {
        let perfect = |x: &[f64], _: f64| x[0];
        let cal = Dataset::new(vec![Sample::new(vec![1.0], 0.0, 1.0), Sample::new(vec![5.0], 0.0, 5.0)]).unwrap();
        assert_eq!(calibrate_standard(&perfect, &cal), vec![0.0, 0.0]);
        assert_eq!(calibrate_standard(&zero_model, &cal_with_residuals(&[2.0])), vec![2.0]);
        assert_eq!(calibrate_standard(&zero_model, &cal_with_residuals(&[1.0, -3.0, 2.0])), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn standard_intervals() {
        let iv = predict_interval_standard(&zero_model, &[1.0, 2.0, 3.0, 4.0], &[0.0], 0.0, 0.2).unwrap();
        assert_eq!(iv, PredictionInterval { lower: -4.0, upper: 4.0 });

        let one = |_: &[f64], _: f64| 1.0;
        let iv = predict_interval_standard(&one, &[7.0], &[0.0], 0.0, 0.9).unwrap();
        assert_eq!(iv, PredictionInterval { lower: -6.0, upper: 8.0 });

        let iv = predict_interval_standard(&zero_model, &[1.0], &[0.0], 0.0, 0.05).unwrap();
        assert_eq!(iv, PredictionInterval::unbounded());
        assert!(!iv.is_bounded());
        assert!(predict_interval_standard(&zero_model, &[], &[0.0], 0.0, 0.1).is_err());
    }

    #[test]
    fn conformal_rank_matches_ceiling_formula() {
        for m in 1..60 {
            for a in 1..100 {
                let level = 1.0 - a as f64 / 100.0;
                let exact = (level * (m + 1) as f64 - 1e-9).ceil() as usize;
                assert_eq!(conformal_rank(m, level), exact.max(1), "m={m} level={level}");
            }
        }
    }

    #[test]
    fn constant_weights_reduce_to_standard() {
        let residuals = [0.3, -1.2, 2.5, 0.9, -0.4, 1.7, -2.2];
        let cal = cal_with_residuals(&residuals);
        let scores = calibrate_standard(&zero_model, &cal);
        for alpha in [0.05, 0.1, 0.2, 0.25, 0.5, 0.9] {
            let standard = predict_interval_standard(&zero_model, &scores, &[0.0], 1.0, alpha).unwrap();
            let weighted = predict_interval_weighted(&zero_model, &cal, |_, _| 3.7, &[0.0], 1.0, alpha).unwrap();
            assert_eq!(standard, weighted, "alpha={alpha}");
        }
    }

    #[test]
    fn dominant_calibration_atom_sets_the_radius() {
        // One residual 9 with weight 1e6, 99 residuals of 1 with weight 1e-6:
        // masses are 1e6/(1e6 + 99e-6 + w_new) ~ 1, so any level up to ~0.999999 lands on 9.
        let mut residuals = vec![9.0];
        residuals.extend(std::iter::repeat_n(1.0, 99));
        let cal = cal_with_residuals(&residuals);
        let weight = |x: &[f64], _: f64| if x[0] == 0.0 { 1e6 } else { 1e-6 };
        let iv = predict_interval_weighted(&zero_model, &cal, weight, &[1.0], 0.0, 0.1).unwrap();
        let expected_mass = 1e6 / (1e6 + 99.0 * 1e-6 + 1e-6);
        assert!(expected_mass > 0.9);
        assert_eq!(iv, PredictionInterval { lower: -9.0, upper: 9.0 });
    }

    #[test]
    fn heavy_test_weight_gives_infinite_interval() {
        let cal = cal_with_residuals(&[1.0, 2.0, 3.0]);
        let weight = |x: &[f64], _: f64| if x[0] > 10.0 { 1e9 } else { 1.0 };
        let iv = predict_interval_weighted(&zero_model, &cal, weight, &[11.0], 0.0, 0.1).unwrap();
        assert_eq!(iv, PredictionInterval::unbounded());
    }

    #[test]
    fn weighted_errors() {
        let cal = cal_with_residuals(&[1.0, 2.0]);
        assert!(predict_interval_weighted(&zero_model, &cal, |_, _| 0.0, &[0.0], 0.0, 0.1).is_err());
        assert!(predict_interval_weighted(&zero_model, &cal, |_, _| -1.0, &[0.0], 0.0, 0.1).is_err());
        let zero_at_test = |x: &[f64], _: f64| if x[0] == 7.0 { 0.0 } else { 1.0 };
        assert!(predict_interval_weighted(&zero_model, &cal, zero_at_test, &[7.0], 0.0, 0.1).is_err());
    }

    #[test]
    fn overflowing_log_weights_stay_finite() {
        let scores = [1.0, 2.0, 3.0];
        let cal = CalibratedScores::from_log_weights(&scores, &[800.0, 801.0, 802.0]).unwrap();
        assert_eq!(cal.quantile(-1e4, 0.5).unwrap(), 3.0);
        assert_eq!(cal.quantile(1e4, 0.5).unwrap(), f64::INFINITY);
        let d = cal.distribution(801.0).unwrap();
        assert!((d.masses().iter().sum::<f64>() + d.infinity_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibrated_distribution_agrees_with_direct_construction() {
        let scores = [0.5, 0.1, 0.5, 2.0, 1.0];
        let w = [1.0, 2.0, 0.5, 0.0, 3.0];
        let cal = CalibratedScores::from_weights(&scores, &w).unwrap();
        let direct = WeightedScoreDistribution::from_weights(scores.to_vec(), &w, 1.5).unwrap();
        for level in [0.05, 0.2, 0.35, 0.5, 0.7, 0.8, 0.9] {
            assert_eq!(cal.quantile(1.5f64.ln(), level).unwrap(), direct.quantile(level).unwrap());
        }
    }

    #[test]
    fn interval_json_uses_string_sentinels() {
        let iv = PredictionInterval::unbounded();
        let text = serde_json::to_string(&iv).unwrap();
        assert_eq!(text, r#"{"lower":"-inf","upper":"inf"}"#);
        assert_eq!(serde_json::from_str::<PredictionInterval>(&text).unwrap(), iv);
        let finite: PredictionInterval = serde_json::from_str(r#"{"lower":-1.5,"upper":2}"#).unwrap();
        assert_eq!(finite, PredictionInterval { lower: -1.5, upper: 2.0 });
        assert!(serde_json::from_str::<PredictionInterval>(r#"{"lower":3,"upper":2}"#).is_err());
    }

    #[test]
    fn interval_constructor_validates() {
        assert!(PredictionInterval::new(1.0, 0.0).is_err());
        assert!(PredictionInterval::new(f64::NAN, 0.0).is_err());
        assert!(PredictionInterval::new(f64::NEG_INFINITY, 0.0).is_ok());
        assert!(PredictionInterval::new(f64::INFINITY, f64::INFINITY).is_err());
    }
}
