//! One-dimensional Gaussian kernel density estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// How the kernel bandwidth is chosen from the sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    #[default]
    /// `1.06 * sd * n^(-1/5)`, floored at `1e-3 * (max - min)`.
    Silverman,
    Fixed(f64),
}

/// Weighted mixture of Gaussians with a shared bandwidth.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelDensity {
    centers: Vec<f64>,
    /// Natural logs of the normalized center weights, aligned with `centers`.
    log_weights: Vec<f64>,
    bandwidth: f64,
}

/// Silverman's rule of thumb for (possibly weighted) samples. The effective
/// sample size replaces `n` when weights are unequal.
pub fn silverman_bandwidth(samples: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    let (min, max) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if samples.len() < 2 || max <= min {
        return Err(Error::Kde("need at least two distinct samples".into()));
    }
    let (sd, n) = match weights {
        None => {
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var.sqrt(), n)
        }
        Some(w) => {
            let total: f64 = w.iter().sum();
            let mean = samples.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / total;
            let var = samples.iter().zip(w).map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / total;
            let ess = total * total / w.iter().map(|w| w * w).sum::<f64>();
            // Bessel-style correction with the effective sample size.
            let var = if ess > 1.0 { var * ess / (ess - 1.0) } else { var };
            (var.sqrt(), ess)
        }
    };
    Ok((1.06 * sd * n.powf(-0.2)).max(1e-3 * (max - min)))
}

impl KernelDensity {
    /// Unweighted KDE with the given bandwidth rule.
    pub fn fit(samples: &[f64], rule: BandwidthRule) -> Result<Self> {
        Self::build(samples, None, rule)
    }

    /// KDE whose kernels carry the given non-negative weights.
    pub fn fit_weighted(samples: &[f64], weights: &[f64], rule: BandwidthRule) -> Result<Self> {
        if weights.len() != samples.len() {
            return Err(Error::Kde("samples and weights differ in length".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::Kde("weights must be non-negative with positive total".into()));
        }
        Self::build(samples, Some(weights), rule)
    }

    fn build(samples: &[f64], weights: Option<&[f64]>, rule: BandwidthRule) -> Result<Self> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Kde("samples must be finite".into()));
        }
        let bandwidth = match rule {
            BandwidthRule::Silverman => silverman_bandwidth(samples, weights)?,
            BandwidthRule::Fixed(h) if h > 0.0 && h.is_finite() => {
                if samples.is_empty() {
                    return Err(Error::Kde("no samples".into()));
                }
                h
            }
            BandwidthRule::Fixed(h) => return Err(Error::Kde(format!("invalid bandwidth {h}"))),
        };
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]));
        let total: f64 = weights.map_or(samples.len() as f64, |w| w.iter().sum());
        let log_weights = order.iter().map(|&i| (weights.map_or(1.0, |w| w[i]) / total).ln()).collect();
        Ok(Self { centers: order.iter().map(|&i| samples[i]).collect(), log_weights, bandwidth })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Log density, evaluated with log-sum-exp so far tails stay finite.
    pub fn log_density(&self, t: f64) -> f64 {
        let h = self.bandwidth;
        let terms = self.centers.iter().zip(&self.log_weights).map(|(c, lw)| lw - 0.5 * ((t - c) / h).powi(2));
        let shift = terms.clone().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.map(|v| (v - shift).exp()).sum();
        shift + sum.ln() - h.ln() - LN_SQRT_2PI
    }

    pub fn density(&self, t: f64) -> f64 {
        self.log_density(t).exp()
    }
}

/// Fits an unweighted Gaussian KDE.
pub fn kde_fit(samples: &[f64], rule: BandwidthRule) -> Result<KernelDensity> {
    KernelDensity::fit(samples, rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: usize) -> f64 {
        let dx = (hi - lo) / steps as f64;
        (0..=steps)
            .map(|i| {
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                w * f(lo + i as f64 * dx)
            })
            .sum::<f64>()
            * dx
    }

    #[test]
    fn two_center_mixture_matches_closed_form() {
        let kde = KernelDensity::fit(&[-1.0, 1.0], BandwidthRule::Fixed(1.0)).unwrap();
        let expected = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((kde.density(0.0) - expected).abs() < 1e-15);
        assert!((kde.density(0.7) - kde.density(-0.7)).abs() < 1e-15);
    }

    #[test]
    fn density_integrates_to_one() {
        let samples = [-2.0, -0.5, 0.1, 0.3, 4.0, 4.2];
        for rule in [BandwidthRule::Silverman, BandwidthRule::Fixed(0.3)] {
            let kde = KernelDensity::fit(&samples, rule).unwrap();
            let h = kde.bandwidth();
            let total = trapezoid(|t| kde.density(t), -2.0 - 8.0 * h, 4.2 + 8.0 * h, 20_000);
            assert!((total - 1.0).abs() < 1e-3, "{rule:?}: {total}");
        }
    }

    #[test]
    fn silverman_rule_and_floor() {
        let samples = [1.0, 2.0, 3.0, 4.0, 5.0];
        let sd = (2.5f64).sqrt();
        let h = silverman_bandwidth(&samples, None).unwrap();
        assert!((h - 1.06 * sd * 5f64.powf(-0.2)).abs() < 1e-12);
        // Nearly all mass on one point: sd is tiny, the range floor kicks in.
        let mut clustered = vec![0.0; 999];
        clustered.push(1.0);
        let h = silverman_bandwidth(&clustered, None).unwrap();
        assert!(h >= 1e-3);
    }

    #[test]
    fn identical_samples_are_rejected() {
        assert!(kde_fit(&[2.0, 2.0, 2.0], BandwidthRule::Silverman).is_err());
        assert!(kde_fit(&[2.0], BandwidthRule::Silverman).is_err());
        assert!(kde_fit(&[], BandwidthRule::Fixed(1.0)).is_err());
        assert!(kde_fit(&[1.0, 2.0], BandwidthRule::Fixed(0.0)).is_err());
    }

    #[test]
    fn far_tails_have_finite_log_density() {
        let kde = KernelDensity::fit(&[0.0, 1.0], BandwidthRule::Fixed(0.1)).unwrap();
        let ld = kde.log_density(100.0);
        assert!(ld.is_finite() && ld < -1e5);
        assert_eq!(kde.density(100.0), 0.0);
    }

    #[test]
    fn weighted_kde_matches_duplicated_centers() {
        let a = KernelDensity::fit_weighted(&[0.0, 2.0], &[1.0, 3.0], BandwidthRule::Fixed(0.5)).unwrap();
        let b = KernelDensity::fit(&[0.0, 2.0, 2.0, 2.0], BandwidthRule::Fixed(0.5)).unwrap();
        for t in [-1.0, 0.0, 0.9, 2.0, 3.5] {
            assert!((a.density(t) - b.density(t)).abs() < 1e-14);
        }
    }
}
