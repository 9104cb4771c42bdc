//! Seeded generators for the three synthetic dose-response benchmarks.
//!
//! Setup 1 has six mixed covariates, a shared confounded treatment function
//! and eight treatment-assignment scenarios. Setup 2 has one integer
//! covariate, a sinusoidal outcome and two assignment scenarios. Setup 3 has
//! three normal covariates, a treatment confounded by two of them and two
//! outcome scenarios (the second heteroscedastic).
//!
//! Every `Normal(a, b)` reads as mean `a` and standard deviation `b`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn default_noise_scale() -> f64 {
    1.0
}

/// Which benchmark to draw, how many samples and from which seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub setup: u8,
    pub scenario: u8,
    pub n: usize,
    pub seed: u64,
    /// Multiplier on the outcome noise; 0 yields noiseless outcomes.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
}

impl ScenarioSpec {
    pub fn new(setup: u8, scenario: u8, n: usize, seed: u64) -> Self {
        Self { setup, scenario, n, seed, noise_scale: 1.0 }
    }

    pub fn with_noise_scale(mut self, scale: f64) -> Self {
        self.noise_scale = scale;
        self
    }

    pub fn scenario(&self) -> Result<Scenario> {
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::invalid(format!("noise scale {} must be >= 0", self.noise_scale)));
        }
        Scenario::new(self.setup, self.scenario)
    }
}

/// `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn normal_log_pdf(v: f64, mean: f64, sd: f64) -> f64 {
    let z = (v - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Treatment-assignment noise added to the treatment location in Setup 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TreatmentNoise {
    Normal {
        sd: f64,
    },
    /// Student t with 2 degrees of freedom, unit scale.
    StudentT2,
    /// `scale * Beta(a, b)`.
    ScaledBeta {
        scale: f64,
        a: f64,
        b: f64,
    },
}

impl TreatmentNoise {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            TreatmentNoise::Normal { sd } => Normal::new(0.0, sd).unwrap().sample(rng),
            TreatmentNoise::StudentT2 => StudentT::new(2.0).unwrap().sample(rng),
            TreatmentNoise::ScaledBeta { scale, a, b } => scale * Beta::new(a, b).unwrap().sample(rng),
        }
    }

    fn log_pdf(&self, e: f64) -> f64 {
        match *self {
            TreatmentNoise::Normal { sd } => normal_log_pdf(e, 0.0, sd),
            // f(u) = (2 sqrt 2)^-1 (1 + u^2/2)^(-3/2)
            TreatmentNoise::StudentT2 => -(2.0 * 2f64.sqrt()).ln() - 1.5 * (0.5 * e * e).ln_1p(),
            TreatmentNoise::ScaledBeta { scale, a, b } => {
                let u = e / scale;
                if u <= 0.0 || u >= 1.0 {
                    return f64::NEG_INFINITY;
                }
                let ln_beta = ln_gamma_int(a) + ln_gamma_int(b) - ln_gamma_int(a + b);
                (a - 1.0) * u.ln() + (b - 1.0) * (-u).ln_1p() - ln_beta - scale.ln()
            }
        }
    }

    /// Standard deviation of the noise, or its scale when the variance is infinite.
    fn scale(&self) -> f64 {
        match *self {
            TreatmentNoise::Normal { sd } => sd,
            TreatmentNoise::StudentT2 => 1.0,
            TreatmentNoise::ScaledBeta { scale, a, b } => scale * (a * b / ((a + b).powi(2) * (a + b + 1.0))).sqrt(),
        }
    }
}

/// `ln Gamma(v)` for positive integer `v`.
fn ln_gamma_int(v: f64) -> f64 {
    debug_assert!(v >= 1.0 && v.fract() == 0.0);
    (2..v as u64).map(|k| (k as f64).ln()).sum()
}

/// A validated (setup, scenario) pair with its generating formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    setup: u8,
    scenario: u8,
}

impl Scenario {
    pub fn new(setup: u8, scenario: u8) -> Result<Self> {
        let valid = match setup {
            1 => (1..=8).contains(&scenario),
            2 | 3 => (1..=2).contains(&scenario),
            _ => false,
        };
        if valid {
            Ok(Self { setup, scenario })
        } else {
            Err(Error::UnknownScenario { setup, scenario })
        }
    }

    pub fn setup(&self) -> u8 {
        self.setup
    }

    pub fn scenario(&self) -> u8 {
        self.scenario
    }

    pub fn covariate_dim(&self) -> usize {
        match self.setup {
            1 => 6,
            2 => 1,
            _ => 3,
        }
    }

    pub fn sample_covariates<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.setup {
            1 => {
                let std = Normal::new(0.0, 1.0).unwrap();
                let mut x: Vec<f64> = (0..4).map(|_| std.sample(rng)).collect();
                x.push(rng.random_range(-2..=2) as f64);
                x.push(rng.random_range(-3.0..3.0));
                x
            }
            2 => vec![rng.random_range(1..=4) as f64],
            _ => {
                let n = Normal::new(0.0, 5.0).unwrap();
                (0..3).map(|_| n.sample(rng)).collect()
            }
        }
    }

    /// Linear confounding score shared by Setup 1 scenarios, plus the
    /// quadratic term of scenario 3.
    fn setup1_t_mu(&self, x: &[f64]) -> f64 {
        let base = -0.8 + x[0] + 0.1 * x[1] - 0.1 * x[2] + 0.2 * x[3] + 0.1 * x[4] + 0.1 * x[5];
        if self.scenario == 3 {
            base + 1.5 * x[2] * x[2]
        } else {
            base
        }
    }

    /// Deterministic treatment location the assignment noise is added to.
    /// `None` for Setup 2 scenario 1, which is a uniform mixture.
    pub fn treatment_location(&self, x: &[f64]) -> Option<f64> {
        match (self.setup, self.scenario) {
            (1, s) => {
                let mu = self.setup1_t_mu(x);
                Some(match s {
                    1 => 9.0 * mu + 17.0,
                    2 => 15.0 * mu + 22.0,
                    3 => 9.0 * mu + 15.0,
                    4 => 49.0 * mu.exp() / (1.0 + mu.exp()) - 6.0,
                    5 => 42.0 / (1.0 + mu.exp()) + 18.0,
                    6 => 7.0 * (mu.abs() + 0.001).ln() + 13.0,
                    _ => 7.0 * mu + 16.0,
                })
            }
            (2, 1) => None,
            (2, _) => Some(5.0 * x[0]),
            _ => Some(x[1] + 0.1 * x[0]),
        }
    }

    fn treatment_noise(&self) -> Option<TreatmentNoise> {
        match (self.setup, self.scenario) {
            (1, 2) => Some(TreatmentNoise::StudentT2),
            (1, 6) => Some(TreatmentNoise::Normal { sd: 4.0 }),
            (1, 7) => Some(TreatmentNoise::Normal { sd: 1.0 }),
            (1, 8) => Some(TreatmentNoise::ScaledBeta { scale: 20.0, a: 2.0, b: 8.0 }),
            (1, _) => Some(TreatmentNoise::Normal { sd: 5.0 }),
            (2, 1) => None,
            (2, _) => Some(TreatmentNoise::Normal { sd: 10.0 }),
            _ => Some(TreatmentNoise::Normal { sd: 4.0 }),
        }
    }

    pub fn sample_treatment<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        match (self.treatment_location(x), self.treatment_noise()) {
            (Some(loc), Some(noise)) => loc + noise.sample(rng),
            _ => {
                // p ~ Bernoulli(0.3) picks Uniform(0, 5X), otherwise Uniform(5X, 40).
                let split = 5.0 * x[0];
                if rng.random_bool(0.3) {
                    rng.random_range(0.0..split)
                } else {
                    rng.random_range(split..40.0)
                }
            }
        }
    }

    /// Exact conditional log density of the treatment given covariates.
    pub fn treatment_log_pdf(&self, x: &[f64], t: f64) -> f64 {
        match (self.treatment_location(x), self.treatment_noise()) {
            (Some(loc), Some(noise)) => noise.log_pdf(t - loc),
            _ => {
                let split = 5.0 * x[0];
                if (0.0..=split).contains(&t) {
                    (0.3 / split).ln()
                } else if t > split && t <= 40.0 {
                    (0.7 / (40.0 - split)).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Spread of the treatment around its location: the noise standard
    /// deviation (unit scale for the Student t). For the Setup 2 mixture, the
    /// conditional standard deviation pooled over the four covariate values.
    pub fn treatment_scale(&self) -> f64 {
        match self.treatment_noise() {
            Some(noise) => noise.scale(),
            None => {
                let pooled_var = (1..=4)
                    .map(|x| {
                        let a = 5.0 * x as f64;
                        let mean = 0.3 * a / 2.0 + 0.7 * (a + 40.0) / 2.0;
                        let second = 0.3 * a * a / 3.0 + 0.7 * (a * a + a * 40.0 + 1600.0) / 3.0;
                        second - mean * mean
                    })
                    .sum::<f64>()
                    / 4.0;
                pooled_var.sqrt()
            }
        }
    }

    /// Noise-free outcome `E[Y(t) | X = x]`.
    pub fn outcome_mean(&self, x: &[f64], t: f64) -> f64 {
        match self.setup {
            1 => {
                let (x1, x2, x3, x4, x5, x6) = (x[0], x[1], x[2], x[3], x[4], x[5]);
                -1.0 - (2.0 * x1 + 2.0 * x2 + 3.0 * x3.powi(3) - 20.0 * x4 - 2.0 * x5 + 20.0 * x6)
                    - 0.1 * t * (1.0 - x1 + x4 + x5 + x3 * x3)
                    + 0.13f64.powi(2) * t.abs().powi(3) * x4.sin()
            }
            2 => (0.05 * PI * (t - x[0])).sin(),
            _ => {
                let (x1, x2, x3) = (x[0], x[1], x[2]);
                sign(x3) * (2.0 * (t - x2)).powi(2) + 33.0 * t * sign(x1)
            }
        }
    }

    pub fn sample_outcome_noise<R: Rng + ?Sized>(&self, x: &[f64], scale: f64, rng: &mut R) -> f64 {
        let draw = |sd: f64, rng: &mut R| Normal::new(0.0, sd).unwrap().sample(rng);
        let noise = match (self.setup, self.scenario) {
            (1, _) => draw(5.0, rng),
            (2, _) => draw(0.1, rng),
            (3, 1) => draw(2.0, rng),
            _ => {
                // Both normals are always drawn so the stream layout does not
                // depend on the covariates.
                let hetero = draw(30.0, rng);
                (sign(x[2]) + 1.0) / 2.0 * hetero + draw(2.0, rng)
            }
        };
        scale * noise
    }
}

/// Draws `spec.n` samples from the `Data` stream of `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<Dataset> {
    let scenario = spec.scenario()?;
    if spec.n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = stream_rng(spec.seed, Stream::Data);
    let samples = (0..spec.n)
        .map(|_| {
            let x = scenario.sample_covariates(&mut rng);
            let t = scenario.sample_treatment(&x, &mut rng);
            let y = scenario.outcome_mean(&x, t) + scenario.sample_outcome_noise(&x, spec.noise_scale, &mut rng);
            Sample::new(x, t, y)
        })
        .collect();
    Dataset::with_dim(samples, scenario.covariate_dim())
}

/// One draw of the potential outcome `Y(t)` for covariates `x`, ignoring the
/// observational treatment mechanism. Deterministic in `noise_seed`.
pub fn sample_counterfactual(spec: &ScenarioSpec, x: &[f64], t: f64, noise_seed: u64) -> Result<f64> {
    let scenario = spec.scenario()?;
    if x.len() != scenario.covariate_dim() || !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("counterfactual query needs finite inputs of the scenario's dimension"));
    }
    let mut rng = stream_rng(noise_seed, Stream::Noise);
    Ok(scenario.outcome_mean(x, t) + scenario.sample_outcome_noise(x, spec.noise_scale, &mut rng))
}

/// Linear-interpolation empirical quantile of sorted data.
pub(crate) fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `k` equally spaced treatments between the 2% and 98% quantiles of the
/// training treatments.
pub fn treatment_grid(train: &Dataset, k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::invalid("treatment grid needs at least two points"));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut t = train.treatments();
    t.sort_by(f64::total_cmp);
    let (lo, hi) = (empirical_quantile(&t, 0.02), empirical_quantile(&t, 0.98));
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return Err(Error::invalid(format!("degenerate treatment range [{lo}, {hi}]")));
    }
    let step = (hi - lo) / (k - 1) as f64;
    Ok((0..k).map(|i| if i == k - 1 { hi } else { lo + step * i as f64 }).collect())
}
