//! Distribution-free uncertainty quantification for conditional dose-response
//! models under continuous treatments.
//!
//! The crate combines split conformal prediction, weighted conformal
//! prediction with propensity-based likelihood-ratio weights, split conformal
//! predictive systems and kernel-localized weighting. Evaluating a fitted
//! dose-response model at every treatment in a range is a covariate shift away
//! from the observational treatment distribution; the weighted variants
//! correct for it.
//!
//! Module map:
//!
//! - [`data`], [`learner`], [`cadrf`]: samples, splits, the regression learner
//!   contract and the S-learner dose-response model.
//! - [`conformal`]: nonconformity scores, weighted point-mass quantiles and
//!   interval construction.
//! - [`cps`], [`kde`]: conformal predictive systems and Gaussian kernel
//!   density estimation.
//! - [`propensity`]: propensity density estimation, oracle densities and the
//!   weight functions.
//! - [`synthgen`]: the synthetic benchmark generators.
//! - [`bench`]: the coverage experiment harness and its reports.

pub mod bench;
pub mod cadrf;
pub mod conformal;
pub mod cps;
pub mod data;
pub mod error;
pub mod kde;
pub mod learner;
pub mod propensity;
pub mod rng;
pub mod synthgen;

pub use cadrf::{fit_cadrf, CadrfModel, DoseResponseModel};
pub use conformal::{PredictionInterval, WeightedScoreDistribution};
pub use data::{Dataset, Part, Sample, SplitIndices};
pub use error::{Error, Result};
pub use learner::{DefaultLearner, GbrtParams, Predictor, RegressionLearner};
