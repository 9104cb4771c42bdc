//! Pluggable regression learners.

mod gbrt;

pub use gbrt::{DefaultLearner, GbrtModel, GbrtParams};

use crate::error::Result;

/// A fitted regression function.
pub trait Predictor: Send + Sync {
    fn predict_row(&self, row: &[f64]) -> f64;

    fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }
}

/// A regression algorithm: fits a [`Predictor`] from a feature matrix given
/// as rows and a target vector.
pub trait RegressionLearner {
    type Model: Predictor;

    fn fit(&self, features: &[Vec<f64>], targets: &[f64]) -> Result<Self::Model>;
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict_row(&self, row: &[f64]) -> f64 {
        (**self).predict_row(row)
    }
}
