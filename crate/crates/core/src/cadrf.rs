//! Conditional average dose-response model fitted as an S-learner: a single
//! regressor over the concatenated features `[x, t]`.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learner::{Predictor, RegressionLearner};

/// Anything that maps covariates and a treatment to a point prediction.
pub trait DoseResponseModel: Send + Sync {
    fn predict(&self, x: &[f64], t: f64) -> f64;
}

impl<F> DoseResponseModel for F
where
    F: Fn(&[f64], f64) -> f64 + Send + Sync,
{
    fn predict(&self, x: &[f64], t: f64) -> f64 {
        self(x, t)
    }
}

#[derive(Clone, Debug)]
pub struct CadrfModel<P> {
    predictor: P,
    dim: usize,
}

pub(crate) fn s_learner_row(x: &[f64], t: f64) -> Vec<f64> {
    let mut row = Vec::with_capacity(x.len() + 1);
    row.extend_from_slice(x);
    row.push(t);
    row
}

impl<P: Predictor> CadrfModel<P> {
    pub fn predictor(&self) -> &P {
        &self.predictor
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl<P: Predictor> DoseResponseModel for CadrfModel<P> {
    fn predict(&self, x: &[f64], t: f64) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.predictor.predict_row(&s_learner_row(x, t))
    }
}

/// Fits the S-learner on the training samples of `train` (all of it; callers
/// pass an already materialized training part).
pub fn fit_cadrf<L: RegressionLearner>(learner: &L, train: &Dataset) -> Result<CadrfModel<L::Model>> {
    if train.is_empty() {
        return Err(Error::Learner("training split is empty".into()));
    }
    let rows: Vec<Vec<f64>> = train.samples().iter().map(|s| s_learner_row(&s.x, s.t)).collect();
    let predictor = learner.fit(&rows, &train.outcomes())?;
    Ok(CadrfModel { predictor, dim: train.dim() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::learner::DefaultLearner;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn dataset(n: usize, seed: u64, f: impl Fn(&[f64], f64) -> f64) -> Dataset {
        let mut rng = stream_rng(seed, Stream::Data);
        let samples = (0..n)
            .map(|_| {
                let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let t = rng.random_range(0.0..10.0);
                let y = f(&x, t);
                Sample::new(x, t, y)
            })
            .collect();
        Dataset::new(samples).unwrap()
    }

    #[test]
    fn constant_outcome_is_recovered() {
        let model = fit_cadrf(&DefaultLearner::default(), &dataset(200, 1, |_, _| -4.0)).unwrap();
        for t in [-5.0, 0.0, 3.3, 50.0] {
            assert!((model.predict(&[0.2, -0.7], t) + 4.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn linear_dose_response_is_learned() {
        // y = 2t: compare against the closed-form line on a held-out grid.
        let train = dataset(2000, 2, |_, t| 2.0 * t);
        let model = fit_cadrf(&DefaultLearner::default(), &train).unwrap();
        let outcomes = train.outcomes();
        let mean = outcomes.iter().sum::<f64>() / outcomes.len() as f64;
        let sd = (outcomes.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / outcomes.len() as f64).sqrt();

        let mut rng = stream_rng(99, Stream::Data);
        let mae = (0..200)
            .map(|i| {
                let t = 0.25 + 9.5 * i as f64 / 199.0;
                let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                (model.predict(&x, t) - 2.0 * t).abs()
            })
            .sum::<f64>()
            / 200.0;
        assert!(mae <= 0.1 * sd, "mae {mae} vs sd {sd}");
    }

    #[test]
    fn refit_with_same_seed_is_identical() {
        let train = dataset(300, 3, |x, t| x[0] * t + x[1]);
        let a = fit_cadrf(&DefaultLearner::default(), &train).unwrap();
        let b = fit_cadrf(&DefaultLearner::default(), &train).unwrap();
        for s in train.samples() {
            assert_eq!(a.predict(&s.x, s.t + 0.5).to_bits(), b.predict(&s.x, s.t + 0.5).to_bits());
        }
    }

    #[test]
    fn empty_training_split_is_an_error() {
        let empty = Dataset::with_dim(vec![], 2).unwrap();
        assert!(fit_cadrf(&DefaultLearner::default(), &empty).is_err());
    }
}
