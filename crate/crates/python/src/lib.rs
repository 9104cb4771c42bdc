//! Python bindings: datasets and generators, the S-learner, standard and
//! weighted conformal intervals, predictive distributions, propensity
//! densities and the benchmark harness.

use dosecore::bench::{run_experiment as run_bench, ExperimentConfig};
use dosecore::cadrf::{fit_cadrf as fit_model, CadrfModel, DoseResponseModel};
use dosecore::conformal::{calibrate_standard, predict_interval_standard, predict_interval_weighted_log};
use dosecore::cps::{PredictiveDistribution as CorePredictive, SplitCps as CoreCps};
use dosecore::data::{split_dataset, Dataset as CoreDataset, Part, Sample, SplitFractions};
use dosecore::learner::{DefaultLearner, GbrtModel, GbrtParams};
use dosecore::propensity::{
    self, KernelConfig, PropensityConfig, PropensityEstimator, PropensityModel, TreatmentBounds,
};
use dosecore::synthgen::{self, ScenarioSpec};
use dosecore::{PredictionInterval, WeightedScoreDistribution};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: dosecore::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn interval_tuple(i: PredictionInterval) -> (f64, f64) {
    (i.lower, i.upper)
}

#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: CoreDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(x: Vec<Vec<f64>>, t: Vec<f64>, y: Vec<f64>) -> PyResult<Self> {
        if x.len() != t.len() || t.len() != y.len() {
            return Err(PyValueError::new_err("x, t and y must have the same length"));
        }
        let samples = x.into_iter().zip(t).zip(y).map(|((x, t), y)| Sample::new(x, t, y)).collect();
        Ok(Self { inner: CoreDataset::new(samples).map_err(err)? })
    }

    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner: CoreDataset::read_csv(file).map_err(err)? })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| PyValueError::new_err(e.to_string()))?;
        self.inner.write_csv(file).map_err(err)
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.inner.covariates()
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        self.inner.treatments()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.outcomes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Shuffled (train, calibration, test) parts.
    #[pyo3(signature = (seed, train=0.5, cal=0.25, test=0.25))]
    fn split(&self, seed: u64, train: f64, cal: f64, test: f64) -> PyResult<(Self, Self, Self)> {
        let data = split_dataset(self.inner.clone(), SplitFractions::new(train, cal, test), seed).map_err(err)?;
        let part = |p| data.part(p).map(|inner| Self { inner }).map_err(err);
        Ok((part(Part::Train)?, part(Part::Calibration)?, part(Part::Test)?))
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

/// Draws `n` samples of a synthetic benchmark.
#[pyfunction]
#[pyo3(signature = (setup, scenario, n, seed, noise_scale=1.0))]
fn generate(setup: u8, scenario: u8, n: usize, seed: u64, noise_scale: f64) -> PyResult<PyDataset> {
    let spec = ScenarioSpec::new(setup, scenario, n, seed).with_noise_scale(noise_scale);
    Ok(PyDataset { inner: synthgen::generate(&spec).map_err(err)? })
}

#[pyfunction]
fn treatment_grid(train: &PyDataset, k: usize) -> PyResult<Vec<f64>> {
    synthgen::treatment_grid(&train.inner, k).map_err(err)
}

fn gbrt_params(n_rounds: usize, learning_rate: f64, max_depth: usize, seed: u64) -> GbrtParams {
    GbrtParams { n_rounds, learning_rate, max_depth, seed, ..Default::default() }
}

/// S-learner dose-response model `(x, t) -> y`.
#[pyclass(name = "CadrfModel", frozen)]
struct PyCadrf {
    inner: CadrfModel<GbrtModel>,
}

#[pymethods]
impl PyCadrf {
    fn predict(&self, x: Vec<f64>, t: f64) -> f64 {
        self.inner.predict(&x, t)
    }

    fn predict_many(&self, x: Vec<Vec<f64>>, t: Vec<f64>) -> Vec<f64> {
        x.iter().zip(t).map(|(x, t)| self.inner.predict(x, t)).collect()
    }

    /// Split conformal interval `(lower, upper)` at `(x, t)`.
    fn interval(&self, cal: &PyDataset, x: Vec<f64>, t: f64, alpha: f64) -> PyResult<(f64, f64)> {
        let scores = calibrate_standard(&self.inner, &cal.inner);
        predict_interval_standard(&self.inner, &scores, &x, t, alpha).map(interval_tuple).map_err(err)
    }

    /// Weighted conformal interval with one weight per calibration sample and
    /// the test-point weight.
    fn weighted_interval(
        &self,
        cal: &PyDataset,
        weights: Vec<f64>,
        test_weight: f64,
        x: Vec<f64>,
        t: f64,
        alpha: f64,
    ) -> PyResult<(f64, f64)> {
        if weights.len() != cal.inner.len() {
            return Err(PyValueError::new_err("one weight per calibration sample required"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !(test_weight > 0.0 && test_weight.is_finite()) {
            return Err(PyValueError::new_err("weights must be finite and non-negative, the test weight positive"));
        }
        let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        predict_interval_weighted_log(&self.inner, &cal.inner, |i, _, _| log_w[i], test_weight.ln(), &x, t, alpha)
            .map(interval_tuple)
            .map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (train, n_rounds=500, learning_rate=0.1, max_depth=4, seed=0))]
fn fit_cadrf(train: &PyDataset, n_rounds: usize, learning_rate: f64, max_depth: usize, seed: u64) -> PyResult<PyCadrf> {
    let learner = DefaultLearner::new(gbrt_params(n_rounds, learning_rate, max_depth, seed));
    Ok(PyCadrf { inner: fit_model(&learner, &train.inner).map_err(err)? })
}

#[pyclass(name = "PredictiveDistribution", frozen)]
struct PyPredictive {
    inner: CorePredictive,
}

#[pymethods]
impl PyPredictive {
    fn cdf(&self, y: f64) -> f64 {
        self.inner.cdf(y)
    }

    fn band(&self, alpha: f64) -> PyResult<(f64, f64)> {
        self.inner.band(alpha).map(interval_tuple).map_err(err)
    }

    fn median(&self) -> PyResult<f64> {
        self.inner.median().map_err(err)
    }

    fn upper_quantile(&self, level: f64) -> PyResult<f64> {
        self.inner.upper_quantile(level).map_err(err)
    }

    #[getter]
    fn support(&self) -> Vec<f64> {
        self.inner.support()
    }

    #[getter]
    fn masses(&self) -> Vec<f64> {
        self.inner.masses().to_vec()
    }

    #[getter]
    fn infinity_mass(&self) -> f64 {
        self.inner.infinity_mass()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }
}

/// Split conformal predictive system over a model's calibration residuals.
#[pyclass(name = "SplitCps", frozen)]
struct PySplitCps {
    inner: CoreCps,
}

#[pymethods]
impl PySplitCps {
    #[new]
    fn new(model: &PyCadrf, cal: &PyDataset) -> PyResult<Self> {
        Ok(Self { inner: CoreCps::calibrate(&model.inner, &cal.inner).map_err(err)? })
    }

    #[getter]
    fn residuals(&self) -> Vec<f64> {
        self.inner.residuals().to_vec()
    }

    #[pyo3(signature = (y_hat, phi=0.5, weights=None, test_weight=1.0))]
    fn predictive(&self, y_hat: f64, phi: f64, weights: Option<Vec<f64>>, test_weight: f64) -> PyResult<PyPredictive> {
        let inner = match weights {
            None => self.inner.predictive(y_hat, phi),
            Some(w) => self.inner.predictive_weighted(y_hat, &w, test_weight, phi),
        };
        Ok(PyPredictive { inner: inner.map_err(err)? })
    }
}

/// Conformal estimate of the treatment density given covariates.
#[pyclass(name = "PropensityEstimator", frozen)]
struct PyPropensity {
    inner: PropensityEstimator,
}

#[pymethods]
impl PyPropensity {
    fn density(&self, x: Vec<f64>, t: f64) -> f64 {
        self.inner.density(&x, t)
    }

    fn log_density(&self, x: Vec<f64>, t: f64) -> f64 {
        self.inner.log_density(&x, t)
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.scale()
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.inner.bandwidth()
    }
}

#[pyfunction]
#[pyo3(signature = (train, cal, seed=0, n_rounds=500))]
fn fit_propensity(train: &PyDataset, cal: &PyDataset, seed: u64, n_rounds: usize) -> PyResult<PyPropensity> {
    let cfg = PropensityConfig { learner: GbrtParams { n_rounds, ..Default::default() }, ..Default::default() };
    Ok(PyPropensity { inner: propensity::fit_propensity(&train.inner, &cal.inner, &cfg, seed).map_err(err)? })
}

#[pyfunction]
fn oracle_propensity(setup: u8, scenario: u8, x: Vec<f64>, t: f64) -> PyResult<f64> {
    propensity::oracle_propensity(setup, scenario, &x, t).map_err(err)
}

#[pyfunction]
fn w_global(pi: f64, t: f64, lower: f64, upper: f64) -> PyResult<f64> {
    propensity::w_global(pi, t, TreatmentBounds::new(lower, upper).map_err(err)?).map_err(err)
}

/// Gaussian kernel weight with bandwidth `2 * (0.2 * sigma)^2`.
#[pyfunction]
fn w_local(t_i: f64, t0: f64, sigma: f64) -> PyResult<f64> {
    Ok(propensity::w_local(t_i, t0, &KernelConfig::from_sigma(sigma).map_err(err)?))
}

#[pyfunction]
fn effective_sample_size(weights: Vec<f64>) -> PyResult<f64> {
    propensity::effective_sample_size(&weights).map_err(err)
}

/// Quantile of the point-mass distribution `sum masses_i delta_{scores_i}`
/// plus `infinity_mass` at `+inf`.
#[pyfunction]
fn weighted_quantile(scores: Vec<f64>, masses: Vec<f64>, infinity_mass: f64, level: f64) -> PyResult<f64> {
    let dist = WeightedScoreDistribution::new(scores, masses, infinity_mass).map_err(err)?;
    dosecore::conformal::weighted_quantile(&dist, level).map_err(err)
}

/// Runs a coverage experiment from a JSON config; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (config_json="{}"))]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report = py.detach(|| run_bench(&cfg)).map_err(err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn doseconf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyCadrf>()?;
    m.add_class::<PySplitCps>()?;
    m.add_class::<PyPredictive>()?;
    m.add_class::<PyPropensity>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(treatment_grid, m)?)?;
    m.add_function(wrap_pyfunction!(fit_cadrf, m)?)?;
    m.add_function(wrap_pyfunction!(fit_propensity, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_propensity, m)?)?;
    m.add_function(wrap_pyfunction!(w_global, m)?)?;
    m.add_function(wrap_pyfunction!(w_local, m)?)?;
    m.add_function(wrap_pyfunction!(effective_sample_size, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
