//! Gradient-boosted regression trees with squared loss.
//!
//! Features are pre-binned into at most `max_bins` quantile bins per column
//! and every tree is grown greedily on per-node histograms of the current
//! residuals. With `subsample == 1.0` the fit is fully deterministic and the
//! training MSE is non-increasing per round: each tree is the least-squares
//! projection of the residuals onto its leaves, so a shrunken step of it can
//! only reduce the squared error.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{Predictor, RegressionLearner};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbrtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub max_bins: usize,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbrtParams {
    fn default() -> Self {
        Self {
            n_rounds: 500,
            learning_rate: 0.1,
            max_depth: 4,
            min_samples_leaf: 5,
            max_bins: 255,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbrtParams {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Learner(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        if !(2..=u16::MAX as usize).contains(&self.max_bins) {
            return bad("max_bins must be in 2..=65535");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        Ok(())
    }
}

/// The built-in learner used for the dose-response model and the propensity
/// learner.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DefaultLearner {
    pub params: GbrtParams,
}

impl DefaultLearner {
    pub fn new(params: GbrtParams) -> Self {
        Self { params }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GbrtModel {
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
    train_loss: Vec<f64>,
    n_features: usize,
}

impl GbrtModel {
    /// Training MSE after the initial constant fit (index 0) and after each
    /// boosting round.
    pub fn train_loss(&self) -> &[f64] {
        &self.train_loss
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }
}

impl Predictor for GbrtModel {
    fn predict_row(&self, row: &[f64]) -> f64 {
        let boost: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        self.base + self.learning_rate * boost
    }
}

/// Column-wise quantile binning.
struct Binned {
    /// Upper cut points per feature; bin `b` holds values in `(cuts[b-1], cuts[b]]`.
    cuts: Vec<Vec<f64>>,
    /// `bins[f][i]` is the bin of row `i` in feature `f`.
    bins: Vec<Vec<u16>>,
}

impl Binned {
    fn new(features: &[Vec<f64>], max_bins: usize) -> Self {
        let n_features = features[0].len();
        let mut cuts = Vec::with_capacity(n_features);
        let mut bins = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let column: Vec<f64> = features.iter().map(|r| r[f]).collect();
            let c = quantile_cuts(&column, max_bins);
            bins.push(column.iter().map(|&v| bin_of(&c, v)).collect());
            cuts.push(c);
        }
        Self { cuts, bins }
    }
}

fn bin_of(cuts: &[f64], v: f64) -> u16 {
    cuts.partition_point(|&c| c < v) as u16
}

fn quantile_cuts(column: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut uniques: Vec<(f64, usize)> = Vec::new();
    for v in sorted {
        match uniques.last_mut() {
            Some((u, c)) if *u == v => *c += 1,
            _ => uniques.push((v, 1)),
        }
    }
    let mid = |i: usize| 0.5 * (uniques[i].0 + uniques[i + 1].0);
    if uniques.len() <= max_bins {
        return (0..uniques.len() - 1).map(mid).collect();
    }
    let per_bin = column.len() as f64 / max_bins as f64;
    let mut cuts = Vec::with_capacity(max_bins - 1);
    let mut acc = 0usize;
    for (i, &(_, count)) in uniques[..uniques.len() - 1].iter().enumerate() {
        acc += count;
        if acc as f64 >= per_bin * (cuts.len() + 1) as f64 {
            cuts.push(mid(i));
            if cuts.len() == max_bins - 1 {
                break;
            }
        }
    }
    cuts
}

struct TreeBuilder<'a> {
    binned: &'a Binned,
    residuals: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    bin: u16,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let sum: f64 = rows.iter().map(|&i| self.residuals[i]).sum();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(sum / rows.len() as f64));
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&rows, sum) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| self.binned.bins[best.feature][i] <= best.bin);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: self.binned.cuts[best.feature][best.bin as usize],
            left,
            right,
        };
        id
    }

    fn best_split(&self, rows: &[usize], sum: f64) -> Option<BestSplit> {
        let n = rows.len();
        let parent = sum * sum / n as f64;
        let mut best: Option<BestSplit> = None;
        for (f, cuts) in self.binned.cuts.iter().enumerate() {
            if cuts.is_empty() {
                continue;
            }
            let n_bins = cuts.len() + 1;
            let mut hist_sum = vec![0.0; n_bins];
            let mut hist_n = vec![0usize; n_bins];
            let column = &self.binned.bins[f];
            for &i in rows {
                let b = column[i] as usize;
                hist_sum[b] += self.residuals[i];
                hist_n[b] += 1;
            }
            let (mut left_sum, mut left_n) = (0.0, 0usize);
            for b in 0..n_bins - 1 {
                left_sum += hist_sum[b];
                left_n += hist_n[b];
                let right_n = n - left_n;
                if left_n < self.min_leaf {
                    continue;
                }
                if right_n < self.min_leaf {
                    break;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64 - parent;
                if gain > best.as_ref().map_or(1e-12, |b| b.gain) {
                    best = Some(BestSplit { gain, feature: f, bin: b as u16 });
                }
            }
        }
        best
    }
}

fn validate_training_data(features: &[Vec<f64>], targets: &[f64]) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::Learner("no training rows".into()));
    }
    if features.len() != targets.len() {
        return Err(Error::Learner(format!("{} feature rows but {} targets", features.len(), targets.len())));
    }
    let width = features[0].len();
    if width == 0 {
        return Err(Error::Learner("feature rows are empty".into()));
    }
    for (i, row) in features.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Learner(format!("row {i} has {} features, expected {width}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Learner(format!("row {i} has non-finite features")));
        }
    }
    if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
        return Err(Error::Learner(format!("target {i} is not finite")));
    }
    Ok(width)
}

fn mse(targets: &[f64], predictions: &[f64]) -> f64 {
    targets.iter().zip(predictions).map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / targets.len() as f64
}

impl RegressionLearner for DefaultLearner {
    type Model = GbrtModel;

    fn fit(&self, features: &[Vec<f64>], targets: &[f64]) -> Result<GbrtModel> {
        let p = &self.params;
        p.validate()?;
        let n_features = validate_training_data(features, targets)?;
        let n = targets.len();
        let base = targets.iter().sum::<f64>() / n as f64;
        let binned = Binned::new(features, p.max_bins);

        let mut rng = stream_rng(p.seed, Stream::Learner);
        let n_sub = ((n as f64 * p.subsample).round() as usize).clamp(1, n);

        let mut predictions = vec![base; n];
        let mut residuals = vec![0.0; n];
        let mut train_loss = Vec::with_capacity(p.n_rounds + 1);
        train_loss.push(mse(targets, &predictions));
        let mut trees = Vec::with_capacity(p.n_rounds);

        for _ in 0..p.n_rounds {
            for ((r, y), pred) in residuals.iter_mut().zip(targets).zip(&predictions) {
                *r = y - pred;
            }
            let rows: Vec<usize> = if n_sub == n {
                (0..n).collect()
            } else {
                let mut rows = sample(&mut rng, n, n_sub).into_vec();
                rows.sort_unstable();
                rows
            };
            let mut builder = TreeBuilder {
                binned: &binned,
                residuals: &residuals,
                max_depth: p.max_depth,
                min_leaf: p.min_samples_leaf,
                nodes: Vec::new(),
            };
            builder.grow(rows, 0);
            let tree = Tree { nodes: builder.nodes };
            for (pred, row) in predictions.iter_mut().zip(features) {
                *pred += p.learning_rate * tree.predict(row);
            }
            train_loss.push(mse(targets, &predictions));
            trees.push(tree);
        }

        Ok(GbrtModel { base, learning_rate: p.learning_rate, trees, train_loss, n_features })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noisy_sine(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = stream_rng(seed, Stream::Data);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(0.0..1.0)]).collect();
        let y = x.iter().map(|r| r[0].sin() + 0.1 * rng.random::<f64>()).collect();
        (x, y)
    }

    #[test]
    fn constant_targets_give_constant_predictions() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let model = DefaultLearner::default().fit(&x, &vec![3.25; 50]).unwrap();
        for probe in [-100.0, 0.0, 17.5, 1e6] {
            assert!((model.predict_row(&[probe]) - 3.25).abs() <= 1e-6);
        }
    }

    #[test]
    fn training_loss_is_monotone() {
        let (x, y) = noisy_sine(300, 1);
        let model = DefaultLearner::default().fit(&x, &y).unwrap();
        let loss = model.train_loss();
        assert_eq!(loss.len(), 501);
        assert!(loss.windows(2).all(|w| w[1] <= w[0] + 1e-12), "loss increased");
        assert!(loss[500] < 0.1 * loss[0]);
    }

    #[test]
    fn fit_is_deterministic_with_subsampling() {
        let (x, y) = noisy_sine(200, 2);
        let params = GbrtParams { subsample: 0.7, seed: 9, n_rounds: 50, ..Default::default() };
        let a = DefaultLearner::new(params.clone()).fit(&x, &y).unwrap();
        let b = DefaultLearner::new(params).fit(&x, &y).unwrap();
        assert_eq!(a.predict(&x), b.predict(&x));
    }

    #[test]
    fn fits_a_step_function_exactly_enough() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 10.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| if r[0] < 10.0 { -1.0 } else { 2.0 }).collect();
        let model = DefaultLearner::default().fit(&x, &y).unwrap();
        assert!((model.predict_row(&[3.0]) + 1.0).abs() < 1e-6);
        assert!((model.predict_row(&[15.0]) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let learner = DefaultLearner::default();
        assert!(learner.fit(&[], &[]).is_err());
        assert!(learner.fit(&[vec![1.0]], &[1.0, 2.0]).is_err());
        assert!(learner.fit(&[vec![1.0], vec![1.0, 2.0]], &[1.0, 2.0]).is_err());
        assert!(learner.fit(&[vec![1.0]], &[f64::NAN]).is_err());
        assert!(learner.fit(&[vec![f64::INFINITY]], &[1.0]).is_err());
        let bad = DefaultLearner::new(GbrtParams { learning_rate: 0.0, ..Default::default() });
        assert!(bad.fit(&[vec![1.0]], &[1.0]).is_err());
    }

    #[test]
    fn quantile_binning_caps_bin_count() {
        let column: Vec<f64> = (0..10_000).map(|i| (i as f64).sqrt()).collect();
        let cuts = quantile_cuts(&column, 16);
        assert!(cuts.len() <= 15 && cuts.len() >= 10);
        assert!(cuts.windows(2).all(|w| w[0] < w[1]));
        let few = quantile_cuts(&[1.0, 1.0, 2.0, 3.0], 16);
        assert_eq!(few, vec![1.5, 2.5]);
        assert_eq!(bin_of(&few, 1.5), 0);
        assert_eq!(bin_of(&few, 1.6), 1);
    }
}
