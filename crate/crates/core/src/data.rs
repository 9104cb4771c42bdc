//! Samples, datasets and train/calibration/test splits.
//!
//! Datasets serialize as CSV with header `x0,...,x{d-1},t,y`; split labels go
//! to a sidecar JSON file `{"train": [...], "cal": [...], "test": [...]}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// One observation: covariates, treatment dose and outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub t: f64,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, t: f64, y: f64) -> Self {
        Self { x, t, y }
    }

    fn is_finite(&self) -> bool {
        self.t.is_finite() && self.y.is_finite() && self.x.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    Train,
    Calibration,
    Test,
}

/// Index partition of a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn indices(&self, part: Part) -> &[usize] {
        match part {
            Part::Train => &self.train,
            Part::Calibration => &self.cal,
            Part::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.cal.len(), self.test.len())
    }

    /// Checks that the three index sets partition `0..n` exactly.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.cal).chain(&self.test) {
            if i >= n {
                return Err(Error::invalid(format!("split index {i} out of range for {n} samples")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("split index {i} assigned twice")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("sample {i} missing from split")));
        }
        Ok(())
    }
}

/// An ordered collection of samples with fixed covariate dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    d: usize,
    split: Option<SplitIndices>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let d = samples.first().map(|s| s.x.len()).ok_or(Error::EmptyDataset)?;
        Self::with_dim(samples, d)
    }

    /// Like [`Dataset::new`] but accepts an empty sample list.
    pub fn with_dim(samples: Vec<Sample>, d: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != d {
                return Err(Error::invalid(format!("sample {i} has {} covariates, expected {d}", s.x.len())));
            }
            if !s.is_finite() {
                return Err(Error::invalid(format!("sample {i} has non-finite entries")));
            }
        }
        Ok(Self { samples, d, split: None })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self) -> Option<&SplitIndices> {
        self.split.as_ref()
    }

    pub fn with_split(mut self, split: SplitIndices) -> Result<Self> {
        split.validate(self.len())?;
        self.split = Some(split);
        Ok(self)
    }

    pub fn treatments(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn covariates(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }

    /// Materializes one part of the split as a standalone dataset.
    pub fn part(&self, part: Part) -> Result<Dataset> {
        let split = self.split.as_ref().ok_or(Error::MissingSplit)?;
        let samples = split.indices(part).iter().map(|&i| self.samples[i].clone()).collect();
        Dataset::with_dim(samples, self.d)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.d).map(|j| format!("x{j}")).collect();
        header.push("t".into());
        header.push("y".into());
        w.write_record(&header)?;
        for s in &self.samples {
            let row: Vec<String> = s.x.iter().chain([&s.t, &s.y]).map(|v| v.to_string()).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let cols = header.len();
        let expected: Vec<String> =
            (0..cols.saturating_sub(2)).map(|j| format!("x{j}")).chain(["t".to_string(), "y".to_string()]).collect();
        if cols < 2 || header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::invalid(format!(
                "unexpected dataset header {:?}, expected {:?}",
                header.iter().collect::<Vec<_>>(),
                expected
            )));
        }
        let d = cols - 2;
        let mut samples = Vec::new();
        for record in r.records() {
            let record = record?;
            let values = record
                .iter()
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::invalid(format!("bad number {v:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            samples.push(Sample::new(values[..d].to_vec(), values[d], values[d + 1]));
        }
        Dataset::with_dim(samples, d)
    }

    /// Writes the CSV and, when split labels exist, the sidecar JSON next to it.
    pub fn save(&self, csv_path: &Path, split_path: Option<&Path>) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(csv_path)?))?;
        if let (Some(path), Some(split)) = (split_path, &self.split) {
            serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), split)?;
        }
        Ok(())
    }

    pub fn load(csv_path: &Path, split_path: Option<&Path>) -> Result<Self> {
        let data = Dataset::read_csv(BufReader::new(File::open(csv_path)?))?;
        match split_path {
            Some(path) => {
                let split: SplitIndices = serde_json::from_reader(BufReader::new(File::open(path)?))?;
                data.with_split(split)
            }
            None => Ok(data),
        }
    }
}

/// Fractions for the train/calibration/test partition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub cal: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.5, cal: 0.25, test: 0.25 }
    }
}

impl SplitFractions {
    pub fn new(train: f64, cal: f64, test: f64) -> Self {
        Self { train, cal, test }
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.cal, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::invalid(format!("split fractions must be positive, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Part sizes for `n` samples. Calibration and test sizes are rounded and
    /// kept at one or more; training receives the remainder.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let round = |f: f64| ((n as f64 * f).round() as usize).max(1);
        let (cal, test) = (round(self.cal), round(self.test));
        if cal + test >= n {
            return Err(Error::invalid(format!("{n} samples are too few for split {self:?}")));
        }
        Ok((n - cal - test, cal, test))
    }
}

/// Randomly partitions `data` into train/calibration/test parts.
///
/// The shuffle draws from the `Split` stream of `seed`; each index list is
/// returned in ascending order.
pub fn split_dataset(data: Dataset, fractions: SplitFractions, seed: u64) -> Result<Dataset> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (n_train, n_cal, _) = fractions.sizes(data.len())?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split));

    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let split = SplitIndices {
        train: sorted(&order[..n_train]),
        cal: sorted(&order[n_train..n_train + n_cal]),
        test: sorted(&order[n_train + n_cal..]),
    };
    data.with_split(split)
}
