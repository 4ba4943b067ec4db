//! Scattered-data containers, CSV loading, unit-box normalization and
//! k-fold splitting.
//!
//! CSV files carry one sample per row: every column but the last is a
//! coordinate, the last column is the observation. Fitting works entirely in
//! normalized units where every coordinate and every observation of the
//! training set lies in `[0, 1]`. Points outside the training bounding box are
//! mapped with the same affine transform and may therefore leave the unit box.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FitError, Result};

/// Value a constant (zero-width) coordinate is mapped to.
pub const DEGENERATE_COORDINATE: f64 = 0.5;

/// Scattered samples `(x_i, y_i)`, `i = 0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n x d` sample locations, one row per sample.
    pub locations: DMatrix<f64>,
    /// `n` observations.
    pub observations: DVector<f64>,
    /// Present once the dataset has been passed through [`normalize`].
    pub norm: Option<NormParams>,
}

impl Dataset {
    pub fn new(locations: DMatrix<f64>, observations: DVector<f64>) -> Result<Self> {
        let n = locations.nrows();
        if locations.ncols() == 0 {
            return Err(FitError::NoCoordinates);
        }
        if observations.len() != n {
            return Err(FitError::DimensionMismatch {
                expected: n,
                found: observations.len(),
            });
        }
        if n < 2 {
            return Err(FitError::TooFewSamples(n));
        }
        if locations.iter().chain(observations.iter()).any(|v| !v.is_finite()) {
            return Err(FitError::InvalidParameter(
                "dataset contains NaN or infinite values".into(),
            ));
        }
        Ok(Self {
            locations,
            observations,
            norm: None,
        })
    }

    /// Builds a 1-d dataset from paired slices.
    pub fn from_1d(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_column_slice(x.len(), 1, x),
            DVector::from_column_slice(y),
        )
    }

    pub fn n(&self) -> usize {
        self.locations.nrows()
    }

    pub fn d(&self) -> usize {
        self.locations.ncols()
    }

    /// Rows `indices` of this dataset, keeping the normalization metadata.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.d();
        let locations = DMatrix::from_fn(indices.len(), d, |i, k| self.locations[(indices[i], k)]);
        let observations = DVector::from_fn(indices.len(), |i, _| self.observations[indices[i]]);
        Dataset {
            locations,
            observations,
            norm: self.norm.clone(),
        }
    }

    /// Normalization metadata, or the identity map when none is attached.
    pub fn norm_or_identity(&self) -> NormParams {
        self.norm
            .clone()
            .unwrap_or_else(|| NormParams::identity(self.d()))
    }
}

/// Inclusive value range of one variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        values.fold(
            Range {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |r, v| Range {
                min: r.min.min(v),
                max: r.max.max(v),
            },
        )
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Per-variable min-max parameters of the unit-box map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub y_min: f64,
    pub y_max: f64,
}

impl NormParams {
    pub fn identity(d: usize) -> Self {
        Self {
            x_min: vec![0.0; d],
            x_max: vec![1.0; d],
            y_min: 0.0,
            y_max: 1.0,
        }
    }

    pub fn d(&self) -> usize {
        self.x_min.len()
    }

    fn map_coordinate(&self, k: usize, v: f64) -> f64 {
        let width = self.x_max[k] - self.x_min[k];
        if width > 0.0 {
            (v - self.x_min[k]) / width
        } else {
            DEGENERATE_COORDINATE
        }
    }

    /// Applies the coordinate map to an `m x d` matrix of locations.
    pub fn normalize_locations(&self, locations: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if locations.ncols() != self.d() {
            return Err(FitError::DimensionMismatch {
                expected: self.d(),
                found: locations.ncols(),
            });
        }
        Ok(DMatrix::from_fn(locations.nrows(), locations.ncols(), |i, k| {
            self.map_coordinate(k, locations[(i, k)])
        }))
    }

    /// Maps observations into normalized units. A constant observation column
    /// maps to 0, so a constant target is represented by the empty model.
    pub fn normalize_observations(&self, values: &DVector<f64>) -> DVector<f64> {
        let width = self.y_max - self.y_min;
        values.map(|v| if width > 0.0 { (v - self.y_min) / width } else { 0.0 })
    }

    /// Inverse of the observation map.
    pub fn denormalize(&self, values: &DVector<f64>) -> DVector<f64> {
        let width = self.y_max - self.y_min;
        values.map(|v| v * width + self.y_min)
    }
}

/// Min-max normalization of every coordinate column and the observations.
pub fn normalize(ds: &Dataset) -> (Dataset, NormParams) {
    let d = ds.d();
    let mut x_min = Vec::with_capacity(d);
    let mut x_max = Vec::with_capacity(d);
    for k in 0..d {
        let r = Range::of(ds.locations.column(k).iter().copied());
        x_min.push(r.min);
        x_max.push(r.max);
    }
    let y = Range::of(ds.observations.iter().copied());
    let params = NormParams {
        x_min,
        x_max,
        y_min: y.min,
        y_max: y.max,
    };
    let locations = params
        .normalize_locations(&ds.locations)
        .expect("dimension taken from the dataset");
    let observations = params.normalize_observations(&ds.observations);
    (
        Dataset {
            locations,
            observations,
            norm: Some(params.clone()),
        },
        params,
    )
}

/// Inverse observation map; see [`NormParams::denormalize`].
pub fn denormalize(values: &DVector<f64>, params: &NormParams) -> DVector<f64> {
    params.denormalize(values)
}

/// Parses a rectangular table of finite numbers from CSV text. Row numbers
/// in errors are file lines.
pub fn parse_table<R: Read>(reader: R, has_header: bool) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);

    let mut values: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    let mut n = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| FitError::Csv {
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(n as u64 + 1, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(FitError::RaggedRow {
                row,
                expected,
                found: record.len(),
            });
        }
        for (column, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| FitError::NonNumeric {
                    row,
                    column: column + 1,
                    field: field.to_string(),
                })?;
            values.push(v);
        }
        n += 1;
    }
    let width = width.unwrap_or(0);
    Ok(DMatrix::from_fn(n, width, |i, k| values[i * width + k]))
}

/// Parses scattered data from CSV text: coordinates first, observation last.
pub fn parse_csv<R: Read>(reader: R, has_header: bool) -> Result<Dataset> {
    let table = parse_table(reader, has_header)?;
    let n = table.nrows();
    if n < 2 {
        return Err(FitError::TooFewSamples(n));
    }
    if table.ncols() < 2 {
        return Err(FitError::NoCoordinates);
    }
    let d = table.ncols() - 1;
    let locations = table.columns(0, d).into_owned();
    let observations = table.column(d).into_owned();
    Dataset::new(locations, observations)
}

/// True when the first data line of `text` contains a non-numeric field.
pub fn looks_like_header(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|l| l.split(',').any(|f| f.trim().parse::<f64>().is_err()))
}

/// Loads scattered data from a CSV file in original units.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| FitError::io(path, e))?;
    parse_csv(file, has_header)
}

/// Writes a dataset as `x_1,..,x_d,y` rows with full-precision numbers.
pub fn write_csv<W: std::io::Write>(ds: &Dataset, mut out: W, header: bool) -> std::io::Result<()> {
    if header {
        let mut names: Vec<String> = (1..=ds.d()).map(|k| format!("x{k}")).collect();
        names.push("y".into());
        writeln!(out, "{}", names.join(","))?;
    }
    for i in 0..ds.n() {
        for k in 0..ds.d() {
            write!(out, "{},", ds.locations[(i, k)])?;
        }
        writeln!(out, "{}", ds.observations[i])?;
    }
    Ok(())
}

/// A train/test partition produced by [`kfold_split`].
#[derive(Debug, Clone)]
pub struct Fold {
    pub train: Dataset,
    pub test: Dataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Index-level k-fold partition: seeded uniform shuffle, then contiguous
/// slices whose sizes differ by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(FitError::FoldCount { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut idx = order[start..start + len].to_vec();
        idx.sort_unstable();
        folds.push(idx);
        start += len;
    }
    Ok(folds)
}

pub fn kfold_split(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let folds = kfold_indices(ds.n(), k, seed)?;
    let mut in_test = vec![usize::MAX; ds.n()];
    for (f, idx) in folds.iter().enumerate() {
        for &i in idx {
            in_test[i] = f;
        }
    }
    Ok(folds
        .iter()
        .enumerate()
        .map(|(f, test_indices)| {
            let train_indices: Vec<usize> = (0..ds.n()).filter(|&i| in_test[i] != f).collect();
            Fold {
                train: ds.subset(&train_indices),
                test: ds.subset(test_indices),
                train_indices,
                test_indices: test_indices.clone(),
            }
        })
        .collect())
}
