//! Fitted sparse multiscale model: prediction and JSON persistence.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::DeletionMode;
use crate::dataset::NormParams;
use crate::error::{FitError, Result};
use crate::kernel::{gaussian, length_scale, squared_distance};

pub const SCHEMA_VERSION: u32 = 1;

/// One selected center with its scale and weight. `x` and `y` are in
/// normalized units; `y` is carried for reporting and never used to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseEntry {
    pub x: Vec<f64>,
    pub y: f64,
    pub s: usize,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub delta: f64,
    pub ref_scale: usize,
    pub eps0: f64,
    pub deletion_mode: DeletionMode,
    pub n_train: usize,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleModel {
    pub schema_version: u32,
    pub d: usize,
    /// Highest scale fitted (entries may stop earlier).
    pub omega: usize,
    #[serde(rename = "T")]
    pub t_const: f64,
    pub norm: NormParams,
    /// Entries ordered by scale, then by selection order within a scale.
    pub entries: Vec<SparseEntry>,
    pub metadata: ModelMetadata,
}

impl MultiscaleModel {
    pub fn new(
        d: usize,
        omega: usize,
        t_const: f64,
        norm: NormParams,
        entries: Vec<SparseEntry>,
        metadata: ModelMetadata,
    ) -> Result<Self> {
        let model = Self {
            schema_version: SCHEMA_VERSION,
            d,
            omega,
            t_const,
            norm,
            entries,
            metadata,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(FitError::Schema(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.d == 0 {
            return Err(FitError::Schema("d must be >= 1".into()));
        }
        if !(self.t_const > 0.0 && self.t_const.is_finite()) {
            return Err(FitError::Schema(format!("T must be positive, got {}", self.t_const)));
        }
        let norm = &self.norm;
        if norm.x_min.len() != self.d || norm.x_max.len() != self.d {
            return Err(FitError::Schema("norm bounds do not match d".into()));
        }
        let bounds = norm.x_min.iter().chain(&norm.x_max).chain([&norm.y_min, &norm.y_max]);
        if bounds.clone().any(|v| !v.is_finite()) {
            return Err(FitError::Schema("non-finite normalization bound".into()));
        }
        if norm.x_min.iter().zip(&norm.x_max).any(|(a, b)| b < a) || norm.y_max < norm.y_min {
            return Err(FitError::Schema("normalization max below min".into()));
        }
        let mut last_scale = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.x.len() != self.d {
                return Err(FitError::Schema(format!("entry {i} has {} coordinates", e.x.len())));
            }
            if e.s > self.omega {
                return Err(FitError::Schema(format!(
                    "entry {i} has scale {} above omega {}",
                    e.s, self.omega
                )));
            }
            if e.s < last_scale {
                return Err(FitError::Schema(format!("entry {i} is out of scale order")));
            }
            last_scale = e.s;
            if !e.theta.is_finite() || !e.y.is_finite() || e.x.iter().any(|v| !v.is_finite()) {
                return Err(FitError::Schema(format!("entry {i} has a non-finite value")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of entries at each scale `0..=omega`.
    pub fn scale_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.omega + 1];
        for e in &self.entries {
            counts[e.s] += 1;
        }
        counts
    }

    fn normalize_points(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if points.ncols() != self.d {
            return Err(FitError::DimensionMismatch {
                expected: self.d,
                found: points.ncols(),
            });
        }
        self.norm.normalize_locations(points)
    }

    /// Per-scale contributions `sum_{j in C_s} theta_j K_s(x, x_j)` for
    /// `s = 0..=omega`, at already normalized locations.
    pub fn scale_contributions_normalized(&self, points: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
        if points.ncols() != self.d {
            return Err(FitError::DimensionMismatch {
                expected: self.d,
                found: points.ncols(),
            });
        }
        let t = points.nrows();
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|i| points.row(i).iter().copied().collect())
            .collect();
        let kappas: Vec<f64> = (0..=self.omega).map(|s| length_scale(self.t_const, s)).collect();
        let per_row: Vec<Vec<f64>> = rows
            .par_iter()
            .map(|p| {
                let mut acc = vec![0.0; self.omega + 1];
                for e in &self.entries {
                    acc[e.s] += e.theta * gaussian(squared_distance(p, &e.x), kappas[e.s]);
                }
                acc
            })
            .collect();
        Ok((0..=self.omega)
            .map(|s| DVector::from_fn(t, |i, _| per_row[i][s]))
            .collect())
    }

    /// Prediction through scale `s_max` at normalized locations, in normalized units.
    pub fn predict_normalized_up_to(&self, points: &DMatrix<f64>, s_max: usize) -> Result<DVector<f64>> {
        if s_max > self.omega {
            return Err(FitError::ScaleOutOfRange {
                requested: s_max,
                omega: self.omega,
            });
        }
        let parts = self.scale_contributions_normalized(points)?;
        Ok(partial_sum(&parts, s_max, points.nrows()))
    }

    pub fn predict_normalized(&self, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.predict_normalized_up_to(points, self.omega)
    }

    /// Per-scale contributions at locations in original units (normalized output units).
    pub fn scale_contributions(&self, points: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
        let xn = self.normalize_points(points)?;
        self.scale_contributions_normalized(&xn)
    }

    /// Prediction in original units at locations in original units.
    pub fn predict(&self, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.predict_up_to_scale(points, self.omega)
    }

    /// Prediction using only entries with scale `<= s_max`.
    pub fn predict_up_to_scale(&self, points: &DMatrix<f64>, s_max: usize) -> Result<DVector<f64>> {
        let xn = self.normalize_points(points)?;
        let p = self.predict_normalized_up_to(&xn, s_max)?;
        Ok(self.norm.denormalize(&p))
    }
}

/// `sum_{s <= s_max} parts[s]`, accumulated in scale order.
pub fn partial_sum(parts: &[DVector<f64>], s_max: usize, len: usize) -> DVector<f64> {
    let mut acc = DVector::zeros(len);
    for p in parts.iter().take(s_max + 1) {
        acc += p;
    }
    acc
}

/// Writes the model as JSON through a temporary file in the target directory,
/// renamed into place once complete.
pub fn save_model(model: &MultiscaleModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = serde_json::to_vec_pretty(model)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MultiscaleModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FitError::io(path, e))?;
    model_from_json(&text)
}

pub fn model_from_json(text: &str) -> Result<MultiscaleModel> {
    let model: MultiscaleModel =
        serde_json::from_str(text).map_err(|e| FitError::Schema(e.to_string()))?;
    model.validate()?;
    Ok(model)
}

/// Atomic write: temp file in the same directory, flushed, then renamed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| FitError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| FitError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| FitError::io(path, e))?;
    tmp.persist(path).map_err(|e| FitError::io(path, e.error))?;
    Ok(())
}
