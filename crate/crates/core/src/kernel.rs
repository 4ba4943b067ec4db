//! Scale-indexed Gaussian kernels `K_s(a, b) = exp(-|a - b|^2 / kappa_s)` with
//! `kappa_s = T / 2^s`, plus the scale-level quantities derived from them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FitError, Result};

/// Largest sample count for which a scale's full kernel matrix is cached.
pub const DEFAULT_CACHE_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Normalizing constant `T` (squared length).
    pub t: f64,
    /// Reference scale used to initialize the tolerance.
    pub max_scale_hint: usize,
}

impl KernelConfig {
    pub fn new(t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(FitError::InvalidParameter(format!("T must be > 0, got {t}")));
        }
        Ok(Self {
            t,
            max_scale_hint: 15,
        })
    }
}

/// Per-scale kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub s: usize,
    pub kappa: f64,
    /// Smallest 2-norm of any kernel column at this scale.
    pub vartheta: f64,
}

impl ScaleParams {
    pub fn compute(locations: &DMatrix<f64>, t: f64, s: usize) -> Self {
        let kappa = length_scale(t, s);
        Self {
            s,
            kappa,
            vartheta: min_column_norm(locations, kappa),
        }
    }
}

/// Row-major copy of a location matrix, for cache-friendly distance loops.
#[derive(Debug, Clone)]
pub struct Points {
    data: Vec<f64>,
    d: usize,
}

impl Points {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (n, d) = m.shape();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.extend(m.row(i).iter());
        }
        Self { data, d }
    }

    pub fn len(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            self.data.len() / self.d
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn gaussian(sq_dist: f64, kappa: f64) -> f64 {
    (-sq_dist / kappa).exp()
}

/// Largest Euclidean distance between any two rows (exact `O(n^2)` scan).
pub fn diameter(locations: &DMatrix<f64>) -> Result<f64> {
    let n = locations.nrows();
    if n < 2 {
        return Err(FitError::TooFewSamples(n));
    }
    let pts = Points::from_matrix(locations);
    let max_sq = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = pts.row(i);
            (i + 1..n)
                .map(|j| squared_distance(a, pts.row(j)))
                .fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(max_sq.sqrt())
}

/// Diagonal of the axis-aligned bounding box; an upper bound on [`diameter`].
pub fn bounding_box_diagonal(locations: &DMatrix<f64>) -> f64 {
    bounding_box_lengths(locations)
        .iter()
        .map(|l| l * l)
        .sum::<f64>()
        .sqrt()
}

/// Side lengths of the tight axis-aligned bounding box.
pub fn bounding_box_lengths(locations: &DMatrix<f64>) -> Vec<f64> {
    locations
        .column_iter()
        .map(|c| c.max() - c.min())
        .collect()
}

/// `T = 2 (diam / 2)^2`.
pub fn normalizing_constant_from_diameter(diam: f64) -> Result<f64> {
    if !(diam > 0.0) {
        return Err(FitError::ZeroDiameter);
    }
    Ok(2.0 * (diam / 2.0).powi(2))
}

pub fn normalizing_constant(locations: &DMatrix<f64>) -> Result<f64> {
    normalizing_constant_from_diameter(diameter(locations)?)
}

/// `kappa_s = T / 2^s`; exact in floating point.
pub fn length_scale(t: f64, s: usize) -> f64 {
    t / 2f64.powi(s as i32)
}

/// Kernel values between every row of `eval` and `center`.
pub fn kernel_column(eval: &DMatrix<f64>, center: &[f64], kappa: f64) -> DVector<f64> {
    let pts = Points::from_matrix(eval);
    kernel_column_points(&pts, center, kappa)
}

pub fn kernel_column_points(pts: &Points, center: &[f64], kappa: f64) -> DVector<f64> {
    DVector::from_fn(pts.len(), |i, _| {
        gaussian(squared_distance(pts.row(i), center), kappa)
    })
}

/// Full symmetric kernel matrix of one scale.
pub fn gram_matrix(locations: &DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
    let pts = Points::from_matrix(locations);
    gram_points(&pts, kappa)
}

fn gram_points(pts: &Points, kappa: f64) -> DMatrix<f64> {
    let n = pts.len();
    let mut k = DMatrix::<f64>::zeros(n, n);
    k.as_mut_slice()
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(j, col)| {
            let c = pts.row(j);
            for (i, v) in col.iter_mut().enumerate() {
                *v = gaussian(squared_distance(pts.row(i), c), kappa);
            }
        });
    k
}

/// Squared 2-norm of every kernel column centered at a row of `pts`.
fn column_norms_sq(pts: &Points, kappa: f64) -> Vec<f64> {
    (0..pts.len())
        .into_par_iter()
        .map(|j| {
            let c = pts.row(j);
            (0..pts.len())
                .map(|i| gaussian(squared_distance(pts.row(i), c), kappa).powi(2))
                .sum()
        })
        .collect()
}

/// `vartheta_s`: the smallest column 2-norm over all centers.
pub fn min_column_norm(locations: &DMatrix<f64>, kappa: f64) -> f64 {
    let pts = Points::from_matrix(locations);
    column_norms_sq(&pts, kappa)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Upper bound on the numerical rank of `K_s` at precision `delta0` for data
/// inside a box with the given side lengths:
/// `ceil(prod_i (2 |I_i| / (pi sqrt(T)) * sqrt(2^s ln(1/delta0)) + 1))`.
pub fn rank_bound(box_lengths: &[f64], s: usize, delta0: f64, t: f64) -> Result<u64> {
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return Err(FitError::InvalidParameter(format!(
            "rank precision must lie in (0, 1), got {delta0}"
        )));
    }
    if box_lengths.iter().any(|l| !(*l >= 0.0)) {
        return Err(FitError::InvalidParameter("box lengths must be >= 0".into()));
    }
    Ok(rank_product(box_lengths, s, delta0, t).ceil() as u64)
}

/// The product inside [`rank_bound`], before rounding up.
pub fn rank_product(box_lengths: &[f64], s: usize, delta0: f64, t: f64) -> f64 {
    let root = (2f64.powi(s as i32) * (1.0 / delta0).ln()).sqrt();
    box_lengths
        .iter()
        .map(|l| 2.0 * l / (std::f64::consts::PI * t.sqrt()) * root + 1.0)
        .product()
}

/// Source of kernel columns for one scale. Small problems cache the whole
/// matrix; larger ones regenerate columns on demand.
#[derive(Debug, Clone)]
pub struct ColumnSource {
    pts: Points,
    kappa: f64,
    cached: Option<DMatrix<f64>>,
    norms_sq: Vec<f64>,
}

impl ColumnSource {
    pub fn new(locations: &DMatrix<f64>, kappa: f64, cache_threshold: usize) -> Self {
        let pts = Points::from_matrix(locations);
        let n = pts.len();
        if n <= cache_threshold {
            let k = gram_points(&pts, kappa);
            let norms_sq = k
                .as_slice()
                .par_chunks(n.max(1))
                .map(|c| c.iter().map(|v| v * v).sum())
                .collect();
            Self {
                pts,
                kappa,
                cached: Some(k),
                norms_sq,
            }
        } else {
            let norms_sq = column_norms_sq(&pts, kappa);
            Self {
                pts,
                kappa,
                cached: None,
                norms_sq,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn points(&self) -> &Points {
        &self.pts
    }

    pub fn norm_sq(&self, j: usize) -> f64 {
        self.norms_sq[j]
    }

    pub fn norms_sq(&self) -> &[f64] {
        &self.norms_sq
    }

    /// Smallest column norm (`vartheta_s`).
    pub fn min_norm(&self) -> f64 {
        self.norms_sq
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        match &self.cached {
            Some(k) => k.column(j).into_owned(),
            None => kernel_column_points(&self.pts, self.pts.row(j), self.kappa),
        }
    }

    /// Inner products `b_j^T r` for every column `j`.
    pub fn correlations(&self, r: &DVector<f64>) -> Vec<f64> {
        let n = self.len();
        match &self.cached {
            Some(k) => k
                .as_slice()
                .par_chunks(n.max(1))
                .map(|col| col.iter().zip(r.iter()).map(|(a, b)| a * b).sum())
                .collect(),
            None => (0..n)
                .into_par_iter()
                .map(|j| {
                    let c = self.pts.row(j);
                    (0..n)
                        .map(|i| gaussian(squared_distance(self.pts.row(i), c), self.kappa) * r[i])
                        .sum()
                })
                .collect(),
        }
    }
}

/// Diagnostic multiscale Gramian `sum_s zeta_s K_s K_s^T` over the given
/// `(scale, weight)` pairs. Used for positive-semidefiniteness checks only.
pub fn multiscale_gramian(locations: &DMatrix<f64>, t: f64, weights: &[(usize, f64)]) -> DMatrix<f64> {
    let n = locations.nrows();
    let mut g = DMatrix::<f64>::zeros(n, n);
    for &(s, zeta) in weights {
        let k = gram_matrix(locations, length_scale(t, s));
        g += (&k * k.transpose()) * zeta;
    }
    g
}

/// Weights `zeta_s = 2^-(s+1)` for scales `0..=max_scale`.
pub fn dyadic_weights(max_scale: usize) -> Vec<(usize, f64)> {
    (0..=max_scale)
        .map(|s| (s, 0.5f64.powi(s as i32 + 1)))
        .collect()
}
