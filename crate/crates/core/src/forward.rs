//! Greedy forward selection of kernel columns at a single scale.
//!
//! Each iteration scores every candidate column `b_j` against the current
//! residual `r` by `|r^T b_j|^2 / |b_j|^2`, takes the best one, and accepts it
//! while its projection coefficient `z_j = |r^T b_j| / |b_j|^2` stays at or
//! above the scale tolerance. Weights are maintained through a bordered
//! update of `(B^T B)^-1`, so the Gram matrix is never re-inverted.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{FitError, Result};
use crate::kernel::{length_scale, ColumnSource, DEFAULT_CACHE_THRESHOLD};
use crate::linalg::{mse, solve_least_squares};

/// Denominator below which a candidate column counts as numerically dependent.
pub const DEFAULT_DEPENDENCE_TOL: f64 = 1e-12;

/// Selected columns of one scale together with their least-squares weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleBasis {
    pub scale: usize,
    /// Sample indices of the selected centers, in selection order.
    pub center_indices: Vec<usize>,
    /// `n x k` matrix of selected kernel columns.
    pub columns: DMatrix<f64>,
    pub weights: DVector<f64>,
    /// `(B^T B)^-1`.
    pub gram_inverse: DMatrix<f64>,
}

impl ScaleBasis {
    pub fn empty(scale: usize, n: usize) -> Self {
        Self {
            scale,
            center_indices: Vec::new(),
            columns: DMatrix::zeros(n, 0),
            weights: DVector::zeros(0),
            gram_inverse: DMatrix::zeros(0, 0),
        }
    }

    /// Builds a basis from explicit columns, solving for the weights directly.
    pub fn from_columns(
        scale: usize,
        center_indices: Vec<usize>,
        columns: DMatrix<f64>,
        target: &DVector<f64>,
    ) -> Result<Self> {
        if columns.ncols() != center_indices.len() {
            return Err(FitError::DimensionMismatch {
                expected: center_indices.len(),
                found: columns.ncols(),
            });
        }
        let ls = solve_least_squares(&columns, target)?;
        Ok(Self {
            scale,
            center_indices,
            columns,
            weights: ls.weights,
            gram_inverse: ls.gram_inverse,
        })
    }

    pub fn len(&self) -> usize {
        self.center_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center_indices.is_empty()
    }

    pub fn n(&self) -> usize {
        self.columns.nrows()
    }

    /// `B Theta`.
    pub fn fitted(&self) -> DVector<f64> {
        if self.is_empty() {
            DVector::zeros(self.n())
        } else {
            &self.columns * &self.weights
        }
    }

    pub fn residual(&self, target: &DVector<f64>) -> DVector<f64> {
        target - self.fitted()
    }

    pub fn column_norms(&self) -> Vec<f64> {
        self.columns.column_iter().map(|c| c.norm()).collect()
    }

    /// Copy without the column at `position`, weights re-solved on `target`.
    pub fn without(&self, position: usize, target: &DVector<f64>) -> Result<Self> {
        let mut indices = self.center_indices.clone();
        indices.remove(position);
        let columns = self.columns.clone().remove_column(position);
        Self::from_columns(self.scale, indices, columns, target)
    }
}

/// Best candidate column for the current residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub index: usize,
    /// `|r^T b|^2 / |b|^2`, the quantity maximized.
    pub score: f64,
    /// `|r^T b| / |b|^2`, compared against the tolerance.
    pub z: f64,
}

pub(crate) fn select_from(
    source: &ColumnSource,
    r: &DVector<f64>,
    excluded: &[bool],
) -> Result<SelectionScore> {
    let corr = source.correlations(r);
    let mut best: Option<SelectionScore> = None;
    for (j, &c) in corr.iter().enumerate() {
        if excluded[j] {
            continue;
        }
        let nsq = source.norm_sq(j);
        let score = c * c / nsq;
        if best.is_none_or(|b| score > b.score) {
            best = Some(SelectionScore {
                index: j,
                score,
                z: c.abs() / nsq,
            });
        }
    }
    best.ok_or(FitError::NoCandidates)
}

/// Column maximizing `|r^T b_j|^2 / |b_j|^2` over `j` not in `excluded`;
/// ties go to the lowest index.
pub fn select_column(
    r: &DVector<f64>,
    locations: &DMatrix<f64>,
    kappa: f64,
    excluded: &[usize],
) -> Result<SelectionScore> {
    if r.len() != locations.nrows() {
        return Err(FitError::DimensionMismatch {
            expected: locations.nrows(),
            found: r.len(),
        });
    }
    let source = ColumnSource::new(locations, kappa, DEFAULT_CACHE_THRESHOLD);
    let mut mask = vec![false; r.len()];
    for &j in excluded {
        if j < mask.len() {
            mask[j] = true;
        }
    }
    select_from(&source, r, &mask)
}

/// Result of bordering `(B^T B)^-1` with one more column.
#[derive(Debug, Clone)]
pub struct InverseExtension {
    pub gram_inverse: DMatrix<f64>,
    /// `(B^T B)^-1 B^T b`, the projection coefficients of the new column.
    pub projection: DVector<f64>,
    /// `c - b0^T M0^-1 b0`, evaluated as `|b - B (B^T B)^-1 B^T b|^2`.
    pub denominator: f64,
}

pub fn extend_inverse_with(
    gram_inverse: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    b_new: &DVector<f64>,
    tol: f64,
) -> Result<InverseExtension> {
    let k = basis.ncols();
    if gram_inverse.shape() != (k, k) {
        return Err(FitError::DimensionMismatch {
            expected: k,
            found: gram_inverse.nrows(),
        });
    }
    let b0 = basis.tr_mul(b_new);
    let mut w = gram_inverse * &b0;
    let mut projected = b_new - basis * &w;
    // one refinement sweep, B^T b - G w = B^T (b - B w); keeps rounding in the
    // stored inverse from compounding across successive borders
    w += gram_inverse * basis.tr_mul(&projected);
    projected = b_new - basis * &w;
    let denominator = projected.norm_squared();
    if !(denominator > tol) {
        return Err(FitError::DependentColumn {
            denominator,
            tolerance: tol,
        });
    }
    let p = 1.0 / denominator;
    let mut out = DMatrix::<f64>::zeros(k + 1, k + 1);
    for j in 0..k {
        for i in 0..k {
            out[(i, j)] = gram_inverse[(i, j)] + p * w[i] * w[j];
        }
        out[(k, j)] = -p * w[j];
        out[(j, k)] = -p * w[j];
    }
    out[(k, k)] = p;
    Ok(InverseExtension {
        gram_inverse: out,
        projection: w,
        denominator,
    })
}

/// Bordered inverse of `[B b]^T [B b]` from `(B^T B)^-1`; fails when the new
/// column is numerically in the span of `B`.
pub fn extend_inverse(
    gram_inverse: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    b_new: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    extend_inverse_with(gram_inverse, basis, b_new, DEFAULT_DEPENDENCE_TOL).map(|e| e.gram_inverse)
}

/// `|(I - B (B^T B)^-1 B^T) b|`, computed from an SVD of `B`.
pub fn independence_quotient(basis: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
    if basis.ncols() == 0 {
        return Ok(b.norm());
    }
    if basis.nrows() < basis.ncols() {
        return Err(FitError::RankDeficient);
    }
    let svd = basis.clone().svd(true, false);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let tol = basis.nrows().max(basis.ncols()) as f64 * f64::EPSILON * smax;
    if !(smax > 0.0) || sv.iter().any(|&s| s <= tol) {
        return Err(FitError::RankDeficient);
    }
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let coeff = u.tr_mul(b);
    Ok((b - u * coeff).norm())
}

/// Per-acceptance record kept when step recording is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardStep {
    pub index: usize,
    pub z: f64,
    pub score: f64,
    pub mse_before: f64,
    pub mse_after: f64,
    /// Squared norm of the component of the column orthogonal to the basis.
    pub denominator: f64,
    /// Weights right after this acceptance.
    #[serde(skip)]
    pub weights: Option<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub dependence_tol: f64,
    pub record_steps: bool,
    /// Keep snapshots of the weight vector in every recorded step.
    pub record_weights: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            dependence_tol: DEFAULT_DEPENDENCE_TOL,
            record_steps: false,
            record_weights: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutcome {
    pub basis: ScaleBasis,
    /// Residual `t_s - B_s Theta_s` at termination.
    pub residual: DVector<f64>,
    /// `|r|^2 / n` at termination.
    pub mse: f64,
    /// Indices rejected as numerically dependent.
    pub dependent: Vec<usize>,
    pub steps: Vec<ForwardStep>,
}

/// Forward selection on a prepared column source.
pub fn forward_select_from(
    eps: f64,
    source: &ColumnSource,
    scale: usize,
    target: &DVector<f64>,
    opts: &ForwardOptions,
) -> Result<ForwardOutcome> {
    let n = source.len();
    if target.len() != n {
        return Err(FitError::DimensionMismatch {
            expected: n,
            found: target.len(),
        });
    }
    if !(eps > 0.0) {
        return Err(FitError::InvalidParameter(format!("tolerance must be > 0, got {eps}")));
    }

    let mut basis = ScaleBasis::empty(scale, n);
    let mut excluded = vec![false; n];
    let mut dependent = Vec::new();
    let mut steps = Vec::new();
    let mut residual = target.clone();
    let mut current_mse = mse(&residual);

    loop {
        let pick = match select_from(source, &residual, &excluded) {
            Ok(p) => p,
            Err(FitError::NoCandidates) => break,
            Err(e) => return Err(e),
        };
        if !(pick.z >= eps) {
            break;
        }
        let j = pick.index;
        let b = source.column(j);

        let denominator;
        if basis.is_empty() {
            let c = source.norm_sq(j);
            if !(c > opts.dependence_tol) {
                excluded[j] = true;
                dependent.push(j);
                continue;
            }
            denominator = c;
            basis.columns = DMatrix::from_column_slice(n, 1, b.as_slice());
            basis.gram_inverse = DMatrix::from_element(1, 1, 1.0 / c);
            basis.weights = DVector::from_element(1, b.dot(target) / c);
        } else {
            let ext = match extend_inverse_with(
                &basis.gram_inverse,
                &basis.columns,
                &b,
                opts.dependence_tol,
            ) {
                Ok(ext) => ext,
                Err(FitError::DependentColumn { .. }) => {
                    log::debug!("scale {scale}: column {j} numerically dependent, skipped");
                    excluded[j] = true;
                    dependent.push(j);
                    continue;
                }
                Err(e) => return Err(e),
            };
            denominator = ext.denominator;
            // bordered solve applied to [B^T t; b^T t]; b^T t - b0^T Theta = b^T r
            let theta_new = b.dot(&residual) / ext.denominator;
            let k = basis.len();
            let mut weights = DVector::zeros(k + 1);
            for i in 0..k {
                weights[i] = basis.weights[i] - ext.projection[i] * theta_new;
            }
            weights[k] = theta_new;
            basis.weights = weights;
            basis.gram_inverse = ext.gram_inverse;
            let cols = std::mem::replace(&mut basis.columns, DMatrix::zeros(0, 0));
            let mut cols = cols.insert_column(k, 0.0);
            cols.set_column(k, &b);
            basis.columns = cols;
        }
        basis.center_indices.push(j);
        excluded[j] = true;

        residual = basis.residual(target);
        let mse_after = mse(&residual);
        if opts.record_steps {
            steps.push(ForwardStep {
                index: j,
                z: pick.z,
                score: pick.score,
                mse_before: current_mse,
                mse_after,
                denominator,
                weights: opts.record_weights.then(|| basis.weights.clone()),
            });
        }
        current_mse = mse_after;
    }

    Ok(ForwardOutcome {
        basis,
        residual,
        mse: current_mse,
        dependent,
        steps,
    })
}

/// Forward selection at scale `s` on a dataset, with kernel width `T / 2^s`.
pub fn forward_select(
    eps: f64,
    ds: &Dataset,
    t_const: f64,
    scale: usize,
    target: &DVector<f64>,
) -> Result<ForwardOutcome> {
    let source = ColumnSource::new(
        &ds.locations,
        length_scale(t_const, scale),
        DEFAULT_CACHE_THRESHOLD,
    );
    forward_select_from(eps, &source, scale, target, &ForwardOptions::default())
}
