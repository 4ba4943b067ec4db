//! Small dense least-squares helpers shared by the selection routines.

use nalgebra::{DMatrix, DVector};

use crate::error::{FitError, Result};

/// Relative pivot size below which a triangular factor is treated as singular.
const RANK_TOL: f64 = 1e-14;

/// Least-squares weights and Gram inverse of a full-column-rank basis,
/// computed from a Householder QR factorization.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub weights: DVector<f64>,
    pub gram_inverse: DMatrix<f64>,
}

pub fn solve_least_squares(basis: &DMatrix<f64>, target: &DVector<f64>) -> Result<LeastSquares> {
    let k = basis.ncols();
    if k == 0 {
        return Ok(LeastSquares {
            weights: DVector::zeros(0),
            gram_inverse: DMatrix::zeros(0, 0),
        });
    }
    if basis.nrows() < k {
        return Err(FitError::RankDeficient);
    }
    let qr = basis.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().abs().max();
    if !(scale > 0.0) || r.diagonal().iter().any(|d| d.abs() <= RANK_TOL * scale) {
        return Err(FitError::RankDeficient);
    }
    let mut qtb = target.clone();
    qr.q_tr_mul(&mut qtb);
    let rhs = qtb.rows(0, k).into_owned();
    let weights = r.solve_upper_triangular(&rhs).ok_or(FitError::RankDeficient)?;
    // (B^T B)^-1 = R^-1 R^-T
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(FitError::RankDeficient)?;
    let gram_inverse = &r_inv * r_inv.transpose();
    Ok(LeastSquares {
        weights,
        gram_inverse,
    })
}

pub fn mse(residual: &DVector<f64>) -> f64 {
    if residual.is_empty() {
        0.0
    } else {
        residual.norm_squared() / residual.len() as f64
    }
}
