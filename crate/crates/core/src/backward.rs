//! Backward pruning of a forward-selected basis.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{FitError, Result};
use crate::forward::ScaleBasis;
use crate::linalg::mse;

/// Acceptance rule for a candidate deletion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeletionMode {
    /// Total MSE increase since forward termination stays within `vartheta^2 eps^2 / n`.
    #[default]
    Cumulative,
    /// Delete while the smallest `|theta_j| |b_j|` is at most `vartheta eps`.
    PerColumn,
}

impl fmt::Display for DeletionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeletionMode::Cumulative => "cumulative",
            DeletionMode::PerColumn => "per-column",
        })
    }
}

impl FromStr for DeletionMode {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cumulative" => Ok(DeletionMode::Cumulative),
            "per-column" | "per_column" => Ok(DeletionMode::PerColumn),
            other => Err(FitError::InvalidParameter(format!(
                "unknown deletion mode `{other}` (expected cumulative or per-column)"
            ))),
        }
    }
}

/// Position in the basis minimizing `|theta_j| * |b_j|`; ties go to the
/// lowest position. Removing that column without re-solving increases
/// `|r|^2` by exactly `theta_j^2 |b_j|^2`, so it is also the cheapest removal.
pub fn least_important(basis: &ScaleBasis) -> Result<usize> {
    importance(basis)
        .into_iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
        .ok_or(FitError::EmptyBasis)
}

fn importance(basis: &ScaleBasis) -> Vec<f64> {
    basis
        .column_norms()
        .into_iter()
        .zip(basis.weights.iter())
        .map(|(norm, w)| w.abs() * norm)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deletion {
    /// Sample index of the removed center.
    pub index: usize,
    /// `|theta_j| |b_j|` at decision time.
    pub importance: f64,
    /// MSE with the column removed and the remaining weights re-solved.
    pub mse_after: f64,
    /// Value compared against `threshold`: the cumulative MSE increase or the importance.
    pub criterion: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct BackwardOutcome {
    pub basis: ScaleBasis,
    pub residual: DVector<f64>,
    pub mse: f64,
    /// Executed deletions, in order.
    pub deletions: Vec<Deletion>,
}

/// Removes least-important columns while `mode`'s criterion holds.
///
/// `forward_mse` is the MSE of `target - B Theta` for the input basis;
/// `vartheta` is the scale's minimum column norm.
pub fn backward_delete(
    eps: f64,
    vartheta: f64,
    basis: ScaleBasis,
    forward_mse: f64,
    target: &DVector<f64>,
    mode: DeletionMode,
) -> Result<BackwardOutcome> {
    let n = target.len();
    if basis.n() != n {
        return Err(FitError::DimensionMismatch {
            expected: basis.n(),
            found: n,
        });
    }
    let mse_threshold = vartheta * vartheta * eps * eps / n as f64;
    let importance_threshold = vartheta * eps;

    let mut basis = basis;
    let mut current_mse = forward_mse;
    let mut deletions = Vec::new();

    while !basis.is_empty() {
        let pos = least_important(&basis)?;
        let imp = importance(&basis)[pos];
        if mode == DeletionMode::PerColumn && !(imp <= importance_threshold) {
            break;
        }
        let reduced = basis.without(pos, target)?;
        let reduced_mse = mse(&reduced.residual(target));
        let (criterion, threshold) = match mode {
            DeletionMode::Cumulative => (reduced_mse - forward_mse, mse_threshold),
            DeletionMode::PerColumn => (imp, importance_threshold),
        };
        if !(criterion <= threshold) {
            break;
        }
        deletions.push(Deletion {
            index: basis.center_indices[pos],
            importance: imp,
            mse_after: reduced_mse,
            criterion,
            threshold,
        });
        basis = reduced;
        current_mse = reduced_mse;
    }

    let residual = basis.residual(target);
    if deletions.is_empty() {
        current_mse = forward_mse;
    }
    Ok(BackwardOutcome {
        basis,
        residual,
        mse: current_mse,
        deletions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::forward::forward_select;
    use crate::kernel::{kernel_column, length_scale, min_column_norm, normalizing_constant};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis_from(columns: DMatrix<f64>, target: &DVector<f64>) -> ScaleBasis {
        let k = columns.ncols();
        ScaleBasis::from_columns(0, (0..k).collect(), columns, target).unwrap()
    }

    #[test]
    fn zero_weight_is_least_important() {
        let cols = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let target = DVector::from_vec(vec![2.0, 0.0, -1.0]);
        let b = basis_from(cols, &target);
        assert_eq!(least_important(&b).unwrap(), 1);
    }

    #[test]
    fn orthonormal_columns_pick_smallest_weight() {
        let cols = DMatrix::from_row_slice(4, 3, &[
            1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
        ]);
        let target = DVector::from_vec(vec![-3.0, 0.5, 2.0, 7.0]);
        let b = basis_from(cols, &target);
        assert_eq!(least_important(&b).unwrap(), 1);
    }

    #[test]
    fn empty_basis_errors() {
        let b = ScaleBasis::empty(0, 3);
        assert!(matches!(least_important(&b), Err(FitError::EmptyBasis)));
    }

    #[test]
    fn matches_exhaustive_removal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let cols = DMatrix::from_fn(15, 6, |_, _| rng.random_range(-1.0..1.0));
            let target = DVector::from_fn(15, |_, _| rng.random_range(-1.0..1.0));
            let b = basis_from(cols, &target);
            let r = b.residual(&target);
            let mut best = (0, f64::INFINITY);
            for j in 0..6 {
                let bumped = &r + b.columns.column(j) * b.weights[j];
                let m = mse(&bumped);
                if m < best.1 {
                    best = (j, m);
                }
            }
            assert_eq!(least_important(&b).unwrap(), best.0);
        }
    }

    #[test]
    fn exact_single_column_is_kept() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64 / 9.0);
        let kappa = 0.1;
        let target = kernel_column(&x, &[x[(3, 0)]], kappa);
        let b = ScaleBasis::from_columns(0, vec![3], DMatrix::from_column_slice(10, 1, target.as_slice()), &target)
            .unwrap();
        let theta = min_column_norm(&x, kappa);
        let out = backward_delete(1e-3, theta, b, 0.0, &target, DeletionMode::Cumulative).unwrap();
        assert_eq!(out.basis.center_indices, vec![3]);
        assert!(out.deletions.is_empty());
    }

    #[test]
    fn zero_weight_column_is_removed() {
        let cols = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let target = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let b = basis_from(cols, &target);
        for mode in [DeletionMode::Cumulative, DeletionMode::PerColumn] {
            let out = backward_delete(1e-6, 1.0, b.clone(), 0.0, &target, mode).unwrap();
            assert_eq!(out.basis.center_indices, vec![0]);
            assert_eq!(out.deletions.len(), 1);
            assert_eq!(out.mse, 0.0);
        }
    }

    #[test]
    fn redundant_forward_basis_is_pruned() {
        // target in the span of two scale columns; a tiny tolerance lets forward
        // selection admit extra columns that only chase rounding noise
        let n = 20;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        let ds = Dataset::new(x.clone(), DVector::zeros(n)).unwrap();
        let t = normalizing_constant(&x).unwrap();
        let s = 4;
        let kappa = length_scale(t, s);
        let target = kernel_column(&x, &[x[(4, 0)]], kappa) + kernel_column(&x, &[x[(15, 0)]], kappa) * 0.5;
        let eps = 1e-9;
        let fwd = forward_select(eps, &ds, t, s, &target).unwrap();
        let theta = min_column_norm(&x, kappa);
        let out =
            backward_delete(eps, theta, fwd.basis, fwd.mse, &target, DeletionMode::Cumulative).unwrap();
        assert!(out.basis.len() <= 2, "kept {:?}", out.basis.center_indices);
        assert!(out.mse - fwd.mse <= theta * theta * eps * eps / n as f64 + 1e-12);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("cumulative".parse::<DeletionMode>().unwrap(), DeletionMode::Cumulative);
        assert_eq!("per-column".parse::<DeletionMode>().unwrap(), DeletionMode::PerColumn);
        assert!("sideways".parse::<DeletionMode>().is_err());
        assert_eq!(DeletionMode::PerColumn.to_string(), "per-column");
    }
}
