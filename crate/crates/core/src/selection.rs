//! Truncation-scale selection by k-fold cross-validation, and reduction tables.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{kfold_split, Dataset};
use crate::driver::{fit, DriverConfig, FitTrace, ScaleRecord};
use crate::error::{FitError, Result};

pub const DEFAULT_FOLDS: usize = 2;
pub const DEFAULT_KNEE_TOL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub s: usize,
    pub mean_test_mse: f64,
    pub fold_test_mse: Vec<f64>,
    pub mean_train_mse: f64,
    /// Mean of `|C^s| / n_train` over folds.
    pub mean_fraction: f64,
    /// Mean distinct-point fraction over folds.
    pub mean_unique_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub max_scale: usize,
    pub seed: u64,
    pub n: usize,
    pub rows: Vec<CvRow>,
}

impl CvReport {
    pub fn mean_test_curve(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_test_mse).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "s".to_string(),
            "mean_test_mse".into(),
            "mean_train_mse".into(),
            "mean_fraction".into(),
            "mean_unique_fraction".into(),
        ];
        header.extend((0..self.folds).map(|f| format!("fold{f}_test_mse")));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.s.to_string(),
                r.mean_test_mse.to_string(),
                r.mean_train_mse.to_string(),
                r.mean_fraction.to_string(),
                r.mean_unique_fraction.to_string(),
            ];
            rec.extend(r.fold_test_mse.iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| FitError::Csv { row: 0, message: e.to_string() })?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> FitError {
    FitError::Csv {
        row: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Per-fold outcome: test MSE, training MSE and size fractions for every scale.
struct FoldCurve {
    test: Vec<f64>,
    train: Vec<f64>,
    fraction: Vec<f64>,
    unique: Vec<f64>,
}

/// K-fold cross-validation of the truncation scale. Each fold is fitted once
/// through `max_scale`; held-out error at every scale comes from the scale
/// partial sums of that single fit. `ds` must already be normalized.
pub fn cross_validate(
    ds: &Dataset,
    k: usize,
    max_scale: usize,
    config: &DriverConfig,
    seed: u64,
) -> Result<CvReport> {
    let folds = kfold_split(ds, k, seed)?;
    for (f, fold) in folds.iter().enumerate() {
        if fold.train_indices.len() < 2 {
            return Err(FitError::FoldTooSmall {
                fold: f,
                n_train: fold.train_indices.len(),
            });
        }
    }
    let mut cfg = config.clone();
    cfg.omega = max_scale;
    cfg.mse_budget = None;
    cfg.record = false;

    let curves: Vec<FoldCurve> = folds
        .par_iter()
        .map(|fold| -> Result<FoldCurve> {
            let res = fit(&fold.train, &cfg)?;
            let parts = res.model.scale_contributions_normalized(&fold.test.locations)?;
            let m = fold.test.n();
            let mut acc = nalgebra::DVector::zeros(m);
            let mut test = Vec::with_capacity(max_scale + 1);
            for p in &parts {
                acc += p;
                test.push((&fold.test.observations - &acc).norm_squared() / m as f64);
            }
            let n_train = fold.train.n() as f64;
            Ok(FoldCurve {
                test,
                train: res.trace.scales.iter().map(|r| r.mse_post).collect(),
                fraction: res.trace.scales.iter().map(|r| r.c_cum as f64 / n_train).collect(),
                unique: res.trace.scales.iter().map(|r| r.unique_cum as f64 / n_train).collect(),
            })
        })
        .collect::<Result<_>>()?;

    let kf = k as f64;
    let rows = (0..=max_scale)
        .map(|s| {
            let fold_test: Vec<f64> = curves.iter().map(|c| c.test[s]).collect();
            CvRow {
                s,
                mean_test_mse: fold_test.iter().sum::<f64>() / kf,
                fold_test_mse: fold_test,
                mean_train_mse: curves.iter().map(|c| c.train[s]).sum::<f64>() / kf,
                mean_fraction: curves.iter().map(|c| c.fraction[s]).sum::<f64>() / kf,
                mean_unique_fraction: curves.iter().map(|c| c.unique[s]).sum::<f64>() / kf,
            }
        })
        .collect();
    Ok(CvReport {
        folds: k,
        max_scale,
        seed,
        n: ds.n(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TruncationPolicy {
    /// Scale with the smallest mean test MSE.
    MinMse,
    /// Smallest scale whose mean test MSE is within `(1 + tol)` of the minimum.
    Knee { tol: f64 },
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy::MinMse
    }
}

impl fmt::Display for TruncationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TruncationPolicy::MinMse => f.write_str("min-mse"),
            TruncationPolicy::Knee { tol } => write!(f, "knee({tol})"),
        }
    }
}

impl FromStr for TruncationPolicy {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-mse" | "min_mse" => Ok(TruncationPolicy::MinMse),
            "knee" => Ok(TruncationPolicy::Knee { tol: DEFAULT_KNEE_TOL }),
            other => Err(FitError::InvalidParameter(format!(
                "unknown policy `{other}` (expected min-mse or knee)"
            ))),
        }
    }
}

/// Picks the truncation scale from a mean test-MSE curve; ties resolve to
/// the lowest scale.
pub fn select_truncation(report: &CvReport, policy: TruncationPolicy) -> usize {
    select_from_curve(&report.mean_test_curve(), policy)
}

pub fn select_from_curve(curve: &[f64], policy: TruncationPolicy) -> usize {
    let (argmin, min) = curve
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
    match policy {
        TruncationPolicy::MinMse => argmin,
        TruncationPolicy::Knee { tol } => curve
            .iter()
            .position(|&v| v <= (1.0 + tol) * min)
            .unwrap_or(argmin),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub s: usize,
    /// Training MSE of the model through scale `s`.
    pub mse: f64,
    /// `|C^s| / n`, counting a point once per scale it was selected at.
    pub fraction: f64,
    pub unique_fraction: f64,
}

pub fn reduction_report(trace: &FitTrace) -> Vec<ReductionRow> {
    reduction_rows(&trace.scales)
}

/// Reduction table from bare per-scale records, e.g. read back from JSON lines.
pub fn reduction_rows(records: &[ScaleRecord]) -> Vec<ReductionRow> {
    records
        .iter()
        .map(|r| (r, r.n as f64))
        .map(|(r, n)| ReductionRow {
            s: r.s,
            mse: r.mse_post,
            fraction: r.c_cum as f64 / n,
            unique_fraction: r.unique_cum as f64 / n,
        })
        .collect()
}

pub fn write_reduction_csv<W: Write>(rows: &[ReductionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    if rows.is_empty() {
        w.write_record(["s", "mse", "fraction", "unique_fraction"]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| FitError::Csv { row: 0, message: e.to_string() })?;
    Ok(())
}
