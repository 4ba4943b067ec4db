//! Scale-by-scale orchestration: tolerance schedule, forward selection and
//! backward deletion per scale, residual targets, and the fit trace.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backward::{backward_delete, Deletion, DeletionMode};
use crate::dataset::Dataset;
use crate::error::{FitError, Result};
use crate::forward::{forward_select_from, ForwardOptions, ForwardStep, ScaleBasis, DEFAULT_DEPENDENCE_TOL};
use crate::kernel::{
    bounding_box_diagonal, bounding_box_lengths, length_scale, min_column_norm, normalizing_constant,
    normalizing_constant_from_diameter, rank_bound, ColumnSource, DEFAULT_CACHE_THRESHOLD,
};
use crate::model::{ModelMetadata, MultiscaleModel, SparseEntry};

pub const DEFAULT_REF_SCALE: usize = 15;
pub const DEFAULT_RANK_PRECISION: f64 = 1e-10;

/// Default `delta` for a given input dimension: `1e-3` in 1-d, `1e-2` otherwise.
pub fn default_delta(d: usize) -> f64 {
    if d <= 1 {
        1e-3
    } else {
        1e-2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverConfig {
    /// Truncation scale; the loop runs `0..=omega` unless the MSE budget stops it first.
    pub omega: usize,
    /// Upper bound the tolerance schedule is built around.
    pub delta: f64,
    /// Scale whose `vartheta` sets the initial tolerance.
    pub ref_scale: usize,
    pub deletion_mode: DeletionMode,
    /// Use this initial tolerance instead of deriving it from `delta`.
    pub eps0_override: Option<f64>,
    /// Stop after the first scale whose training MSE is at or below this value.
    pub mse_budget: Option<f64>,
    /// `delta0` in the numerical-rank diagnostic.
    pub rank_precision: f64,
    pub dependence_tol: f64,
    pub cache_threshold: usize,
    /// Take `T` from the bounding-box diagonal instead of the exact diameter.
    pub bbox_diameter: bool,
    /// Keep per-step logs, weight snapshots and bases in the trace.
    pub record: bool,
}

impl DriverConfig {
    pub fn for_dimension(d: usize, omega: usize) -> Self {
        Self {
            omega,
            delta: default_delta(d),
            ref_scale: DEFAULT_REF_SCALE,
            deletion_mode: DeletionMode::Cumulative,
            eps0_override: None,
            mse_budget: None,
            rank_precision: DEFAULT_RANK_PRECISION,
            dependence_tol: DEFAULT_DEPENDENCE_TOL,
            cache_threshold: DEFAULT_CACHE_THRESHOLD,
            bbox_diameter: false,
            record: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(FitError::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if let Some(e) = self.eps0_override {
            if !(e > 0.0 && e.is_finite()) {
                return Err(FitError::InvalidParameter(format!("eps0 must be > 0, got {e}")));
            }
        }
        if let Some(b) = self.mse_budget {
            if !(b >= 0.0) {
                return Err(FitError::InvalidParameter(format!("mse budget must be >= 0, got {b}")));
            }
        }
        if !(self.rank_precision > 0.0 && self.rank_precision < 1.0) {
            return Err(FitError::InvalidParameter(format!(
                "rank precision must lie in (0, 1), got {}",
                self.rank_precision
            )));
        }
        if !(self.dependence_tol >= 0.0) {
            return Err(FitError::InvalidParameter("dependence tolerance must be >= 0".into()));
        }
        if self.omega > 60 || self.ref_scale > 60 {
            return Err(FitError::InvalidParameter("scales above 60 underflow the kernel width".into()));
        }
        Ok(())
    }
}

/// `eps0 = delta * vartheta_ref / vartheta_0` on the full training locations.
pub fn init_tolerance(delta: f64, ref_scale: usize, locations: &DMatrix<f64>, t: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(FitError::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(t > 0.0) {
        return Err(FitError::ZeroDiameter);
    }
    let v0 = min_column_norm(locations, length_scale(t, 0));
    let vref = min_column_norm(locations, length_scale(t, ref_scale));
    Ok(delta * vref / v0)
}

/// `(gamma, Delta) = (eps0 vartheta0^2 / |t0|, eps0^2 vartheta0^2 / n)`.
pub fn supporting_params(eps0: f64, vartheta0: f64, t0_norm: f64, n: usize) -> Result<(f64, f64)> {
    if !(t0_norm > 0.0) {
        return Err(FitError::InvalidParameter(
            "target norm is zero; the fit is the zero model".into(),
        ));
    }
    if !(eps0 > 0.0) {
        return Err(FitError::InvalidParameter(format!("eps0 must be > 0, got {eps0}")));
    }
    let v2 = vartheta0 * vartheta0;
    Ok((eps0 * v2 / t0_norm, eps0 * eps0 * v2 / n as f64))
}

/// `eps_s = max(gamma |t_s| / vartheta_s^2, sqrt(n Delta) / vartheta_s)`.
pub fn update_tolerance(gamma: f64, big_delta: f64, t_s_norm: f64, vartheta_s: f64, n: usize) -> f64 {
    let a = gamma * t_s_norm / (vartheta_s * vartheta_s);
    let b = (n as f64 * big_delta).sqrt() / vartheta_s;
    a.max(b)
}

/// Per-scale trace record; the serialized fields form one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub s: usize,
    /// Training sample count.
    pub n: usize,
    pub eps: f64,
    pub vartheta: f64,
    pub kappa: f64,
    /// `|C_s|` after forward selection.
    pub n_fwd: usize,
    /// `|C_s|` after backward deletion.
    pub n_bwd: usize,
    /// `|t_s|^2 / n`.
    pub mse_pre: f64,
    /// MSE at forward termination.
    pub mse_fwd: f64,
    /// `|t_{s+1}|^2 / n`, the training MSE of the model through scale `s`.
    pub mse_post: f64,
    /// Per-scale counts summed through `s`.
    pub c_cum: usize,
    /// Distinct training points among the entries through `s`.
    pub unique_cum: usize,
    pub rank_bound: u64,
    /// Size bound on the representation through `s`.
    pub size_bound: f64,
    #[serde(skip)]
    pub detail: Option<ScaleDetail>,
}

/// Heavy per-scale diagnostics, kept only when `DriverConfig::record` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleDetail {
    /// Target `t_s` this scale was fitted against.
    pub target: DVector<f64>,
    pub forward_basis: ScaleBasis,
    pub basis: ScaleBasis,
    pub steps: Vec<ForwardStep>,
    pub deletions: Vec<Deletion>,
    pub dependent: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub t_const: f64,
    pub delta: f64,
    pub ref_scale: usize,
    pub eps0: f64,
    /// `None` when the target is identically zero.
    pub gamma: Option<f64>,
    /// Minimum per-step MSE reduction parameter.
    pub big_delta: f64,
    pub vartheta_ref: f64,
    pub t0_norm: f64,
    pub rank_precision: f64,
    /// Side lengths of the tight bounding box used in the rank diagnostic.
    pub rank_box: Vec<f64>,
    /// Bound on the entries contributed by scales above the last executed one.
    pub missing_bound: Option<f64>,
    pub scales: Vec<ScaleRecord>,
}

impl FitTrace {
    pub fn final_mse(&self) -> f64 {
        self.scales.last().map_or(0.0, |r| r.mse_post)
    }

    /// One JSON object per scale, newline separated.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in &self.scales {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Reads per-scale records written by [`FitTrace::write_jsonl`].
pub fn read_jsonl(text: &str) -> Result<Vec<ScaleRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| FitError::Schema(format!("trace line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: MultiscaleModel,
    pub trace: FitTrace,
    /// `f^omega` at the training locations, normalized units.
    pub fitted: DVector<f64>,
    /// Per-scale contributions `B_s Theta_s` at the training locations.
    pub contributions: Vec<DVector<f64>>,
}

impl FitResult {
    pub fn residual(&self, observations: &DVector<f64>) -> DVector<f64> {
        observations - &self.fitted
    }
}

/// Fits the multiscale model to a dataset that is already in normalized units.
pub fn fit(ds: &Dataset, config: &DriverConfig) -> Result<FitResult> {
    config.validate()?;
    let n = ds.n();
    let x = &ds.locations;
    let t_const = if config.bbox_diameter {
        normalizing_constant_from_diameter(bounding_box_diagonal(x))?
    } else {
        normalizing_constant(x)?
    };
    if config.ref_scale < config.omega {
        log::warn!(
            "ref_scale {} is below omega {}; the tolerance may exceed delta at high scales",
            config.ref_scale,
            config.omega
        );
    }

    let vartheta0 = min_column_norm(x, length_scale(t_const, 0));
    let vartheta_ref = min_column_norm(x, length_scale(t_const, config.ref_scale));
    let eps0 = config
        .eps0_override
        .unwrap_or(config.delta * vartheta_ref / vartheta0);
    let t0 = ds.observations.clone();
    let t0_norm = t0.norm();
    let (gamma, big_delta) = match supporting_params(eps0, vartheta0, t0_norm, n) {
        Ok((g, d)) => (Some(g), d),
        Err(_) => (None, eps0 * eps0 * vartheta0 * vartheta0 / n as f64),
    };
    let rank_box = bounding_box_lengths(x);
    let opts = ForwardOptions {
        dependence_tol: config.dependence_tol,
        record_steps: config.record,
        record_weights: config.record,
    };

    let mut target = t0;
    let mut fitted = DVector::zeros(n);
    let mut contributions = Vec::new();
    let mut entries = Vec::new();
    let mut unique = BTreeSet::new();
    let mut records: Vec<ScaleRecord> = Vec::new();
    let mut c_cum = 0usize;
    let mut tol_sum = 0.0;
    let mut tol_min = f64::INFINITY;
    let t0_sq = t0_norm * t0_norm;

    for s in 0..=config.omega {
        let kappa = length_scale(t_const, s);
        let source = ColumnSource::new(x, kappa, config.cache_threshold);
        let vartheta = source.min_norm();
        let t_norm = target.norm();
        let eps = if s == 0 {
            eps0
        } else {
            match gamma {
                Some(g) => update_tolerance(g, big_delta, t_norm, vartheta, n),
                None => (n as f64 * big_delta).sqrt() / vartheta,
            }
        };
        let mse_pre = t_norm * t_norm / n as f64;

        let fwd = forward_select_from(eps, &source, s, &target, &opts)?;
        let n_fwd = fwd.basis.len();
        let forward_basis = config.record.then(|| fwd.basis.clone());
        let bwd = backward_delete(eps, vartheta, fwd.basis, fwd.mse, &target, config.deletion_mode)?;
        let basis = bwd.basis;

        let contribution = basis.fitted();
        for (k, &j) in basis.center_indices.iter().enumerate() {
            entries.push(SparseEntry {
                x: x.row(j).iter().copied().collect(),
                y: ds.observations[j],
                s,
                theta: basis.weights[k],
            });
            unique.insert(j);
        }
        c_cum += basis.len();
        let next = &target - &contribution;
        fitted += &contribution;
        let post_norm = next.norm();
        let mse_post = post_norm * post_norm / n as f64;

        let tol = vartheta * vartheta * eps * eps;
        tol_sum += tol;
        tol_min = tol_min.min(tol);
        let size_bound = (t0_sq - post_norm * post_norm + tol_sum) / tol_min;

        let detail = config.record.then(|| ScaleDetail {
            target: target.clone(),
            forward_basis: forward_basis.expect("recorded"),
            basis: basis.clone(),
            steps: fwd.steps,
            deletions: bwd.deletions,
            dependent: fwd.dependent,
        });
        log::debug!(
            "scale {s}: eps {eps:.4e}, vartheta {vartheta:.4}, fwd {n_fwd}, bwd {}, mse {mse_post:.4e}",
            basis.len()
        );
        records.push(ScaleRecord {
            s,
            n,
            eps,
            vartheta,
            kappa,
            n_fwd,
            n_bwd: basis.len(),
            mse_pre,
            mse_fwd: fwd.mse,
            mse_post,
            c_cum,
            unique_cum: unique.len(),
            rank_bound: rank_bound(&rank_box, s, config.rank_precision, t_const)?,
            size_bound,
            detail,
        });
        contributions.push(contribution);
        target = next;

        if config.mse_budget.is_some_and(|b| mse_post <= b) {
            log::info!("mse budget reached at scale {s}");
            break;
        }
    }

    let omega = records.len() - 1;
    let missing_bound = gamma.map(|g| {
        let v = min_column_norm(x, length_scale(t_const, omega + 1));
        v.powi(4) / (g * g)
    });

    let metadata = ModelMetadata {
        delta: config.delta,
        ref_scale: config.ref_scale,
        eps0,
        deletion_mode: config.deletion_mode,
        n_train: n,
        generator: format!("fbms {}", env!("CARGO_PKG_VERSION")),
    };
    let model = MultiscaleModel::new(ds.d(), omega, t_const, ds.norm_or_identity(), entries, metadata)?;
    let trace = FitTrace {
        n,
        d: ds.d(),
        t_const,
        delta: config.delta,
        ref_scale: config.ref_scale,
        eps0,
        gamma,
        big_delta,
        vartheta_ref,
        t0_norm,
        rank_precision: config.rank_precision,
        rank_box,
        missing_bound,
        scales: records,
    };
    Ok(FitResult {
        model,
        trace,
        fitted,
        contributions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::kernel_column;
    use approx::assert_relative_eq;

    fn grid(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64)
    }

    #[test]
    fn tolerance_arithmetic() {
        // delta * vartheta_ref / vartheta_0 with 8 and 1
        assert_relative_eq!(1e-3 * 1.0 / 8.0, 1.25e-4);
        let (g, d) = supporting_params(0.01, 2.0, 10.0, 100).unwrap();
        assert_relative_eq!(g, 0.004, epsilon = 1e-18);
        assert_relative_eq!(d, 4e-6, epsilon = 1e-20);
        let (g2, d2) = supporting_params(0.02, 2.0, 10.0, 100).unwrap();
        assert_relative_eq!(g2, 2.0 * g, epsilon = 1e-18);
        assert_relative_eq!(d2, 4.0 * d, epsilon = 1e-20);
        assert!(supporting_params(0.01, 2.0, 0.0, 100).is_err());
    }

    #[test]
    fn base_case_reproduces_eps0() {
        let (g, d) = supporting_params(0.01, 2.0, 10.0, 100).unwrap();
        assert_relative_eq!(update_tolerance(g, d, 10.0, 2.0, 100), 0.01, epsilon = 1e-15);
    }

    #[test]
    fn zero_target_norm_uses_delta_branch() {
        assert_relative_eq!(update_tolerance(0.5, 4e-6, 0.0, 2.0, 100), 0.01);
        // equal branches
        assert_relative_eq!(update_tolerance(0.04, 4e-6, 1.0, 2.0, 100), 0.01);
    }

    #[test]
    fn init_tolerance_below_delta() {
        let x = grid(50);
        let t = normalizing_constant(&x).unwrap();
        let e = init_tolerance(1e-3, 15, &x, t).unwrap();
        assert!(e < 1e-3 && e > 0.0);
        // high reference scales on few points: both norms approach one another
        let x2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let t2 = normalizing_constant(&x2).unwrap();
        let e2 = init_tolerance(1e-3, 0, &x2, t2).unwrap();
        assert_relative_eq!(e2, 1e-3);
    }

    #[test]
    fn schedule_on_grid() {
        let x = grid(100);
        let t = normalizing_constant(&x).unwrap();
        let delta = 1e-3;
        let eps0 = init_tolerance(delta, 15, &x, t).unwrap();
        let v0 = min_column_norm(&x, length_scale(t, 0));
        let y = DVector::from_fn(100, |i, _| (6.0 * x[(i, 0)]).sin().abs());
        let ds = Dataset::new(x.clone(), y).unwrap();
        let mut cfg = DriverConfig::for_dimension(1, 15);
        cfg.delta = delta;
        let res = fit(&ds, &cfg).unwrap();
        assert_eq!(res.trace.eps0, eps0);
        let mut prev = 0.0;
        for r in &res.trace.scales {
            assert!(r.eps >= prev, "scale {}: {} < {}", r.s, r.eps, prev);
            assert!(r.eps >= eps0 * v0 / r.vartheta * (1.0 - 1e-12));
            prev = r.eps;
        }
    }

    #[test]
    fn zero_target_is_empty_model() {
        let ds = Dataset::new(grid(20), DVector::zeros(20)).unwrap();
        let res = fit(&ds, &DriverConfig::for_dimension(1, 5)).unwrap();
        assert!(res.model.entries.is_empty());
        assert!(res.trace.gamma.is_none());
        assert_eq!(res.trace.scales.len(), 6);
        for r in &res.trace.scales {
            assert_eq!(r.mse_pre, 0.0);
            assert_eq!(r.mse_post, 0.0);
        }
    }

    #[test]
    fn single_scale0_column_is_exact() {
        let x = grid(25);
        let t = normalizing_constant(&x).unwrap();
        let y = kernel_column(&x, &[x[(10, 0)]], length_scale(t, 0));
        let ds = Dataset::new(x, y).unwrap();
        let res = fit(&ds, &DriverConfig::for_dimension(1, 6)).unwrap();
        assert_eq!(res.model.entries.len(), 1);
        let e = &res.model.entries[0];
        assert_eq!(e.s, 0);
        assert_relative_eq!(e.theta, 1.0, epsilon = 1e-10);
        assert!(res.trace.final_mse() <= 1e-20);
        assert!(res.trace.scales[1..].iter().all(|r| r.n_bwd == 0));
    }

    #[test]
    fn deterministic_traces() {
        let x = grid(60);
        let y = DVector::from_fn(60, |i, _| (9.0 * x[(i, 0)]).cos() * 0.5 + 0.5);
        let ds = Dataset::new(x, y).unwrap();
        let cfg = DriverConfig::for_dimension(1, 8);
        let a = fit(&ds, &cfg).unwrap();
        let b = fit(&ds, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn mse_budget_stops_early() {
        let x = grid(60);
        let y = DVector::from_fn(60, |i, _| (9.0 * x[(i, 0)]).cos() * 0.5 + 0.5);
        let ds = Dataset::new(x, y).unwrap();
        let mut cfg = DriverConfig::for_dimension(1, 15);
        cfg.mse_budget = Some(1e-2);
        let res = fit(&ds, &cfg).unwrap();
        assert!(res.trace.final_mse() <= 1e-2);
        assert_eq!(res.model.omega, res.trace.scales.len() - 1);
        assert!(res.trace.scales[..res.trace.scales.len() - 1]
            .iter()
            .all(|r| r.mse_post > 1e-2));
    }

    #[test]
    fn jsonl_has_stable_fields() {
        let ds = Dataset::new(grid(10), DVector::from_fn(10, |i, _| i as f64 / 9.0)).unwrap();
        let res = fit(&ds, &DriverConfig::for_dimension(1, 2)).unwrap();
        let mut buf = Vec::new();
        res.trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(read_jsonl(&text).unwrap(), res.trace.scales);
        assert!(read_jsonl("{\"s\":").is_err());
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        for key in [
            "s", "eps", "vartheta", "n_fwd", "n_bwd", "mse_pre", "mse_post", "c_cum", "rank_bound",
            "size_bound",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
