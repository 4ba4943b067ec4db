//! Synthetic benchmark datasets.
//!
//! Formulas, on their standard domains:
//!
//! * Schwefel: `f(x) = 418.9829 d - sum_i x_i sin(sqrt(|x_i|))`, `x_i in [-500, 500]`.
//! * Gramacy & Lee (2012): `f(x) = sin(10 pi x) / (2x) + (x - 1)^4`, `x in [0.5, 2.5]`.
//! * Smooth sine: `f(x) = sin(2 pi x)`, `x in [0, 1]`.
//!
//! Samples lie on uniform grids including the domain endpoints; the 2-d grid
//! is `m x m` with `n = m^2`. Optional Gaussian noise has standard deviation
//! `noise_sd` times the range of the clean values, i.e. `noise_sd` is given in
//! normalized units. Every generated dataset is returned normalized.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize, Dataset, Range};
use crate::error::{FitError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureName {
    Schwefel1d,
    GramacyLeeNoisy,
    Schwefel2d,
    SineSmooth,
}

impl FixtureName {
    pub const ALL: [FixtureName; 4] = [
        FixtureName::Schwefel1d,
        FixtureName::GramacyLeeNoisy,
        FixtureName::Schwefel2d,
        FixtureName::SineSmooth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FixtureName::Schwefel1d => "schwefel1d",
            FixtureName::GramacyLeeNoisy => "gramacy_lee_noisy",
            FixtureName::Schwefel2d => "schwefel2d",
            FixtureName::SineSmooth => "sine_smooth",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            FixtureName::Schwefel2d => 2,
            _ => 1,
        }
    }

    pub fn default_n(self) -> usize {
        match self {
            FixtureName::Schwefel2d => 2500,
            _ => 200,
        }
    }

    pub fn default_noise(self) -> f64 {
        match self {
            FixtureName::GramacyLeeNoisy => 0.05,
            _ => 0.0,
        }
    }

    /// Per-dimension sampling domain.
    pub fn domain(self) -> Vec<Range> {
        let r = |min, max| Range { min, max };
        match self {
            FixtureName::Schwefel1d => vec![r(-500.0, 500.0)],
            FixtureName::Schwefel2d => vec![r(-500.0, 500.0); 2],
            FixtureName::GramacyLeeNoisy => vec![r(0.5, 2.5)],
            FixtureName::SineSmooth => vec![r(0.0, 1.0)],
        }
    }

    /// Clean function value at a point in original units.
    pub fn evaluate(self, x: &[f64]) -> f64 {
        match self {
            FixtureName::Schwefel1d | FixtureName::Schwefel2d => schwefel(x),
            FixtureName::GramacyLeeNoisy => gramacy_lee(x[0]),
            FixtureName::SineSmooth => (2.0 * std::f64::consts::PI * x[0]).sin(),
        }
    }
}

impl fmt::Display for FixtureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FixtureName {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        FixtureName::ALL
            .into_iter()
            .find(|f| f.as_str() == key)
            .ok_or_else(|| FitError::UnknownFixture(s.to_string()))
    }
}

pub fn schwefel(x: &[f64]) -> f64 {
    418.9829 * x.len() as f64 - x.iter().map(|v| v * v.abs().sqrt().sin()).sum::<f64>()
}

pub fn gramacy_lee(x: f64) -> f64 {
    (10.0 * std::f64::consts::PI * x).sin() / (2.0 * x) + (x - 1.0).powi(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub name: FixtureName,
    pub n: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl FixtureSpec {
    pub fn new(name: FixtureName, n: usize, noise_sd: f64, seed: u64) -> Self {
        Self {
            name,
            n,
            noise_sd,
            seed,
        }
    }

    /// Default size and noise for `name`.
    pub fn standard(name: FixtureName, seed: u64) -> Self {
        Self::new(name, name.default_n(), name.default_noise(), seed)
    }
}

fn linspace(r: Range, m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| r.min + (r.max - r.min) * i as f64 / (m - 1) as f64)
        .collect()
}

/// Sample locations in original units.
pub fn grid(name: FixtureName, n: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(FitError::TooFewSamples(n));
    }
    let dom = name.domain();
    match name.dim() {
        1 => Ok(DMatrix::from_column_slice(n, 1, &linspace(dom[0], n))),
        _ => {
            let m = (n as f64).sqrt().round() as usize;
            if m * m != n || m < 2 {
                return Err(FitError::InvalidParameter(format!(
                    "{name} needs a square sample count, got {n}"
                )));
            }
            let xs = linspace(dom[0], m);
            let ys = linspace(dom[1], m);
            Ok(DMatrix::from_fn(n, 2, |i, k| if k == 0 { xs[i % m] } else { ys[i / m] }))
        }
    }
}

/// Generates a normalized fixture dataset; the attached normalization maps
/// back to the function's original units.
pub fn generate(spec: &FixtureSpec) -> Result<Dataset> {
    if !(spec.noise_sd >= 0.0 && spec.noise_sd.is_finite()) {
        return Err(FitError::InvalidParameter(format!(
            "noise_sd must be >= 0, got {}",
            spec.noise_sd
        )));
    }
    let x = grid(spec.name, spec.n)?;
    let clean: Vec<f64> = (0..spec.n)
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            spec.name.evaluate(&row)
        })
        .collect();
    let mut y = DVector::from_vec(clean);
    if spec.noise_sd > 0.0 {
        let width = y.max() - y.min();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise_sd * width * z;
        }
    }
    let raw = Dataset::new(x, y)?;
    Ok(normalize(&raw).0)
}

/// `repeats` random subsets of `subset_size` distinct samples each, drawn
/// without replacement; indices within a subset are kept in ascending order.
pub fn resample_study(ds: &Dataset, subset_size: usize, repeats: usize, seed: u64) -> Result<Vec<Dataset>> {
    let n = ds.n();
    if subset_size > n {
        return Err(FitError::SubsetTooLarge {
            subset: subset_size,
            n,
        });
    }
    if subset_size < 2 {
        return Err(FitError::TooFewSamples(subset_size));
    }
    Ok(resample_indices(n, subset_size, repeats, seed)
        .iter()
        .map(|idx| ds.subset(idx))
        .collect())
}

pub fn resample_indices(n: usize, subset_size: usize, repeats: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..repeats)
        .map(|_| {
            let mut idx = sample(&mut rng, n, subset_size).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn standard_sizes() {
        let a = generate(&FixtureSpec::standard(FixtureName::Schwefel1d, 0)).unwrap();
        assert_eq!((a.n(), a.d()), (200, 1));
        assert!(a.observations.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.locations.iter().all(|v| (0.0..=1.0).contains(v)));
        let b = generate(&FixtureSpec::standard(FixtureName::Schwefel2d, 0)).unwrap();
        assert_eq!((b.n(), b.d()), (2500, 2));
    }

    #[test]
    fn formulas() {
        assert!(schwefel(&[420.9687]).abs() < 1e-4);
        assert!(schwefel(&[420.9687, 420.9687]).abs() < 1e-4);
        assert!((gramacy_lee(1.0) - 0.0).abs() < 1e-12);
        assert!((gramacy_lee(0.5) - (0.0625 + (5.0 * std::f64::consts::PI).sin())).abs() < 1e-12);
    }

    #[test]
    fn noiseless_ignores_seed() {
        let a = generate(&FixtureSpec::new(FixtureName::GramacyLeeNoisy, 200, 0.0, 1)).unwrap();
        let b = generate(&FixtureSpec::new(FixtureName::GramacyLeeNoisy, 200, 0.0, 2)).unwrap();
        assert_eq!(a.observations, b.observations);
        let c = generate(&FixtureSpec::new(FixtureName::GramacyLeeNoisy, 200, 0.05, 1)).unwrap();
        let d = generate(&FixtureSpec::new(FixtureName::GramacyLeeNoisy, 200, 0.05, 1)).unwrap();
        let e = generate(&FixtureSpec::new(FixtureName::GramacyLeeNoisy, 200, 0.05, 2)).unwrap();
        assert_eq!(c.observations, d.observations);
        assert_ne!(c.observations, e.observations);
    }

    #[test]
    fn names_round_trip() {
        for f in FixtureName::ALL {
            assert_eq!(f.as_str().parse::<FixtureName>().unwrap(), f);
        }
        assert_eq!("gramacy-lee-noisy".parse::<FixtureName>().unwrap(), FixtureName::GramacyLeeNoisy);
        assert!(matches!("rosenbrock".parse::<FixtureName>(), Err(FitError::UnknownFixture(_))));
    }

    #[test]
    fn non_square_2d_rejected() {
        assert!(generate(&FixtureSpec::new(FixtureName::Schwefel2d, 50, 0.0, 0)).is_err());
    }

    #[test]
    fn resampling() {
        let ds = generate(&FixtureSpec::standard(FixtureName::Schwefel1d, 0)).unwrap();
        let subsets = resample_indices(200, 50, 100, 9);
        assert_eq!(subsets.len(), 100);
        for s in &subsets {
            assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), 50);
        }
        assert_eq!(subsets, resample_indices(200, 50, 100, 9));
        let full = resample_study(&ds, 200, 3, 1).unwrap();
        assert!(full.iter().all(|d| d.locations == ds.locations));
        assert!(matches!(
            resample_study(&ds, 201, 1, 0),
            Err(FitError::SubsetTooLarge { subset: 201, n: 200 })
        ));
    }
}
