//! Forward-backward greedy sparse regression in a multiscale Gaussian kernel space.
//!
//! Data are fitted scale by scale. At scale `s` the kernel width is `T / 2^s`;
//! forward selection adds kernel columns centered at training points, backward
//! deletion prunes them, and the residual becomes the next scale's target.
//! The selected centers and weights form a [`MultiscaleModel`] that replaces
//! the training data for prediction.

pub mod backward;
pub mod dataset;
pub mod driver;
pub mod error;
pub mod fixtures;
pub mod forward;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod selection;

pub use backward::{backward_delete, least_important, DeletionMode};
pub use dataset::{denormalize, kfold_split, load_csv, normalize, parse_csv, Dataset, NormParams};
pub use driver::{fit, DriverConfig, FitResult, FitTrace, ScaleRecord};
pub use error::{FitError, Result};
pub use fixtures::{generate, resample_study, FixtureName, FixtureSpec};
pub use forward::{extend_inverse, forward_select, independence_quotient, select_column, ScaleBasis};
pub use model::{load_model, save_model, MultiscaleModel, SparseEntry};
pub use selection::{cross_validate, reduction_report, select_truncation, CvReport, TruncationPolicy};
