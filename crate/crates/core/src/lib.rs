//! Continuous volumetric super-resolution with a two-factor neural field.
//!
//! A low-resolution volume is fitted by a field whose features are the
//! element-wise product of coefficient grids (constant resolution) and
//! basis grids (geometric resolution schedule, read through a per-level
//! sawtooth transform), concatenated with a One-Blob encoding of the
//! coordinate and regressed to intensity by a small MLP. The fitted field is
//! then sampled on any target grid.

pub mod cli;
pub mod coords;
pub mod encode;
pub mod error;
pub mod field;
pub mod grid;
pub mod metrics;
pub mod mlp;
pub mod nifti;
pub mod optim;
pub mod phantom;
pub mod train;
pub mod tricubic;
pub mod volume;

pub use error::{Error, Result};
pub use field::{FieldConfig, TwoFactorField, Variant};
pub use metrics::MetricsReport;
pub use train::{infer_volume, train, TrainConfig, TrainOutcome};
pub use volume::Volume3D;
