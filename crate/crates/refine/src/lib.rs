//! Motion refinement: reprojection, prior, temporal and silhouette energies,
//! a Levenberg-Marquardt solver, the 2D-only preprocessing fits and the
//! translation-then-pose refinement schedule.

pub mod energy;
pub mod error;
pub mod fit;
pub mod lm;
pub mod problem;

pub use energy::EnergyWeights;
pub use error::{RefineError, Result};
pub use fit::{initial_fit, refine, sparse_view_fit, FitOptions, RefineOptions, RefineOutput};
pub use lm::{levenberg_marquardt, LmOptions, LmReport, LmStatus};
