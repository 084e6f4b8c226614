//! Gaussian-mixture filtering with axis-aligned transition decompositions.

pub mod decomp;
pub mod error;
pub mod evaluation;
pub mod filters;
pub mod gaussian;
pub mod model;

pub use error::{Error, Result};
pub use gaussian::{Gaussian, GaussianMixture};
pub use model::{simulate, ungm_default, ungm_model, ScalarModel, SeedRecord, StateSpaceModel, Trajectory};
