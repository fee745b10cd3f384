//! Distributed robust Kalman prediction over sensor networks.
//!
//! Each node of a sensor network runs a robust predictor that is optimal for
//! the least favorable model inside a relative entropy ball around the nominal
//! linear state space model, then fuses the intermediate predictions of its
//! neighbors by a convex combination. The crate also synthesizes the least
//! favorable model itself and evaluates the exact mean square deviation of
//! any filter bank under it.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to [`Real`].

pub mod distributed;
pub mod error;
pub mod experiment;
pub mod least_favorable;
pub mod linalg;
pub mod model;
pub mod performance;
pub mod robust;
pub mod scalar;
pub mod scenario;
pub mod simulate;

pub use error::{Error, Result};
pub use experiment::{run_analysis, run_analysis_converged, Analysis, AnalysisConfig, Family, Topology, Variant};
pub use least_favorable::{LeastFavorableModel, LfParameters};
pub use model::{GlobalModel, LocalModel, NodeModel, SensorNetwork, WeightRule};
pub use robust::{BisectionOptions, Tolerance};
pub use scalar::Scalar;

/// Default scalar type.
pub type Real = f64;

pub type Matrix = nalgebra::DMatrix<Real>;
pub type Vector = nalgebra::DVector<Real>;
pub type Model = GlobalModel<Real>;
pub type Local = LocalModel<Real>;
pub type Weights = model::DiffusionWeights<Real>;
pub type LfModel = LeastFavorableModel<Real>;
pub type Trace = performance::PerformanceTrace<Real>;
pub type Projectile = scenario::ProjectileScenario<Real>;
