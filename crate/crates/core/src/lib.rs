//! Dynamically iterated nonlinear Kalman filtering.
//!
//! Each time step linearizes the transition about a one-step smoothed density
//! and the measurement about the posterior, iterating until the posterior
//! stops changing. The classical EKF/UKF and their measurement-only iterated
//! versions are provided as restrictions of the same loop, and a line-searched
//! Gauss-Newton variant guards the iteration against divergence.

pub mod bench;
pub mod damped;
pub mod dif;
pub mod error;
pub mod gaussian;
pub mod linearization;
pub mod models;
pub mod smoother;

pub use damped::{damped_dif_step, DampedTrace, JointIterate, LineSearchConfig, LossWeights};
pub use dif::{dif_step, run_filter, IterationConfig, LagOneBelief, StepTrace, Variant};
pub use error::{FilterError, Result};
pub use gaussian::{kl_divergence, weighted_norm_sq, GaussianDensity};
pub use linearization::{AffineApproximation, Linearization, UnscentedConfig};
pub use models::{DifferentiableMap, StateSpaceModel};
