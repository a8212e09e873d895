//! Learning linear and nonlinear state equations from a single trajectory.

pub mod activation;
pub mod config;
pub mod csv;
pub mod error;
pub mod experiment;
pub mod identify;
pub mod losses;
pub mod seed;
pub mod stability;
pub mod system;
pub mod trajectory;
pub mod verify;

pub use activation::Activation;
pub use error::{Error, Result};
pub use system::{NoiseSpec, NonlinearForm, Policy, Regressor, SystemSpec};
pub use trajectory::{simulate, SubTrajectory, Trajectory};
