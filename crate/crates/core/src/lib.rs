//! Simulation-in-the-loop refinement of hand-object demonstrations.
//!
//! A demonstration that looks right but does not survive physics replay is
//! refined by optimizing only the hand's low-dimensional control trajectory
//! with CMA-ES. The object's motion is whatever the contact simulation makes
//! of it, and the recovered contacts are exported alongside the trajectory.

pub mod cmaes;
pub mod config;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod objective;
pub mod refiner;
pub mod scenario;
pub mod sim;
pub mod spline;
pub mod synergy;

pub use error::{Error, Result};
pub use geometry::{Pose, Rotation, Twist, Vec3};
pub use spline::KeyframeTrack;
pub use synergy::{HandControl, SynergyBasis};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
