//! Finite-basis neural time fields for 2D motion planning.
//!
//! An arrival-time field `T(q_s, q_g)` satisfying the Eikonal equation
//! `|grad T| = 1 / S` is learned over an occupancy map. The domain is split into
//! overlapping subdomains, each with its own sine-activated encoder; their embeddings
//! are blended by a smooth partition of unity and the time is a LogSumExp distance
//! between the blended embeddings of start and goal. Paths follow the negative time
//! gradient from both ends. A fast-marching solver and an RRT-Connect planner serve as
//! ground truth and baseline.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! the scalar for common use.

pub mod bench;
pub mod config2;
pub mod decomposition;
pub mod error;
pub mod field;
pub mod fmm;
pub mod gridworld;
pub mod planner;
pub mod rrt;
pub mod scalar;
pub mod siren;
pub mod trainer;

pub use config2::{Bounds, Config2};
pub use error::{Error, Result};
pub use scalar::Real;

pub type Config2f = Config2<f64>;
pub type OccupancyGrid = gridworld::OccupancyGrid<f64>;
pub type DistanceField = gridworld::DistanceField<f64>;
pub type Environment = gridworld::Environment<f64>;
pub type SpeedParams = gridworld::SpeedParams<f64>;
pub type Decomposition = decomposition::Decomposition<f64>;
pub type FieldModel = field::FieldModel<f64>;
pub type FieldModel32 = field::FieldModel<f32>;
pub type FmmGrid = fmm::FmmGrid<f64>;
pub type PathResult = planner::PathResult<f64>;
