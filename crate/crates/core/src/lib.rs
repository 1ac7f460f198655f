//! Diffusion-based trajectory optimization for a planar mobile manipulator.

pub mod diffusion;
pub mod error;
pub mod eval;
pub mod expert;
pub mod kinematics;
pub mod objective;
pub mod sampler;
pub mod scene;
pub mod task;

pub use error::{Error, Result};
pub use kinematics::{Config, Pose2, RobotModel, Trajectory};
pub use objective::{evaluate_objective, CostWeights, GuidanceObjective, Objective, ObjectiveReport, TaskEnergy};
pub use scene::{build_sdf, OccupancyGrid, SceneSdf, SdfSample};
pub use task::{TaskSpec, TaskType};
