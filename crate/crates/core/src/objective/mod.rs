//! Differentiable guidance objective: a task energy plus weighted costs.

pub mod chamfer;
pub mod costs;
pub mod energy;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{RobotModel, Trajectory};
use crate::scene::SceneSdf;

pub use chamfer::{chamfer, Chamfer};
pub use costs::{collision_hinge, cost_collision, cost_joint_limits, cost_smoothness, Term};
pub use energy::{energy_goal_reach, energy_grasp_surrogate, energy_place, polygon_perimeter_points, TaskEnergy};

/// Default per-element gradient clip.
pub const DEFAULT_GRAD_CLIP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub lambda_collision: f64,
    pub lambda_smoothness: f64,
    pub lambda_limit: f64,
    pub energy_weight: f64,
    /// Collision margin, metres.
    pub epsilon_c: f64,
    /// Joint-limit margin.
    pub epsilon_l: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            lambda_collision: 1.0,
            lambda_smoothness: 0.1,
            lambda_limit: 1.0,
            energy_weight: 1.0,
            epsilon_c: 0.03,
            epsilon_l: 0.02,
        }
    }
}

impl CostWeights {
    pub fn zero() -> Self {
        Self {
            lambda_collision: 0.0,
            lambda_smoothness: 0.0,
            lambda_limit: 0.0,
            energy_weight: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_collision,
            self.lambda_smoothness,
            self.lambda_limit,
            self.energy_weight,
            self.epsilon_l,
        ];
        if all.iter().any(|v| !(*v >= 0.0)) || !(self.epsilon_c > 0.0) {
            return Err(Error::InvalidArgument("cost weights must be nonnegative and epsilon_c positive".into()));
        }
        Ok(())
    }
}

/// Value of `phi = -(e + sum lambda_i c_i)` with its per-term breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub total: f64,
    pub energy: f64,
    pub collision: f64,
    pub smoothness: f64,
    pub limit: f64,
    /// Gradient of `total`, after clipping if a clip was requested.
    pub gradient: Array2<f64>,
}

impl ObjectiveReport {
    /// `-(w_e e + sum lambda_i c_i)` recomputed from the stored terms.
    pub fn recombine(&self, w: &CostWeights) -> f64 {
        -(w.energy_weight * self.energy
            + w.lambda_collision * self.collision
            + w.lambda_smoothness * self.smoothness
            + w.lambda_limit * self.limit)
    }
}

fn check_finite(term: &'static str, t: &Term) -> Result<()> {
    if t.value.is_finite() && t.gradient.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { term })
    }
}

/// Evaluates `phi` and its gradient. Terms with zero weight are skipped.
/// With `grad_clip = Some(g)` every gradient entry is clamped to `[-g, g]`.
pub fn evaluate_objective(
    model: &RobotModel,
    sdf: &SceneSdf,
    traj: &Trajectory,
    energy: &TaskEnergy,
    w: &CostWeights,
    grad_clip: Option<f64>,
) -> Result<ObjectiveReport> {
    if traj.dof() != model.dof() {
        return Err(Error::dim(format!(
            "trajectory has {} columns, robot has {} dof",
            traj.dof(),
            model.dof()
        )));
    }
    let mut gradient = Array2::zeros(traj.steps().dim());
    let mut run = |term: &'static str, weight: f64, f: &dyn Fn() -> Term| -> Result<f64> {
        if weight == 0.0 {
            return Ok(0.0);
        }
        let t = f();
        check_finite(term, &t)?;
        gradient.scaled_add(-weight, &t.gradient);
        Ok(t.value)
    };
    let e = run("energy", w.energy_weight, &|| energy.evaluate(model, traj))?;
    let c = run("collision", w.lambda_collision, &|| cost_collision(model, sdf, traj, w.epsilon_c))?;
    let s = run("smoothness", w.lambda_smoothness, &|| cost_smoothness(traj))?;
    let l = run("limit", w.lambda_limit, &|| cost_joint_limits(model, traj, w.epsilon_l))?;
    if let Some(g) = grad_clip {
        gradient.mapv_inplace(|v| v.clamp(-g, g));
    }
    let mut report = ObjectiveReport {
        total: 0.0,
        energy: e,
        collision: c,
        smoothness: s,
        limit: l,
        gradient,
    };
    report.total = report.recombine(w);
    if !report.total.is_finite() {
        return Err(Error::NonFinite { term: "total" });
    }
    Ok(report)
}

/// Anything that can steer a sampler: `phi` and its gradient for a world-frame
/// trajectory.
pub trait GuidanceObjective: Sync {
    fn evaluate(&self, traj: &Trajectory) -> Result<ObjectiveReport>;
}

/// The full guidance objective for one planning problem.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub model: &'a RobotModel,
    pub sdf: &'a SceneSdf,
    pub energy: TaskEnergy,
    pub weights: CostWeights,
    pub grad_clip: Option<f64>,
}

impl GuidanceObjective for Objective<'_> {
    fn evaluate(&self, traj: &Trajectory) -> Result<ObjectiveReport> {
        evaluate_objective(self.model, self.sdf, traj, &self.energy, &self.weights, self.grad_clip)
    }
}
