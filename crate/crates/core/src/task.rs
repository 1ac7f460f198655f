//! Task definitions shared by the scene files, the objective and the scorer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Config, Point2, Pose2, RobotModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    GoalReach,
    Place,
    Grasp,
}

impl TaskType {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskType::GoalReach => "goal_reach",
            TaskType::Place => "place",
            TaskType::Grasp => "grasp",
        }
    }
}

impl std::str::FromStr for TaskType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "goal_reach" => Ok(TaskType::GoalReach),
            "place" => Ok(TaskType::Place),
            "grasp" => Ok(TaskType::Grasp),
            other => Err(Error::InvalidArgument(format!("unknown task type `{other}`"))),
        }
    }
}

/// Footprint of the carried object in its own frame (a 16 cm square).
pub fn default_object_points() -> Vec<Point2> {
    let mut pts = Vec::new();
    let half = 0.08;
    for i in 0..4 {
        let s = -half + 2.0 * half * i as f64 / 3.0;
        pts.push([s, -half]);
        pts.push([s, half]);
    }
    pts.push([-half, -half / 3.0]);
    pts.push([-half, half / 3.0]);
    pts.push([half, -half / 3.0]);
    pts.push([half, half / 3.0]);
    pts
}

/// Object frame relative to the end-effector frame while carried.
pub fn default_grasp_offset() -> Pose2 {
    Pose2::new(0.1, 0.0, 0.0)
}

/// A planning problem: where the robot starts and what it must achieve.
///
/// Serialized verbatim as the `annotations` block of a scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub start: Config,
    pub task_type: TaskType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_pose: Option<Pose2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_area_polygon: Option<Vec<Point2>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasp_candidates: Option<Vec<Pose2>>,
    /// Placement-surface points of the carried object, object frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_points: Option<Vec<Point2>>,
    /// Object pose in the end-effector frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasp_offset: Option<Pose2>,
}

impl TaskSpec {
    pub fn goal_reach(start: Config, goal: Pose2) -> Self {
        Self {
            start,
            task_type: TaskType::GoalReach,
            goal_pose: Some(goal),
            target_area_polygon: None,
            grasp_candidates: None,
            object_points: None,
            grasp_offset: None,
        }
    }

    pub fn place(start: Config, target_area: Vec<Point2>) -> Self {
        Self {
            start,
            task_type: TaskType::Place,
            goal_pose: None,
            target_area_polygon: Some(target_area),
            grasp_candidates: None,
            object_points: Some(default_object_points()),
            grasp_offset: Some(default_grasp_offset()),
        }
    }

    pub fn grasp(start: Config, candidates: Vec<Pose2>) -> Self {
        Self {
            start,
            task_type: TaskType::Grasp,
            goal_pose: None,
            target_area_polygon: None,
            grasp_candidates: Some(candidates),
            object_points: None,
            grasp_offset: None,
        }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        if self.start.len() != model.dof() {
            return Err(Error::dim(format!(
                "task start has {} entries, robot has {} dof",
                self.start.len(),
                model.dof()
            )));
        }
        if !self.start.is_finite() {
            return Err(Error::InvalidArgument("task start is not finite".into()));
        }
        let ok = match self.task_type {
            TaskType::GoalReach => self.goal_pose.is_some(),
            TaskType::Place => self
                .target_area_polygon
                .as_ref()
                .is_some_and(|p| p.len() >= 3),
            TaskType::Grasp => self.grasp_candidates.as_ref().is_some_and(|c| !c.is_empty()),
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "{} task is missing its payload",
                self.task_type.as_str()
            )));
        }
        Ok(())
    }

    pub fn object_points_or_default(&self) -> Vec<Point2> {
        self.object_points.clone().unwrap_or_else(default_object_points)
    }

    pub fn grasp_offset_or_default(&self) -> Pose2 {
        self.grasp_offset.unwrap_or_else(default_grasp_offset)
    }

    /// Goal point cloud for goal reaching: the gripper rendered at the goal.
    pub fn goal_points(&self, model: &RobotModel) -> Option<Vec<Point2>> {
        self.goal_pose.map(|g| model.gripper_at(&g))
    }
}

/// Even-odd rule point-in-polygon test.
pub fn point_in_polygon(p: Point2, poly: &[Point2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0];
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Axis-aligned bounding box `[min_x, min_y, max_x, max_y]`.
pub fn bbox(points: &[Point2]) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in points {
        b[0] = b[0].min(p[0]);
        b[1] = b[1].min(p[1]);
        b[2] = b[2].max(p[0]);
        b[3] = b[3].max(p[1]);
    }
    b
}
