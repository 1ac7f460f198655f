//! Scene point clouds used to condition the denoiser.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SceneSdf;
use crate::kinematics::{Point2, RobotModel};
use crate::task::{bbox, point_in_polygon, TaskSpec, TaskType};

/// Stand-in for a missing obstacle boundary, far outside any room.
pub const SENTINEL_POINT: Point2 = [50.0, 50.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    Scene,
    TargetObject,
    TargetArea,
    Goal,
}

impl PointClass {
    pub const COUNT: usize = 4;

    pub fn index(&self) -> usize {
        match self {
            PointClass::Scene => 0,
            PointClass::TargetObject => 1,
            PointClass::TargetArea => 2,
            PointClass::Goal => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePointCounts {
    pub scene: usize,
    pub task: usize,
}

impl Default for ScenePointCounts {
    fn default() -> Self {
        Self { scene: 512, task: 64 }
    }
}

/// Labelled points expressed in the robot's initial base frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePoints {
    pub points: Vec<Point2>,
    pub labels: Vec<PointClass>,
    /// Set when the scene had no obstacle boundary and sentinel points were used.
    pub padded: bool,
}

impl ScenePoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Occupied cells with at least one free 4-neighbour.
pub fn boundary_cells(sdf: &SceneSdf) -> Vec<(usize, usize)> {
    let g = &sdf.grid;
    let mut out = Vec::new();
    for j in 0..g.height {
        for i in 0..g.width {
            if !g.occupied(i, j) {
                continue;
            }
            let free_neighbour = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|&(di, dj)| {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                ni >= 0
                    && nj >= 0
                    && (ni as usize) < g.width
                    && (nj as usize) < g.height
                    && !g.occupied(ni as usize, nj as usize)
            });
            if free_neighbour {
                out.push((i, j));
            }
        }
    }
    out
}

fn task_points_world(model: &RobotModel, task: &TaskSpec, n: usize, rng: &mut ChaCha8Rng) -> (Vec<Point2>, PointClass) {
    match task.task_type {
        TaskType::GoalReach => {
            let src = task.goal_points(model).unwrap_or_default();
            ((0..n).map(|k| src[k % src.len()]).collect(), PointClass::Goal)
        }
        TaskType::Place => {
            let poly = task.target_area_polygon.clone().unwrap_or_default();
            let b = bbox(&poly);
            let mut pts = Vec::with_capacity(n);
            let mut tries = 0;
            while pts.len() < n {
                let p = [rng.random_range(b[0]..=b[2]), rng.random_range(b[1]..=b[3])];
                tries += 1;
                // Degenerate polygons fall back to their vertices.
                if point_in_polygon(p, &poly) || tries > 100 * n {
                    pts.push(if tries > 100 * n { poly[pts.len() % poly.len()] } else { p });
                }
            }
            (pts, PointClass::TargetArea)
        }
        TaskType::Grasp => {
            let src: Vec<Point2> = task
                .grasp_candidates
                .as_deref()
                .unwrap_or_default()
                .iter()
                .map(|c| c.position)
                .collect();
            ((0..n).map(|k| src[k % src.len()]).collect(), PointClass::TargetObject)
        }
    }
}

/// Samples obstacle-boundary and task points, expressed in the frame of the
/// task's start base pose. Deterministic in `seed`.
pub fn sample_scene_points(
    model: &RobotModel,
    sdf: &SceneSdf,
    task: &TaskSpec,
    counts: ScenePointCounts,
    seed: u64,
) -> ScenePoints {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = task.start.base_pose();
    let cells = boundary_cells(sdf);
    let mut points = Vec::with_capacity(counts.scene + counts.task);
    let mut labels = Vec::with_capacity(counts.scene + counts.task);
    let padded = cells.is_empty();
    if padded {
        points.extend(std::iter::repeat_n(SENTINEL_POINT, counts.scene));
    } else if cells.len() >= counts.scene {
        let mut picked = index::sample(&mut rng, cells.len(), counts.scene).into_vec();
        picked.sort_unstable();
        for k in picked {
            let (i, j) = cells[k];
            points.push(base.inverse_transform_point(sdf.grid.cell_center(i, j)));
        }
    } else {
        for k in 0..counts.scene {
            let (i, j) = if k < cells.len() {
                cells[k]
            } else {
                cells[rng.random_range(0..cells.len())]
            };
            points.push(base.inverse_transform_point(sdf.grid.cell_center(i, j)));
        }
    }
    labels.extend(std::iter::repeat_n(PointClass::Scene, counts.scene));

    let (task_pts, class) = task_points_world(model, task, counts.task, &mut rng);
    for p in task_pts {
        points.push(base.inverse_transform_point(p));
        labels.push(class);
    }
    ScenePoints {
        points,
        labels,
        padded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Config, Pose2};
    use crate::scene::{build_sdf, OccupancyGrid};

    fn scene() -> SceneSdf {
        let mut g = OccupancyGrid::new(0.05, [0.0, 0.0], 60, 60).unwrap();
        for j in 20..30 {
            for i in 25..40 {
                g.set(i, j, true);
            }
        }
        build_sdf(&g).unwrap()
    }

    fn task() -> TaskSpec {
        TaskSpec::goal_reach(
            Config(vec![1.0, 0.5, 0.7, 0.0, 0.0, 0.0]),
            Pose2::new(2.0, 2.5, 0.3),
        )
    }

    #[test]
    fn deterministic_for_seed() {
        let (m, s, t) = (RobotModel::default(), scene(), task());
        let a = sample_scene_points(&m, &s, &t, ScenePointCounts::default(), 9);
        let b = sample_scene_points(&m, &s, &t, ScenePointCounts::default(), 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 576);
    }

    #[test]
    fn boundary_points_lie_on_zero_crossing() {
        let (m, s, t) = (RobotModel::default(), scene(), task());
        let pts = sample_scene_points(&m, &s, &t, ScenePointCounts { scene: 40, task: 8 }, 1);
        let base = t.start.base_pose();
        for (p, l) in pts.points.iter().zip(&pts.labels) {
            if *l == PointClass::Scene {
                let w = base.transform_point(*p);
                assert!(s.value(w).abs() < s.grid.resolution);
            }
        }
    }

    #[test]
    fn frame_change() {
        let (m, s) = (RobotModel::default(), scene());
        let t = task();
        let pts = sample_scene_points(&m, &s, &t, ScenePointCounts { scene: 4, task: 5 }, 2);
        let goal = m.gripper_at(&t.goal_pose.unwrap());
        let (x0, y0, th) = (1.0, 0.5, 0.7f64);
        for k in 0..5 {
            let w = goal[k % goal.len()];
            let dx = w[0] - x0;
            let dy = w[1] - y0;
            let expect = [th.cos() * dx + th.sin() * dy, -th.sin() * dx + th.cos() * dy];
            let got = pts.points[4 + k];
            assert!((got[0] - expect[0]).abs() < 1e-12 && (got[1] - expect[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_scene_is_padded() {
        let g = OccupancyGrid::new(0.05, [0.0, 0.0], 10, 10).unwrap();
        let sdf = build_sdf(&g).unwrap();
        let pts = sample_scene_points(&RobotModel::default(), &sdf, &task(), ScenePointCounts::default(), 0);
        assert!(pts.padded);
        assert_eq!(pts.points[0], SENTINEL_POINT);
    }
}
