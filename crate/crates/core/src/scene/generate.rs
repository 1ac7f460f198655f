//! Procedural room generation with a guaranteed-feasible task.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_sdf, OccupancyGrid, SceneSdf};
use crate::error::{Error, Result};
use crate::kinematics::{rotate, Config, Pose2, RobotModel};
use crate::task::{TaskSpec, TaskType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub room_size: f64,
    pub resolution: f64,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    /// Side length (rectangles) or diameter (discs) range, metres.
    pub obstacle_min_size: f64,
    pub obstacle_max_size: f64,
    pub task_type: TaskType,
    pub max_attempts: usize,
    /// Straight-line base travel between start and goal configurations.
    pub min_travel: f64,
    pub max_travel: f64,
    /// Minimum obstacle distance of every robot surface point at start and goal.
    pub clearance: f64,
    /// Arm joints of sampled configurations stay within this magnitude.
    pub arm_range: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            room_size: 6.0,
            resolution: 0.05,
            min_obstacles: 3,
            max_obstacles: 8,
            obstacle_min_size: 0.3,
            obstacle_max_size: 1.2,
            task_type: TaskType::GoalReach,
            max_attempts: 100,
            min_travel: 0.5,
            max_travel: 2.5,
            clearance: 0.06,
            arm_range: 2.5,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.room_size > 0.0
            && self.resolution > 0.0
            && self.room_size / self.resolution >= 4.0
            && self.min_obstacles <= self.max_obstacles
            && self.obstacle_min_size > 0.0
            && self.obstacle_min_size <= self.obstacle_max_size
            && self.max_attempts > 0
            && self.min_travel >= 0.0
            && self.min_travel <= self.max_travel
            && self.clearance >= 0.0
            && self.arm_range > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid generator parameters".into()))
        }
    }
}

/// Smallest signed distance over the robot's surface samples at `q`.
pub fn clearance(model: &RobotModel, sdf: &SceneSdf, q: &Config) -> f64 {
    model
        .fk_surface_points(q)
        .into_iter()
        .map(|p| sdf.value(p))
        .fold(f64::INFINITY, f64::min)
}

/// 4-connected BFS over cells where the base disc fits.
pub fn base_connected(sdf: &SceneSdf, base_radius: f64, from: [f64; 2], to: [f64; 2]) -> bool {
    let g = &sdf.grid;
    let (Some(a), Some(b)) = (g.cell_of(from), g.cell_of(to)) else {
        return false;
    };
    let free = |i: usize, j: usize| sdf.cell_distance(i, j) >= base_radius;
    if !free(a.0, a.1) || !free(b.0, b.1) {
        return false;
    }
    let mut seen = vec![false; g.width * g.height];
    let mut queue = VecDeque::from([a]);
    seen[g.index(a.0, a.1)] = true;
    while let Some((i, j)) = queue.pop_front() {
        if (i, j) == b {
            return true;
        }
        let neighbours = [
            (i.wrapping_sub(1), j),
            (i + 1, j),
            (i, j.wrapping_sub(1)),
            (i, j + 1),
        ];
        for (ni, nj) in neighbours {
            if ni < g.width && nj < g.height && !seen[g.index(ni, nj)] && free(ni, nj) {
                seen[g.index(ni, nj)] = true;
                queue.push_back((ni, nj));
            }
        }
    }
    false
}

fn random_room(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<(OccupancyGrid, usize)> {
    let n = (spec.room_size / spec.resolution).round() as usize;
    let mut grid = OccupancyGrid::new(spec.resolution, [0.0, 0.0], n, n)?;
    for k in 0..n {
        grid.set(k, 0, true);
        grid.set(k, n - 1, true);
        grid.set(0, k, true);
        grid.set(n - 1, k, true);
    }
    let count = rng.random_range(spec.min_obstacles..=spec.max_obstacles);
    for _ in 0..count {
        let c = [
            rng.random_range(0.0..spec.room_size),
            rng.random_range(0.0..spec.room_size),
        ];
        let disc = rng.random_bool(0.4);
        let a = rng.random_range(spec.obstacle_min_size..=spec.obstacle_max_size);
        let b = rng.random_range(spec.obstacle_min_size..=spec.obstacle_max_size);
        for j in 0..n {
            for i in 0..n {
                let p = grid.cell_center(i, j);
                let inside = if disc {
                    (p[0] - c[0]).hypot(p[1] - c[1]) <= 0.5 * a
                } else {
                    (p[0] - c[0]).abs() <= 0.5 * a && (p[1] - c[1]).abs() <= 0.5 * b
                };
                if inside {
                    grid.set(i, j, true);
                }
            }
        }
    }
    Ok((grid, count))
}

fn random_arm(model: &RobotModel, spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..model.num_links())
        .map(|_| rng.random_range(-spec.arm_range..=spec.arm_range))
        .collect()
}

fn sample_start(model: &RobotModel, sdf: &SceneSdf, spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Option<Config> {
    for _ in 0..200 {
        let mut q = vec![
            rng.random_range(0.0..spec.room_size),
            rng.random_range(0.0..spec.room_size),
            rng.random_range(-PI..PI),
        ];
        q.extend(random_arm(model, spec, rng));
        let q = Config(q);
        if clearance(model, sdf, &q) >= spec.clearance {
            return Some(q);
        }
    }
    None
}

/// Samples a collision-free goal configuration near `start` whose base is
/// reachable from the start base.
fn sample_goal_config(
    model: &RobotModel,
    sdf: &SceneSdf,
    start: &Config,
    spec: &GeneratorSpec,
    rng: &mut ChaCha8Rng,
) -> Option<Config> {
    for _ in 0..200 {
        let dist = rng.random_range(spec.min_travel..=spec.max_travel);
        let dir = rng.random_range(-PI..PI);
        let mut q = vec![
            start.0[0] + dist * dir.cos(),
            start.0[1] + dist * dir.sin(),
            start.0[2] + rng.random_range(-PI..PI),
        ];
        q.extend(random_arm(model, spec, rng));
        let q = Config(q);
        if clearance(model, sdf, &q) < spec.clearance {
            continue;
        }
        if base_connected(sdf, model.base_radius, [start.0[0], start.0[1]], [q.0[0], q.0[1]]) {
            return Some(q);
        }
    }
    None
}

/// Samples one task in an existing scene. Returns the task together with the
/// witness goal configuration that proves it feasible.
pub fn sample_task(
    model: &RobotModel,
    sdf: &SceneSdf,
    spec: &GeneratorSpec,
    rng: &mut ChaCha8Rng,
) -> Option<(TaskSpec, Config)> {
    let start = sample_start(model, sdf, spec, rng)?;
    let goal_q = sample_goal_config(model, sdf, &start, spec, rng)?;
    let ee = model.fk_end_effector(&goal_q);
    let task = match spec.task_type {
        TaskType::GoalReach => TaskSpec::goal_reach(start, ee),
        TaskType::Place => {
            let mut t = TaskSpec::place(start, Vec::new());
            let obj = ee.compose(&t.grasp_offset_or_default());
            let pts: Vec<_> = t
                .object_points_or_default()
                .into_iter()
                .map(|p| obj.transform_point(p))
                .collect();
            if pts.iter().any(|&p| sdf.value(p) < spec.clearance) {
                return None;
            }
            let b = crate::task::bbox(&t.object_points_or_default());
            let corners = [[b[0], b[1]], [b[2], b[1]], [b[2], b[3]], [b[0], b[3]]];
            t.target_area_polygon = Some(corners.iter().map(|&c| obj.transform_point(c)).collect());
            t
        }
        TaskType::Grasp => {
            let centre = ee.transform_point([0.06, 0.0]);
            let candidates = (0..4)
                .map(|k| {
                    let h = ee.heading + k as f64 * PI / 2.0;
                    let off = rotate(h, [0.06, 0.0]);
                    Pose2::new(centre[0] - off[0], centre[1] - off[1], h)
                })
                .collect();
            TaskSpec::grasp(start, candidates)
        }
    };
    Some((task, goal_q))
}

/// Generates a room with 3-8 obstacles (by default) plus one feasible task.
/// Pure function of `(seed, spec)`.
pub fn generate_scene(model: &RobotModel, seed: u64, spec: &GeneratorSpec) -> Result<(OccupancyGrid, TaskSpec)> {
    generate_scene_with_witness(model, seed, spec).map(|g| (g.grid, g.task))
}

/// Full output of the generator.
#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub grid: OccupancyGrid,
    pub task: TaskSpec,
    /// Goal configuration used to construct the task annotation.
    pub goal_config: Config,
    /// Obstacles drawn, excluding the walls (they may overlap).
    pub obstacle_count: usize,
}

pub fn generate_scene_with_witness(model: &RobotModel, seed: u64, spec: &GeneratorSpec) -> Result<GeneratedScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..spec.max_attempts {
        let (grid, obstacle_count) = random_room(spec, &mut rng)?;
        let sdf = build_sdf(&grid)?;
        if let Some((task, goal_config)) = sample_task(model, &sdf, spec, &mut rng) {
            return Ok(GeneratedScene {
                grid,
                task,
                goal_config,
                obstacle_count,
            });
        }
    }
    Err(Error::GenerationFailed {
        attempts: spec.max_attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Depth-first flood fill, independent of the BFS used by the generator.
    fn flood_connected(sdf: &SceneSdf, r: f64, a: [f64; 2], b: [f64; 2]) -> bool {
        let g = &sdf.grid;
        let ca = g.cell_of(a).unwrap();
        let cb = g.cell_of(b).unwrap();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![ca];
        while let Some((i, j)) = stack.pop() {
            if i >= g.width || j >= g.height || sdf.cell_distance(i, j) < r || !seen.insert((i, j)) {
                continue;
            }
            if (i, j) == cb {
                return true;
            }
            if i > 0 {
                stack.push((i - 1, j));
            }
            if j > 0 {
                stack.push((i, j - 1));
            }
            stack.push((i + 1, j));
            stack.push((i, j + 1));
        }
        false
    }

    #[test]
    fn deterministic_in_seed() {
        let m = RobotModel::default();
        let spec = GeneratorSpec::default();
        let (g1, t1) = generate_scene(&m, 42, &spec).unwrap();
        let (g2, t2) = generate_scene(&m, 42, &spec).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn generated_scenes_are_connected() {
        let m = RobotModel::default();
        for task_type in [TaskType::GoalReach, TaskType::Place, TaskType::Grasp] {
            let spec = GeneratorSpec {
                task_type,
                ..Default::default()
            };
            for seed in 0..6 {
                let GeneratedScene {
                    grid,
                    task,
                    goal_config: goal_q,
                    obstacle_count,
                } = generate_scene_with_witness(&m, seed, &spec).unwrap();
                assert!((3..=8).contains(&obstacle_count));
                assert_eq!(grid.width, 120);
                let sdf = build_sdf(&grid).unwrap();
                task.validate(&m).unwrap();
                assert!(clearance(&m, &sdf, &task.start) >= spec.clearance);
                assert!(clearance(&m, &sdf, &goal_q) >= spec.clearance);
                let s = &task.start.0;
                assert!(flood_connected(&sdf, m.base_radius, [s[0], s[1]], [goal_q.0[0], goal_q.0[1]]));
            }
        }
    }

    #[test]
    fn sampled_witness_is_reachable() {
        let m = RobotModel::default();
        let spec = GeneratorSpec::default();
        let (grid, _) = generate_scene(&m, 3, &spec).unwrap();
        let sdf = build_sdf(&grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut found = 0;
        for _ in 0..10 {
            if let Some((task, goal_q)) = sample_task(&m, &sdf, &spec, &mut rng) {
                let s = &task.start.0;
                assert!(flood_connected(&sdf, m.base_radius, [s[0], s[1]], [goal_q.0[0], goal_q.0[1]]));
                let ee = m.fk_end_effector(&goal_q);
                assert_eq!(ee, task.goal_pose.unwrap());
                found += 1;
            }
        }
        assert!(found > 5);
    }

    #[test]
    fn impossible_spec_fails() {
        let m = RobotModel::default();
        let spec = GeneratorSpec {
            obstacle_min_size: 20.0,
            obstacle_max_size: 20.0,
            max_attempts: 5,
            ..Default::default()
        };
        assert!(matches!(
            generate_scene(&m, 1, &spec),
            Err(Error::GenerationFailed { attempts: 5 })
        ));
    }
}
