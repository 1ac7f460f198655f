//! Task energies, all evaluated at the final configuration of a trajectory.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::chamfer::chamfer;
use super::costs::Term;
use crate::kinematics::{wrap_angle, Point2, Pose2, RobotModel, Trajectory};
use crate::task::{TaskSpec, TaskType};

pub const DEFAULT_GRASP_TEMPERATURE: f64 = 20.0;
pub const DEFAULT_GRASP_ANGLE_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskEnergy {
    GoalReach {
        goal_points: Vec<Point2>,
    },
    Place {
        /// Placement-surface points, object frame.
        object_points: Vec<Point2>,
        target_points: Vec<Point2>,
        /// Object pose in the end-effector frame.
        grasp_offset: Pose2,
    },
    GraspSurrogate {
        candidates: Vec<Pose2>,
        temperature: f64,
        angle_weight: f64,
    },
}

/// `n` points evenly spaced by arc length along the closed polygon, starting
/// at its first vertex.
pub fn polygon_perimeter_points(poly: &[Point2], n: usize) -> Vec<Point2> {
    let m = poly.len();
    let edge = |k: usize| (poly[k], poly[(k + 1) % m]);
    let lens: Vec<f64> = (0..m)
        .map(|k| {
            let (a, b) = edge(k);
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .collect();
    let total: f64 = lens.iter().sum();
    let mut out = Vec::with_capacity(n);
    let (mut k, mut start) = (0usize, 0.0);
    for i in 0..n {
        let s = total * i as f64 / n as f64;
        while k + 1 < m && s > start + lens[k] {
            start += lens[k];
            k += 1;
        }
        let (a, b) = edge(k);
        let t = if lens[k] > 0.0 { ((s - start) / lens[k]).clamp(0.0, 1.0) } else { 0.0 };
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}

impl TaskEnergy {
    /// Builds the energy for a task. Place targets are the polygon perimeter
    /// resampled to as many points as the object carries.
    pub fn from_task(model: &RobotModel, task: &TaskSpec) -> Self {
        match task.task_type {
            TaskType::GoalReach => TaskEnergy::GoalReach {
                goal_points: task.goal_points(model).expect("goal_reach task without goal_pose"),
            },
            TaskType::Place => {
                let object_points = task.object_points_or_default();
                let poly = task
                    .target_area_polygon
                    .as_deref()
                    .expect("place task without target area");
                TaskEnergy::Place {
                    target_points: polygon_perimeter_points(poly, object_points.len()),
                    object_points,
                    grasp_offset: task.grasp_offset_or_default(),
                }
            }
            TaskType::Grasp => TaskEnergy::GraspSurrogate {
                candidates: task.grasp_candidates.clone().expect("grasp task without candidates"),
                temperature: DEFAULT_GRASP_TEMPERATURE,
                angle_weight: DEFAULT_GRASP_ANGLE_WEIGHT,
            },
        }
    }

    /// Value and gradient; only the last row of the gradient is nonzero.
    pub fn evaluate(&self, model: &RobotModel, traj: &Trajectory) -> Term {
        match self {
            TaskEnergy::GoalReach { goal_points } => energy_goal_reach(model, traj, goal_points),
            TaskEnergy::Place {
                object_points,
                target_points,
                grasp_offset,
            } => energy_place(model, traj, object_points, target_points, grasp_offset),
            TaskEnergy::GraspSurrogate {
                candidates,
                temperature,
                angle_weight,
            } => energy_grasp_surrogate(model, traj, candidates, *temperature, *angle_weight),
        }
    }
}

/// Chamfer between end-effector-attached `local` points and a world `target`.
fn attached_chamfer(model: &RobotModel, traj: &Trajectory, frame_offset: &Pose2, local: &[Point2], target: &[Point2]) -> Term {
    let (h_len, d) = traj.steps().dim();
    let last = traj.steps().row(h_len - 1);
    let chain = model.chain(last.as_slice().expect("contiguous"));
    let frame = chain.ee_pose().compose(frame_offset);
    let world: Vec<Point2> = local.iter().map(|&p| frame.transform_point(p)).collect();
    let c = chamfer(&world, target);
    let mut gradient = Array2::zeros((h_len, d));
    let mut g = gradient.row_mut(h_len - 1);
    let g = g.as_slice_mut().expect("contiguous");
    for (p, v) in world.iter().zip(&c.grad_p) {
        chain.accumulate_point_gradient(model.num_links(), *p, *v, 1.0, g);
    }
    Term { value: c.value, gradient }
}

pub fn energy_goal_reach(model: &RobotModel, traj: &Trajectory, goal_points: &[Point2]) -> Term {
    let identity = Pose2::new(0.0, 0.0, 0.0);
    attached_chamfer(model, traj, &identity, &model.gripper_template, goal_points)
}

pub fn energy_place(
    model: &RobotModel,
    traj: &Trajectory,
    object_points: &[Point2],
    target_points: &[Point2],
    grasp_offset: &Pose2,
) -> Term {
    attached_chamfer(model, traj, grasp_offset, object_points, target_points)
}

/// Smooth minimum over candidates of position plus weighted heading error.
pub fn energy_grasp_surrogate(
    model: &RobotModel,
    traj: &Trajectory,
    candidates: &[Pose2],
    temperature: f64,
    angle_weight: f64,
) -> Term {
    assert!(!candidates.is_empty(), "grasp energy needs at least one candidate");
    assert!(temperature > 0.0, "grasp temperature must be positive");
    let (h_len, d) = traj.steps().dim();
    let last = traj.steps().row(h_len - 1);
    let chain = model.chain(last.as_slice().expect("contiguous"));
    let ee = chain.ee_pose();
    let terms: Vec<(f64, f64, f64, f64)> = candidates
        .iter()
        .map(|c| {
            let dx = ee.position[0] - c.position[0];
            let dy = ee.position[1] - c.position[1];
            let da = wrap_angle(ee.heading - c.heading);
            (dx * dx + dy * dy + angle_weight * da * da, dx, dy, da)
        })
        .collect();
    let dmin = terms.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = terms.iter().map(|t| (-temperature * (t.0 - dmin)).exp()).collect();
    let z: f64 = weights.iter().sum();
    let value = dmin - z.ln() / temperature;

    let (mut gx, mut gy, mut ga) = (0.0, 0.0, 0.0);
    for (w, t) in weights.iter().zip(&terms) {
        let w = w / z;
        gx += w * 2.0 * t.1;
        gy += w * 2.0 * t.2;
        ga += w * 2.0 * angle_weight * t.3;
    }
    let mut gradient = Array2::zeros((h_len, d));
    let mut g = gradient.row_mut(h_len - 1);
    let g = g.as_slice_mut().expect("contiguous");
    chain.accumulate_point_gradient(model.num_links(), ee.position, [gx, gy], 1.0, g);
    // Heading is the sum of base yaw and every arm joint.
    for v in g.iter_mut().skip(2) {
        *v += ga;
    }
    Term { value, gradient }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Config;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj_ending_at(q: &[f64]) -> Trajectory {
        Trajectory::linear(&Config::zeros(6), &Config(q.to_vec()), 5)
    }

    fn random_q(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn check_fd(energy: &TaskEnergy, q: &[f64], tol: f64) -> bool {
        let m = RobotModel::default();
        let t = traj_ending_at(q);
        let e = energy.evaluate(&m, &t);
        for h in 0..4 {
            assert!(e.gradient.row(h).iter().all(|&v| v == 0.0));
        }
        let step = 1e-5;
        let mut num = vec![0.0; 6];
        for (j, n) in num.iter_mut().enumerate() {
            let mut a = t.clone();
            let mut b = t.clone();
            a.steps_mut()[[4, j]] += step;
            b.steps_mut()[[4, j]] -= step;
            *n = (energy.evaluate(&m, &a).value - energy.evaluate(&m, &b).value) / (2.0 * step);
        }
        let ana = e.gradient.row(4);
        let diff: f64 = num.iter().zip(ana.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        diff / scale < tol
    }

    #[test]
    fn goal_reach_zero_at_goal() {
        let m = RobotModel::default();
        let q = [0.3, -0.2, 0.4, 0.5, -0.6, 0.7];
        let goal = m.gripper_at(&m.fk_end_effector(&Config(q.to_vec())));
        let e = energy_goal_reach(&m, &traj_ending_at(&q), &goal);
        assert!(e.value < 1e-24);
    }

    #[test]
    fn goal_reach_fd() {
        let m = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ok = 0;
        for _ in 0..100 {
            let goal = m.gripper_at(&Pose2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0)));
            let energy = TaskEnergy::GoalReach { goal_points: goal };
            // Nearest-neighbour switches make the chamfer piecewise; a stencil
            // that crosses one is a legitimate mismatch.
            ok += check_fd(&energy, &random_q(&mut rng), 1e-3) as usize;
        }
        assert!(ok >= 95, "{ok}");
    }

    #[test]
    fn place_shift_adds_closed_form() {
        let m = RobotModel::default();
        let q = [0.3, -0.2, 0.4, 0.5, -0.6, 0.7];
        let obj = crate::task::default_object_points();
        let off = crate::task::default_grasp_offset();
        let frame = m.fk_end_effector(&Config(q.to_vec())).compose(&off);
        let target: Vec<Point2> = obj.iter().map(|&p| frame.transform_point(p)).collect();
        let t = traj_ending_at(&q);
        assert!(energy_place(&m, &t, &obj, &target, &off).value < 1e-24);
        // Shift smaller than half the point spacing keeps correspondences.
        let s = [0.01, -0.015];
        let shifted: Vec<Point2> = target.iter().map(|p| [p[0] + s[0], p[1] + s[1]]).collect();
        let v = energy_place(&m, &t, &obj, &shifted, &off).value;
        let expect = (obj.len() + shifted.len()) as f64 * (s[0] * s[0] + s[1] * s[1]);
        assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
    }

    #[test]
    fn place_fd() {
        let m = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ok = 0;
        for _ in 0..100 {
            let poly: Vec<Point2> = vec![[0.5, 0.5], [0.7, 0.5], [0.7, 0.7], [0.5, 0.7]];
            let task = TaskSpec::place(Config::zeros(6), poly);
            let energy = TaskEnergy::from_task(&m, &task);
            ok += check_fd(&energy, &random_q(&mut rng), 1e-3) as usize;
        }
        assert!(ok >= 95, "{ok}");
    }

    #[test]
    fn perimeter_of_default_square_recovers_object_points() {
        let obj = crate::task::default_object_points();
        let poly = [[-0.08, -0.08], [0.08, -0.08], [0.08, 0.08], [-0.08, 0.08]];
        let per = polygon_perimeter_points(&poly, obj.len());
        assert!(chamfer(&per, &obj).value < 1e-24);
    }

    #[test]
    fn grasp_examples() {
        let m = RobotModel::default();
        let q = [0.3, -0.2, 0.4, 0.5, -0.6, 0.7];
        let t = traj_ending_at(&q);
        let ee = m.fk_end_effector(&Config(q.to_vec()));
        assert!(energy_grasp_surrogate(&m, &t, &[ee], 20.0, 0.1).value.abs() < 1e-12);

        let far = [Pose2::new(3.0, 0.0, 1.0), Pose2::new(-2.0, 1.0, -2.0)];
        let hard = |c: &Pose2| {
            (ee.position[0] - c.position[0]).powi(2)
                + (ee.position[1] - c.position[1]).powi(2)
                + 0.1 * wrap_angle(ee.heading - c.heading).powi(2)
        };
        let hmin = far.iter().map(hard).fold(f64::INFINITY, f64::min);
        let v = energy_grasp_surrogate(&m, &t, &far, 20.0, 0.1).value;
        assert!(v <= hmin + 2f64.ln() / 20.0 + 1e-12);

        let spread = [Pose2::new(0.5, 0.5, 0.0), Pose2::new(2.0, -1.0, 0.5)];
        let hmin = spread.iter().map(hard).fold(f64::INFINITY, f64::min);
        let v = energy_grasp_surrogate(&m, &t, &spread, 100.0, 0.1).value;
        assert!((v - hmin).abs() < 1e-3, "{v} vs {hmin}");
    }

    #[test]
    fn grasp_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let candidates = (0..3)
                .map(|_| Pose2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0)))
                .collect();
            let energy = TaskEnergy::GraspSurrogate {
                candidates,
                temperature: 20.0,
                angle_weight: 0.1,
            };
            assert!(check_fd(&energy, &random_q(&mut rng), 1e-3));
        }
    }
}
