//! Physical-constraint costs over a whole trajectory.

use ndarray::Array2;

use crate::kinematics::{RobotModel, Trajectory};
use crate::scene::SceneSdf;

/// A scalar cost and its gradient with respect to every trajectory entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub value: f64,
    pub gradient: Array2<f64>,
}

/// Collision hinge on a signed distance `d` with margin `eps`: value and `dPhi/dd`.
#[inline]
pub fn collision_hinge(d: f64, eps: f64) -> (f64, f64) {
    if d < 0.0 {
        (-d + 0.5 * eps, -1.0)
    } else if d <= eps {
        ((d - eps) * (d - eps) / (2.0 * eps), (d - eps) / eps)
    } else {
        (0.0, 0.0)
    }
}

/// Sum of the collision hinge over every surface point of every step.
pub fn cost_collision(model: &RobotModel, sdf: &SceneSdf, traj: &Trajectory, eps_c: f64) -> Term {
    assert!(eps_c > 0.0, "collision margin must be positive");
    let (h_len, d) = traj.steps().dim();
    let mut gradient = Array2::zeros((h_len, d));
    let mut value = 0.0;
    for (h, row) in traj.steps().outer_iter().enumerate() {
        let q = row.as_slice().expect("trajectory rows are contiguous");
        let chain = model.chain(q);
        let mut grow = gradient.row_mut(h);
        let g = grow.as_slice_mut().expect("contiguous");
        model.for_each_surface_point(&chain, |b, p| {
            let s = sdf.query(p);
            let (phi, dphi) = collision_hinge(s.value, eps_c);
            if dphi != 0.0 || phi != 0.0 {
                value += phi;
                chain.accumulate_point_gradient(b, p, s.gradient, dphi, g);
            }
        });
    }
    Term { value, gradient }
}

/// Sum of squared second differences of the joint configurations.
///
/// # Panics
/// If the horizon is shorter than 3.
pub fn cost_smoothness(traj: &Trajectory) -> Term {
    let q = traj.steps();
    let (h_len, d) = q.dim();
    assert!(h_len >= 3, "smoothness needs at least 3 steps");
    let mut gradient = Array2::zeros((h_len, d));
    let mut value = 0.0;
    for h in 0..h_len - 2 {
        for j in 0..d {
            let a = q[[h + 2, j]] - 2.0 * q[[h + 1, j]] + q[[h, j]];
            value += a * a;
            gradient[[h, j]] += 2.0 * a;
            gradient[[h + 1, j]] -= 4.0 * a;
            gradient[[h + 2, j]] += 2.0 * a;
        }
    }
    Term { value, gradient }
}

/// Squared distance outside the margin-shrunk joint limits, summed over steps.
pub fn cost_joint_limits(model: &RobotModel, traj: &Trajectory, eps_l: f64) -> Term {
    assert!(eps_l >= 0.0, "limit margin must be nonnegative");
    let lo = model.lower_with_margin(eps_l);
    let hi = model.upper_with_margin(eps_l);
    let (h_len, d) = traj.steps().dim();
    assert_eq!(d, model.dof(), "trajectory has {d} columns, robot expects {}", model.dof());
    let mut gradient = Array2::zeros((h_len, d));
    let mut value = 0.0;
    for ((h, j), &v) in traj.steps().indexed_iter() {
        let excess = if v > hi[j] {
            v - hi[j]
        } else if v < lo[j] {
            v - lo[j]
        } else {
            continue;
        };
        value += excess * excess;
        gradient[[h, j]] = 2.0 * excess;
    }
    Term { value, gradient }
}
