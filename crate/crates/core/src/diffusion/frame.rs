//! Canonical start frame: trajectories are learned relative to the robot's
//! initial base pose, matching the frame of the scene points.

use ndarray::Array2;

use crate::kinematics::Config;

/// World trajectory to the frame of `q0`'s base: positions rotated by
/// `-theta0` about the start, yaw offset by `-theta0`, arm joints unchanged.
pub fn to_local(world: &Array2<f64>, q0: &Config) -> Array2<f64> {
    let (x0, y0, th) = (q0.0[0], q0.0[1], q0.0[2]);
    let (s, c) = th.sin_cos();
    let mut out = world.clone();
    for mut row in out.outer_iter_mut() {
        let (dx, dy) = (row[0] - x0, row[1] - y0);
        row[0] = c * dx + s * dy;
        row[1] = -s * dx + c * dy;
        row[2] -= th;
    }
    out
}

pub fn to_world(local: &Array2<f64>, q0: &Config) -> Array2<f64> {
    let (x0, y0, th) = (q0.0[0], q0.0[1], q0.0[2]);
    let (s, c) = th.sin_cos();
    let mut out = local.clone();
    for mut row in out.outer_iter_mut() {
        let (lx, ly) = (row[0], row[1]);
        row[0] = x0 + c * lx - s * ly;
        row[1] = y0 + s * lx + c * ly;
        row[2] += th;
    }
    out
}

/// Pulls a world-frame gradient back to the local frame (the map is a rigid
/// rotation on the xy block, so this rotates by `-theta0`).
pub fn gradient_to_local(grad: &Array2<f64>, q0: &Config) -> Array2<f64> {
    let th = q0.0[2];
    let (s, c) = th.sin_cos();
    let mut out = grad.clone();
    for mut row in out.outer_iter_mut() {
        let (gx, gy) = (row[0], row[1]);
        row[0] = c * gx + s * gy;
        row[1] = -s * gx + c * gy;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_start_at_origin() {
        let q0 = Config(vec![1.0, -2.0, 0.7, 0.1, 0.2, 0.3]);
        let w = Array2::from_shape_fn((3, 6), |(h, j)| if h == 0 { q0.0[j] } else { (h * 7 + j) as f64 * 0.1 });
        let l = to_local(&w, &q0);
        assert!(l.row(0).iter().take(3).all(|v| v.abs() < 1e-12));
        assert!((&to_world(&l, &q0) - &w).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_pullback_is_chain_rule() {
        // f(world) = a . world; in local coordinates the gradient must satisfy
        // f(to_world(l + h e)) - f(to_world(l)) = h * g_local . e.
        let q0 = Config(vec![0.3, 0.4, -1.1, 0.0, 0.0, 0.0]);
        let a = Array2::from_shape_fn((2, 6), |(h, j)| (h + 1) as f64 * (j as f64 - 2.5));
        let l = Array2::from_shape_fn((2, 6), |(h, j)| (h * 6 + j) as f64 * 0.05);
        let g = gradient_to_local(&a, &q0);
        let f = |l: &Array2<f64>| (&to_world(l, &q0) * &a).sum();
        for h in 0..2 {
            for j in 0..6 {
                let mut lp = l.clone();
                lp[[h, j]] += 1e-6;
                let num = (f(&lp) - f(&l)) / 1e-6;
                assert!((num - g[[h, j]]).abs() < 1e-6);
            }
        }
    }
}
