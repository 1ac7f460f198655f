//! Planar mobile manipulator: a disc base that translates and yaws, carrying
//! a serial chain of revolute links mounted at the base centre.
//!
//! Configuration layout is `[x, y, yaw, arm_1, .., arm_n]`. Angles are never
//! wrapped; the diffusion model works on the raw vector.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = [f64; 2];

/// Bound used for the unlimited base coordinates.
pub const UNBOUNDED: f64 = 1e9;

#[inline]
pub(crate) fn rotate(angle: f64, v: Point2) -> Point2 {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[inline]
pub(crate) fn perp(v: Point2) -> Point2 {
    [-v[1], v[0]]
}

#[inline]
pub(crate) fn sub(a: Point2, b: Point2) -> Point2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn add(a: Point2, b: Point2) -> Point2 {
    [a[0] + b[0], a[1] + b[1]]
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub position: Point2,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            position: [x, y],
            heading,
        }
    }

    /// Maps a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, p: Point2) -> Point2 {
        add(self.position, rotate(self.heading, p))
    }

    /// `self * other`: `other` expressed in `self`'s frame, lifted to the parent.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        Pose2 {
            position: self.transform_point(other.position),
            heading: self.heading + other.heading,
        }
    }

    pub fn inverse_transform_point(&self, p: Point2) -> Point2 {
        rotate(-self.heading, sub(p, self.position))
    }
}

/// A robot configuration vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Config(pub Vec<f64>);

impl Config {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dof: usize) -> Self {
        Self(vec![0.0; dof])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn base_pose(&self) -> Pose2 {
        Pose2::new(self.0[0], self.0[1], self.0[2])
    }
}

impl From<Vec<f64>> for Config {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// An `H x d` matrix of configurations, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    q: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(steps: Array2<f64>) -> Result<Self> {
        if steps.nrows() < 2 {
            return Err(Error::dim(format!(
                "trajectory needs at least 2 steps, got {}",
                steps.nrows()
            )));
        }
        if steps.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "trajectory contains non-finite entries".into(),
            ));
        }
        Ok(Self { steps })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let h = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::dim("ragged trajectory rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let steps = Array2::from_shape_vec((h, d), flat)
            .map_err(|e| Error::dim(e.to_string()))?;
        Self::new(steps)
    }

    /// Straight line in configuration space from `a` to `b` over `horizon` steps.
    pub fn linear(a: &Config, b: &Config, horizon: usize) -> Self {
        assert_eq!(a.len(), b.len());
        assert!(horizon >= 2);
        let d = a.len();
        let steps = Array2::from_shape_fn((horizon, d), |(h, j)| {
            let s = h as f64 / (horizon - 1) as f64;
            a.0[j] + s * (b.0[j] - a.0[j])
        });
        Self { steps }
    }

    pub fn horizon(&self) -> usize {
        self.steps.nrows()
    }

    pub fn dof(&self) -> usize {
        self.steps.ncols()
    }

    pub fn steps(&self) -> &Array2<f64> {
        &self.steps
    }

    pub fn steps_mut(&mut self) -> &mut Array2<f64> {
        &mut self.steps
    }

    pub fn into_array(self) -> Array2<f64> {
        self.steps
    }

    pub fn row(&self, h: usize) -> Config {
        Config(self.steps.row(h).to_vec())
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.steps.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TrajectoryFile { q: self.rows() }).expect("trajectory serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TrajectoryFile = serde_json::from_str(s)?;
        Self::from_rows(&file.q)
    }
}

/// Planar mobile manipulator description.
///
/// `surface_template[0]` holds the base samples in the base frame; entry `j`
/// holds samples of arm link `j` in a frame at the link's proximal joint with
/// `+x` along the link. `gripper_template` is expressed in the end-effector
/// frame at the distal tip of the last link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub link_lengths: Vec<f64>,
    pub base_radius: f64,
    pub joint_lower: Vec<f64>,
    pub joint_upper: Vec<f64>,
    pub surface_template: Vec<Vec<Point2>>,
    pub gripper_template: Vec<Point2>,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self::planar(&[0.4, 0.3, 0.2], 0.25, 2.9, 12, 4)
    }
}

/// Per-point derivatives with respect to the configuration, each `2 x d`.
#[derive(Debug, Clone)]
pub struct PointJacobians {
    pub surface: Vec<Array2<f64>>,
    pub gripper: Vec<Array2<f64>>,
}

/// Joint positions and absolute angles of every body for one configuration.
#[derive(Debug, Clone)]
pub(crate) struct Chain {
    /// `joints[0]` is the base centre, `joints[j]` the distal end of link `j`.
    pub joints: Vec<Point2>,
    /// `angles[0]` is the base yaw, `angles[j]` the absolute angle of link `j`.
    pub angles: Vec<f64>,
}

impl Chain {
    pub fn ee_pose(&self) -> Pose2 {
        Pose2 {
            position: *self.joints.last().unwrap(),
            heading: *self.angles.last().unwrap(),
        }
    }

    /// World pose of the frame carrying body `b` (0 = base, j = link j).
    pub fn body_frame(&self, b: usize) -> Pose2 {
        if b == 0 {
            Pose2 {
                position: self.joints[0],
                heading: self.angles[0],
            }
        } else {
            Pose2 {
                position: self.joints[b - 1],
                heading: self.angles[b],
            }
        }
    }

    /// Contracts `v . dp/dq` for a world point `p` rigidly attached to body
    /// `b`, accumulating `scale * v^T J` into `out` (length d).
    #[inline]
    pub fn accumulate_point_gradient(&self, b: usize, p: Point2, v: Point2, scale: f64, out: &mut [f64]) {
        out[0] += scale * v[0];
        out[1] += scale * v[1];
        let r = perp(sub(p, self.joints[0]));
        out[2] += scale * (v[0] * r[0] + v[1] * r[1]);
        for k in 1..=b {
            let r = perp(sub(p, self.joints[k - 1]));
            out[2 + k] += scale * (v[0] * r[0] + v[1] * r[1]);
        }
    }

    /// Full `2 x d` Jacobian of a point rigidly attached to body `b`.
    pub fn point_jacobian(&self, b: usize, p: Point2, dof: usize) -> Array2<f64> {
        let mut j = Array2::zeros((2, dof));
        j[[0, 0]] = 1.0;
        j[[1, 1]] = 1.0;
        let r = perp(sub(p, self.joints[0]));
        j[[0, 2]] = r[0];
        j[[1, 2]] = r[1];
        for k in 1..=b {
            let r = perp(sub(p, self.joints[k - 1]));
            j[[0, 2 + k]] = r[0];
            j[[1, 2 + k]] = r[1];
        }
        j
    }
}

impl RobotModel {
    /// Builds a robot with uniformly sampled bodies: `base_samples` points on
    /// the base circle and `link_samples` points along each link.
    pub fn planar(
        link_lengths: &[f64],
        base_radius: f64,
        arm_limit: f64,
        base_samples: usize,
        link_samples: usize,
    ) -> Self {
        let n = link_lengths.len();
        let mut joint_lower = vec![-UNBOUNDED; 3];
        let mut joint_upper = vec![UNBOUNDED; 3];
        joint_lower.extend(std::iter::repeat_n(-arm_limit, n));
        joint_upper.extend(std::iter::repeat_n(arm_limit, n));

        let mut surface_template = Vec::with_capacity(n + 1);
        surface_template.push(
            (0..base_samples)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / base_samples as f64;
                    [base_radius * a.cos(), base_radius * a.sin()]
                })
                .collect(),
        );
        for &len in link_lengths {
            surface_template.push(
                (1..=link_samples)
                    .map(|i| [len * i as f64 / link_samples as f64, 0.0])
                    .collect(),
            );
        }
        // The tail point along the last link breaks the jaw symmetry so the
        // chamfer energy has no flipped-orientation minimum.
        let gripper_template = vec![[0.0, 0.0], [0.0, 0.04], [0.0, -0.04], [0.05, 0.04], [0.05, -0.04], [-0.15, 0.0]];
        Self {
            link_lengths: link_lengths.to_vec(),
            base_radius,
            joint_lower,
            joint_upper,
            surface_template,
            gripper_template,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.link_lengths.len();
        if self.link_lengths.iter().any(|&l| !(l > 0.0)) || !(self.base_radius > 0.0) {
            return Err(Error::InvalidArgument(
                "link lengths and base radius must be positive".into(),
            ));
        }
        if self.joint_lower.len() != n + 3 || self.joint_upper.len() != n + 3 {
            return Err(Error::dim("joint limit vectors must have length d = 3 + links"));
        }
        if self
            .joint_lower
            .iter()
            .zip(&self.joint_upper)
            .any(|(lo, hi)| !(lo < hi))
        {
            return Err(Error::InvalidArgument("joint_lower must be < joint_upper".into()));
        }
        if self.surface_template.len() != n + 1 {
            return Err(Error::dim("surface_template needs one entry per body (base + links)"));
        }
        if self.gripper_template.is_empty() {
            return Err(Error::InvalidArgument("gripper_template is empty".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: RobotModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("robot model serializes")
    }

    pub fn dof(&self) -> usize {
        3 + self.link_lengths.len()
    }

    pub fn num_links(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn num_surface_points(&self) -> usize {
        self.surface_template.iter().map(Vec::len).sum()
    }

    /// Reach of the arm measured from the base centre.
    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    fn check_dim(&self, q: &[f64]) {
        assert_eq!(
            q.len(),
            self.dof(),
            "configuration has {} entries, robot expects {}",
            q.len(),
            self.dof()
        );
    }

    pub(crate) fn chain(&self, q: &[f64]) -> Chain {
        self.check_dim(q);
        let n = self.num_links();
        let mut joints = Vec::with_capacity(n + 1);
        let mut angles = Vec::with_capacity(n + 1);
        let mut pos = [q[0], q[1]];
        let mut angle = q[2];
        joints.push(pos);
        angles.push(angle);
        for (j, &len) in self.link_lengths.iter().enumerate() {
            angle += q[3 + j];
            pos = [pos[0] + len * angle.cos(), pos[1] + len * angle.sin()];
            joints.push(pos);
            angles.push(angle);
        }
        Chain { joints, angles }
    }

    pub fn fk_end_effector(&self, q: &Config) -> Pose2 {
        self.chain(&q.0).ee_pose()
    }

    /// Visits every surface sample as `(body, world point)`, in template order.
    pub(crate) fn for_each_surface_point(&self, chain: &Chain, mut f: impl FnMut(usize, Point2)) {
        for (b, pts) in self.surface_template.iter().enumerate() {
            let frame = chain.body_frame(b);
            for &p in pts {
                f(b, frame.transform_point(p));
            }
        }
    }

    pub fn fk_surface_points(&self, q: &Config) -> Vec<Point2> {
        let chain = self.chain(&q.0);
        let mut out = Vec::with_capacity(self.num_surface_points());
        self.for_each_surface_point(&chain, |_, p| out.push(p));
        out
    }

    /// Gripper template points placed at the end-effector pose of `q`.
    pub fn gripper_points(&self, q: &Config) -> Vec<Point2> {
        let ee = self.fk_end_effector(q);
        self.gripper_at(&ee)
    }

    /// Gripper template points placed at an arbitrary end-effector pose.
    pub fn gripper_at(&self, ee: &Pose2) -> Vec<Point2> {
        self.gripper_template
            .iter()
            .map(|&p| ee.transform_point(p))
            .collect()
    }

    pub fn jacobian_points(&self, q: &Config) -> PointJacobians {
        let chain = self.chain(&q.0);
        let d = self.dof();
        let mut surface = Vec::with_capacity(self.num_surface_points());
        self.for_each_surface_point(&chain, |b, p| surface.push(chain.point_jacobian(b, p, d)));
        let ee = chain.ee_pose();
        let n = self.num_links();
        let gripper = self
            .gripper_template
            .iter()
            .map(|&l| chain.point_jacobian(n, ee.transform_point(l), d))
            .collect();
        PointJacobians { surface, gripper }
    }

    /// Jacobian of `(ee_x, ee_y, ee_heading)` with respect to `q`, `3 x d`.
    pub fn ee_jacobian(&self, q: &Config) -> Array2<f64> {
        let chain = self.chain(&q.0);
        let d = self.dof();
        let pj = chain.point_jacobian(self.num_links(), chain.ee_pose().position, d);
        let mut j = Array2::zeros((3, d));
        j.slice_mut(ndarray::s![0..2, ..]).assign(&pj);
        for c in 2..d {
            j[[2, c]] = 1.0;
        }
        j
    }

    pub fn lower_with_margin(&self, margin: f64) -> Vec<f64> {
        self.joint_lower.iter().map(|v| v + margin).collect()
    }

    pub fn upper_with_margin(&self, margin: f64) -> Vec<f64> {
        self.joint_upper.iter().map(|v| v - margin).collect()
    }

    /// Per-dimension distance outside `[q_min + margin, q_max - margin]`.
    pub fn joint_violation_amount(&self, q: &Config, margin: f64) -> Vec<f64> {
        self.check_dim(&q.0);
        q.0.iter()
            .zip(self.joint_lower.iter().zip(&self.joint_upper))
            .map(|(&v, (&lo, &hi))| {
                let lo = lo + margin;
                let hi = hi - margin;
                if v < lo {
                    lo - v
                } else if v > hi {
                    v - hi
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(self.joint_lower.iter().zip(&self.joint_upper))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Homogeneous 3x3 transform product, link by link.
    fn oracle_ee(model: &RobotModel, q: &[f64]) -> (f64, f64, f64) {
        type M = [[f64; 3]; 3];
        fn mul(a: &M, b: &M) -> M {
            let mut r = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        r[i][j] += a[i][k] * b[k][j];
                    }
                }
            }
            r
        }
        fn rot(t: f64) -> M {
            [[t.cos(), -t.sin(), 0.0], [t.sin(), t.cos(), 0.0], [0.0, 0.0, 1.0]]
        }
        fn trans(x: f64, y: f64) -> M {
            [[1.0, 0.0, x], [0.0, 1.0, y], [0.0, 0.0, 1.0]]
        }
        let mut t = mul(&trans(q[0], q[1]), &rot(q[2]));
        for (j, &l) in model.link_lengths.iter().enumerate() {
            t = mul(&t, &rot(q[3 + j]));
            t = mul(&t, &trans(l, 0.0));
        }
        (t[0][2], t[1][2], t[1][0].atan2(t[0][0]))
    }

    #[test]
    fn fk_zero_config_is_colinear() {
        let m = RobotModel::default();
        let ee = m.fk_end_effector(&Config::zeros(6));
        assert!(close(ee.position[0], 0.9, 1e-12));
        assert!(close(ee.position[1], 0.0, 1e-12));
        assert!(close(ee.heading, 0.0, 1e-12));
    }

    #[test]
    fn fk_rotated_base() {
        let m = RobotModel::default();
        let ee = m.fk_end_effector(&Config(vec![1.0, 2.0, FRAC_PI_2, 0.0, 0.0, 0.0]));
        assert!(close(ee.position[0], 1.0, 1e-12));
        assert!(close(ee.position[1], 2.9, 1e-12));
        assert!(close(ee.heading, FRAC_PI_2, 1e-12));
    }

    #[test]
    fn fk_matches_transform_chain() {
        let m = RobotModel::default();
        let q = vec![0.0, 0.0, 0.0, FRAC_PI_4, -FRAC_PI_4, FRAC_PI_2];
        let ee = m.fk_end_effector(&Config(q.clone()));
        let (x, y, th) = oracle_ee(&m, &q);
        assert!(close(ee.position[0], x, 1e-12));
        assert!(close(ee.position[1], y, 1e-12));
        assert!(close(wrap_angle(ee.heading - th), 0.0, 1e-12));
    }

    #[test]
    #[should_panic(expected = "robot expects 6")]
    fn fk_rejects_wrong_dimension() {
        RobotModel::default().fk_end_effector(&Config::zeros(5));
    }

    #[test]
    fn surface_points_zero_config() {
        let m = RobotModel::default();
        let pts = m.fk_surface_points(&Config::zeros(6));
        assert_eq!(pts.len(), 24);
        for p in &pts[..12] {
            assert!(close((p[0] * p[0] + p[1] * p[1]).sqrt(), 0.25, 1e-12));
        }
    }

    #[test]
    fn surface_points_translate_with_base() {
        let m = RobotModel::default();
        let q = Config(vec![0.3, -0.2, 0.4, 0.1, 0.5, -0.3]);
        let mut shifted = q.clone();
        shifted.0[0] += 1.0;
        shifted.0[1] += 2.0;
        for (a, b) in m.fk_surface_points(&q).iter().zip(m.fk_surface_points(&shifted)) {
            assert!(close(b[0] - a[0], 1.0, 1e-12));
            assert!(close(b[1] - a[1], 2.0, 1e-12));
        }
    }

    #[test]
    fn base_point_jacobian_structure() {
        let m = RobotModel::default();
        let q = Config(vec![0.3, -0.2, 0.4, 0.1, 0.5, -0.3]);
        let jac = m.jacobian_points(&q);
        for j in &jac.surface[..12] {
            assert_eq!(j[[0, 0]], 1.0);
            assert_eq!(j[[1, 1]], 1.0);
            assert_eq!(j[[0, 1]], 0.0);
            for c in 3..6 {
                assert_eq!(j[[0, c]], 0.0);
                assert_eq!(j[[1, c]], 0.0);
            }
        }
        // The tip point rotates about the base centre under a yaw change.
        let tip = *m.fk_surface_points(&q).last().unwrap();
        let r = perp(sub(tip, [q.0[0], q.0[1]]));
        let last = jac.surface.last().unwrap();
        assert!(close(last[[0, 2]], r[0], 1e-12));
        assert!(close(last[[1, 2]], r[1], 1e-12));
    }

    #[test]
    fn joint_violation_examples() {
        let m = RobotModel::default();
        assert!(m
            .joint_violation_amount(&Config::zeros(6), 0.02)
            .iter()
            .all(|&v| v == 0.0));
        let mut q = Config::zeros(6);
        q.0[4] = -2.9;
        let v = m.joint_violation_amount(&q, 0.02);
        assert!(close(v[4], 0.02, 1e-12));
        assert_eq!(v.iter().filter(|&&x| x > 0.0).count(), 1);
    }

    #[test]
    fn wrap_angle_range() {
        assert!(close(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI, 1e-12));
        assert!(close(wrap_angle(-0.5), -0.5, 1e-15));
        assert!(close(wrap_angle(7.0), 7.0 - std::f64::consts::TAU, 1e-12));
    }
}
