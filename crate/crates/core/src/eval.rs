//! Success criteria, physical metrics, SPARC smoothness and the benchmark
//! harness comparing guided, unguided and Langevin planners.
//!
//! Grasp and place success are geometric proxies, not physics rollouts.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::diffusion::{read_dataset, Checkpoint, SceneCache};
use crate::error::{Error, Result};
use crate::expert::task_goal_poses;
use crate::kinematics::{wrap_angle, Pose2, RobotModel, Trajectory};
use crate::objective::{Objective, TaskEnergy};
use crate::sampler::{langevin_plan, plan, GuidanceConfig, LangevinConfig};
use crate::scene::SceneSdf;
use crate::task::{bbox, TaskSpec, TaskType};

/// Nominal trajectory sample rate for SPARC, Hz.
pub const SPARC_SAMPLE_RATE: f64 = 10.0;
pub const SPARC_PAD_FACTOR: usize = 4;
pub const SPARC_AMPLITUDE_THRESHOLD: f64 = 0.05;
pub const SPARC_MAX_CUTOFF_HZ: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalThresholds {
    pub goal_pos: f64,
    /// Degrees.
    pub goal_ang: f64,
    pub grasp_pos: f64,
    /// Degrees.
    pub grasp_ang: f64,
    pub overlap_ratio: f64,
    pub sparc_smooth: f64,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        Self {
            goal_pos: 0.04,
            goal_ang: 20.0,
            grasp_pos: 0.02,
            grasp_ang: 15.0,
            overlap_ratio: 0.5,
            sparc_smooth: -1.6,
        }
    }
}

impl EvalThresholds {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.goal_pos, self.goal_ang, self.grasp_pos, self.grasp_ang, self.overlap_ratio];
        if pos.iter().any(|v| !(*v > 0.0)) || !(self.sparc_smooth < 0.0) {
            return Err(Error::InvalidArgument(
                "thresholds must be positive, sparc_smooth negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionStats {
    pub any: bool,
    /// Deepest penetration over all steps and surface points, metres (0 if none).
    pub max_depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub success: bool,
    pub pos_error: f64,
    /// Radians.
    pub ang_error: f64,
    pub collision: CollisionStats,
    pub joint_violation_rate: f64,
    pub sparc_config: f64,
    pub sparc_ee: f64,
    pub solve_time: f64,
}

/// Spectral arc length of a speed profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sparc {
    pub value: f64,
    /// Set for an all-zero profile, whose value is defined as 0.
    pub degenerate: bool,
}

/// SPARC of a speed profile sampled at [`SPARC_SAMPLE_RATE`]: zero-pad to
/// four times the next power of two, normalize the one-sided magnitude
/// spectrum by its DC value, cut off after the last bin at or above
/// [`SPARC_AMPLITUDE_THRESHOLD`] (never beyond 20 Hz or Nyquist), and return
/// the negated arc length of the normalized-frequency curve.
pub fn sparc(speed: &[f64]) -> Result<Sparc> {
    if speed.len() < 4 {
        return Err(Error::InvalidArgument("sparc needs at least 4 samples".into()));
    }
    if speed.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { term: "speed profile" });
    }
    let n = SPARC_PAD_FACTOR * speed.len().next_power_of_two();
    let mut buf: Vec<Complex<f64>> = speed.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let dc = buf[0].norm();
    if dc == 0.0 {
        return Ok(Sparc {
            value: 0.0,
            degenerate: true,
        });
    }
    let df = SPARC_SAMPLE_RATE / n as f64;
    let cap = SPARC_MAX_CUTOFF_HZ.min(0.5 * SPARC_SAMPLE_RATE);
    let bins = ((cap / df).floor() as usize).min(n / 2);
    let mag: Vec<f64> = buf[..=bins].iter().map(|c| c.norm() / dc).collect();
    let last = mag.iter().rposition(|&m| m >= SPARC_AMPLITUDE_THRESHOLD).unwrap_or(0);
    if last == 0 {
        return Ok(Sparc {
            value: 0.0,
            degenerate: false,
        });
    }
    let dw = 1.0 / last as f64;
    let len: f64 = mag[..=last].windows(2).map(|w| dw.hypot(w[1] - w[0])).sum();
    Ok(Sparc {
        value: -len,
        degenerate: false,
    })
}

/// `|q_{h+1} - q_h|` per step.
pub fn config_speed(traj: &Trajectory) -> Vec<f64> {
    let q = traj.steps();
    (0..q.nrows() - 1)
        .map(|h| (&q.row(h + 1) - &q.row(h)).mapv(|v| v * v).sum().sqrt())
        .collect()
}

/// End-effector position displacement per step.
pub fn ee_speed(model: &RobotModel, traj: &Trajectory) -> Vec<f64> {
    let p: Vec<_> = (0..traj.horizon()).map(|h| model.fk_end_effector(&traj.row(h)).position).collect();
    p.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).collect()
}

pub fn collision_stats(model: &RobotModel, sdf: &SceneSdf, traj: &Trajectory) -> CollisionStats {
    let mut min = f64::INFINITY;
    for row in traj.steps().outer_iter() {
        let chain = model.chain(row.as_slice().expect("contiguous"));
        model.for_each_surface_point(&chain, |_, p| min = min.min(sdf.value(p)));
    }
    CollisionStats {
        any: min < 0.0,
        max_depth: (-min).max(0.0),
    }
}

pub fn joint_violation_rate(model: &RobotModel, traj: &Trajectory) -> f64 {
    let mut bad = 0usize;
    for row in traj.steps().outer_iter() {
        for (j, &v) in row.iter().enumerate() {
            if v < model.joint_lower[j] || v > model.joint_upper[j] {
                bad += 1;
            }
        }
    }
    bad as f64 / traj.steps().len() as f64
}

fn pose_error(a: &Pose2, b: &Pose2) -> (f64, f64) {
    (
        (a.position[0] - b.position[0]).hypot(a.position[1] - b.position[1]),
        wrap_angle(a.heading - b.heading).abs(),
    )
}

/// Intersection area of the axis-aligned boxes of the carried object and the
/// target area, over the object box area.
pub fn placement_overlap(task: &TaskSpec, ee: &Pose2) -> f64 {
    let Some(poly) = task.target_area_polygon.as_ref() else {
        return 0.0;
    };
    let obj = ee.compose(&task.grasp_offset_or_default());
    let pts: Vec<_> = task
        .object_points_or_default()
        .into_iter()
        .map(|p| obj.transform_point(p))
        .collect();
    let a = bbox(&pts);
    let b = bbox(poly);
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let area = (a[2] - a[0]) * (a[3] - a[1]);
    if area > 0.0 {
        w * h / area
    } else {
        0.0
    }
}

/// Scores one trajectory. `solve_time` is copied into the report.
pub fn score_trajectory(
    model: &RobotModel,
    sdf: &SceneSdf,
    traj: &Trajectory,
    task: &TaskSpec,
    thr: &EvalThresholds,
    solve_time: f64,
) -> Result<EvalReport> {
    task.validate(model)?;
    if traj.dof() != model.dof() {
        return Err(Error::dim(format!("trajectory has {} columns, robot has {} dof", traj.dof(), model.dof())));
    }
    let ee = model.fk_end_effector(&traj.row(traj.horizon() - 1));
    let goals = task_goal_poses(task);
    let (pos_error, ang_error) = goals
        .iter()
        .map(|g| pose_error(&ee, g))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((f64::INFINITY, f64::INFINITY));
    let task_ok = match task.task_type {
        TaskType::GoalReach => pos_error <= thr.goal_pos && ang_error <= thr.goal_ang.to_radians(),
        TaskType::Grasp => goals.iter().any(|g| {
            let (p, a) = pose_error(&ee, g);
            p <= thr.grasp_pos && a <= thr.grasp_ang.to_radians()
        }),
        TaskType::Place => placement_overlap(task, &ee) >= thr.overlap_ratio,
    };
    let collision = collision_stats(model, sdf, traj);
    let joint_violation_rate = joint_violation_rate(model, traj);
    let sparc_config = if traj.horizon() > 4 { sparc(&config_speed(traj))?.value } else { f64::NAN };
    let sparc_ee = if traj.horizon() > 4 { sparc(&ee_speed(model, traj))?.value } else { f64::NAN };
    Ok(EvalReport {
        success: task_ok && !collision.any && joint_violation_rate == 0.0,
        pos_error,
        ang_error,
        collision,
        joint_violation_rate,
        sparc_config,
        sparc_ee,
        solve_time,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Guided,
    Unguided,
    Langevin,
    /// Stored expert demonstrations, re-scored rather than planned.
    Expert,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 3] = [PlannerKind::Guided, PlannerKind::Unguided, PlannerKind::Langevin];

    pub fn as_str(&self) -> &'static str {
        match self {
            PlannerKind::Guided => "guided",
            PlannerKind::Unguided => "unguided",
            PlannerKind::Langevin => "langevin",
            PlannerKind::Expert => "expert",
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .chain([PlannerKind::Expert])
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown planner '{s}'")))
    }
}

/// One benchmark problem.
#[derive(Debug, Clone)]
pub struct BenchmarkTask<'a> {
    pub task_id: String,
    pub sdf: &'a SceneSdf,
    pub task: TaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Guidance settings for the guided planner; the unguided planner uses
    /// the same settings with guidance disabled. Seeds are overridden.
    pub guidance: GuidanceConfig,
    pub langevin: LangevinConfig,
    pub thresholds: EvalThresholds,
    /// Record wall time. Off by default so outputs are byte-reproducible.
    pub timing: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            guidance: GuidanceConfig::default(),
            langevin: LangevinConfig::default(),
            thresholds: EvalThresholds::default(),
            timing: false,
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub task_id: String,
    pub planner: PlannerKind,
    pub seed: u64,
    pub success: bool,
    pub pos_error: f64,
    pub ang_error: f64,
    pub collision_any: bool,
    pub max_depth: f64,
    pub joint_violation_rate: f64,
    pub sparc_config: f64,
    pub sparc_ee: f64,
    pub solve_time_s: f64,
}

impl BenchmarkRow {
    pub fn from_report(task_id: &str, planner: PlannerKind, seed: u64, r: &EvalReport) -> Self {
        Self {
            task_id: task_id.to_string(),
            planner,
            seed,
            success: r.success,
            pos_error: r.pos_error,
            ang_error: r.ang_error,
            collision_any: r.collision.any,
            max_depth: r.collision.max_depth,
            joint_violation_rate: r.joint_violation_rate,
            sparc_config: r.sparc_config,
            sparc_ee: r.sparc_ee,
            solve_time_s: r.solve_time,
        }
    }

    /// A planner that errored counts as a failure with undefined metrics.
    pub fn failure(task_id: &str, planner: PlannerKind, seed: u64) -> Self {
        Self {
            task_id: task_id.to_string(),
            planner,
            seed,
            success: false,
            pos_error: f64::NAN,
            ang_error: f64::NAN,
            collision_any: false,
            max_depth: f64::NAN,
            joint_violation_rate: f64::NAN,
            sparc_config: f64::NAN,
            sparc_ee: f64::NAN,
            solve_time_s: 0.0,
        }
    }
}

/// Runs one planner and returns the planned trajectory.
pub fn run_planner(
    model: &RobotModel,
    checkpoint: &Checkpoint,
    sdf: &SceneSdf,
    task: &TaskSpec,
    planner: PlannerKind,
    seed: u64,
    cfg: &BenchmarkConfig,
) -> Result<Trajectory> {
    match planner {
        PlannerKind::Guided | PlannerKind::Unguided => {
            let g = GuidanceConfig {
                seed,
                guidance_enabled: planner == PlannerKind::Guided && cfg.guidance.guidance_enabled,
                ..cfg.guidance.clone()
            };
            Ok(plan(model, checkpoint, sdf, task, &g)?.trajectory)
        }
        PlannerKind::Langevin => {
            task.validate(model)?;
            let objective = Objective {
                model,
                sdf,
                energy: cfg.guidance.energy.clone().unwrap_or_else(|| TaskEnergy::from_task(model, task)),
                weights: cfg.guidance.weights,
                grad_clip: None,
            };
            let l = LangevinConfig {
                seed,
                ..cfg.langevin.clone()
            };
            langevin_plan(&objective, &checkpoint.normalizer, &task.start, checkpoint.arch.horizon, &l)
        }
        PlannerKind::Expert => Err(Error::InvalidArgument(
            "expert trajectories come from a dataset, not a planner".into(),
        )),
    }
}

/// Scores every stored demonstration of a dataset directory, in file order.
pub fn rescore_dataset(model: &RobotModel, dir: &Path, thresholds: &EvalThresholds) -> Result<Vec<BenchmarkRow>> {
    thresholds.validate()?;
    let records = read_dataset(&dir.join("dataset.jsonl"))?;
    let mut cache = SceneCache::new(dir);
    let mut rows = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let traj = Trajectory::new(rec.trajectory_array()?)?;
        let task = rec.task();
        let sdf = cache.get(&rec.scene_file)?;
        let r = score_trajectory(model, sdf, &traj, &task, thresholds, 0.0)?;
        rows.push(BenchmarkRow::from_report(&i.to_string(), PlannerKind::Expert, 0, &r));
    }
    Ok(rows)
}

/// Plans and scores every `(task, seed)` pair. Rows come back in task-major,
/// seed-minor order regardless of scheduling.
pub fn run_benchmark(
    model: &RobotModel,
    checkpoint: &Checkpoint,
    tasks: &[BenchmarkTask<'_>],
    planner: PlannerKind,
    seeds: &[u64],
    cfg: &BenchmarkConfig,
) -> Result<Vec<BenchmarkRow>> {
    cfg.thresholds.validate()?;
    let jobs: Vec<(&BenchmarkTask<'_>, u64)> = tasks.iter().flat_map(|t| seeds.iter().map(move |&s| (t, s))).collect();
    let rows = jobs
        .par_iter()
        .map(|(t, seed)| {
            let start = Instant::now();
            let out = run_planner(model, checkpoint, t.sdf, &t.task, planner, *seed, cfg);
            let elapsed = if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 };
            match out.and_then(|traj| score_trajectory(model, t.sdf, &traj, &t.task, &cfg.thresholds, elapsed)) {
                Ok(r) => BenchmarkRow::from_report(&t.task_id, planner, *seed, &r),
                Err(e) => {
                    log::warn!("{} planner on {} seed {seed} failed: {e}", planner, t.task_id);
                    BenchmarkRow::failure(&t.task_id, planner, *seed)
                }
            }
        })
        .collect();
    Ok(rows)
}

/// Summary statistics for one planner's rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub planner: PlannerKind,
    pub rows: usize,
    pub success_pct: f64,
    pub collision_pct: f64,
    /// Over colliding rows; 0 when none collide.
    pub mean_depth: f64,
    pub median_depth: f64,
    /// Over rows with a finite value.
    pub mean_sparc_config: f64,
    pub mean_sparc_ee: f64,
    pub joint_violation_pct: f64,
    /// Over successful rows; 0 when none succeed.
    pub mean_solve_time_s: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Aggregates per planner, in the order planners first appear.
pub fn aggregate(rows: &[BenchmarkRow]) -> Vec<Aggregate> {
    let mut planners: Vec<PlannerKind> = Vec::new();
    for r in rows {
        if !planners.contains(&r.planner) {
            planners.push(r.planner);
        }
    }
    planners
        .into_iter()
        .map(|p| {
            let rs: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.planner == p).collect();
            let n = rs.len() as f64;
            let pct = |f: &dyn Fn(&BenchmarkRow) -> bool| 100.0 * rs.iter().filter(|r| f(r)).count() as f64 / n;
            let mut depths: Vec<f64> = rs.iter().filter(|r| r.collision_any).map(|r| r.max_depth).collect();
            let finite = |f: &dyn Fn(&BenchmarkRow) -> f64| -> Vec<f64> {
                rs.iter().map(|r| f(r)).filter(|v| v.is_finite()).collect()
            };
            let times: Vec<f64> = rs.iter().filter(|r| r.success).map(|r| r.solve_time_s).collect();
            Aggregate {
                planner: p,
                rows: rs.len(),
                success_pct: pct(&|r| r.success),
                collision_pct: pct(&|r| r.collision_any),
                mean_depth: mean(&depths),
                median_depth: median(&mut depths),
                mean_sparc_config: mean(&finite(&|r| r.sparc_config)),
                mean_sparc_ee: mean(&finite(&|r| r.sparc_ee)),
                joint_violation_pct: pct(&|r| r.joint_violation_rate > 0.0),
                mean_solve_time_s: mean(&times),
            }
        })
        .collect()
}

pub fn write_rows_csv(path: &Path, rows: &[BenchmarkRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "task_id",
            "planner",
            "seed",
            "success",
            "pos_error",
            "ang_error",
            "collision_any",
            "max_depth",
            "joint_violation_rate",
            "sparc_config",
            "sparc_ee",
            "solve_time_s",
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<BenchmarkRow>> {
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_slice());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Config;
    use crate::scene::{build_sdf, OccupancyGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bell(n: usize) -> Vec<f64> {
        // Minimum-jerk speed profile.
        (0..n)
            .map(|k| {
                let s = k as f64 / (n - 1) as f64;
                30.0 * s * s * (1.0 - s) * (1.0 - s)
            })
            .collect()
    }

    #[test]
    fn sparc_scale_invariant() {
        let b = bell(50);
        let s = sparc(&b).unwrap().value;
        for c in [0.01, 3.0, 1e4] {
            let scaled: Vec<f64> = b.iter().map(|v| v * c).collect();
            assert!((sparc(&scaled).unwrap().value - s).abs() < 1e-12);
        }
    }

    #[test]
    fn sparc_zero_profile_is_degenerate() {
        let s = sparc(&[0.0; 10]).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.degenerate);
        assert!(sparc(&[1.0; 3]).is_err());
    }

    #[test]
    fn sparc_jitter_lengthens_arc() {
        // The arc length grows with added high-frequency content, so the
        // jittered profile is more negative.
        let b = bell(50);
        let clean = sparc(&b).unwrap().value;
        let jittered: Vec<f64> = b
            .iter()
            .enumerate()
            .map(|(k, v)| v + 0.3 * (k as f64 * 2.5).sin())
            .collect();
        let j = sparc(&jittered).unwrap().value;
        assert!(j < clean, "{j} vs {clean}");
        assert!(clean < -1.0 && clean > -1.6, "{clean}");
    }

    #[test]
    fn sparc_matches_direct_dft() {
        // Independent O(n^2) DFT oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..13).map(|_| rng.random_range(0.0..1.0)).collect();
        let n = 4 * 16;
        let mag: Vec<f64> = (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, x) in v.iter().enumerate() {
                    let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                re.hypot(im)
            })
            .collect();
        let m: Vec<f64> = mag.iter().map(|x| x / mag[0]).collect();
        let last = m.iter().rposition(|&x| x >= 0.05).unwrap();
        let expect: f64 = -m[..=last].windows(2).map(|w| (1.0 / last as f64).hypot(w[1] - w[0])).sum::<f64>();
        assert!((sparc(&v).unwrap().value - expect).abs() < 1e-10);
    }

    fn scene() -> (RobotModel, SceneSdf) {
        let mut g = OccupancyGrid::new(0.05, [-1.0, -1.0], 80, 80).unwrap();
        for j in 35..45 {
            for i in 35..45 {
                g.set(i, j, true);
            }
        }
        (RobotModel::default(), build_sdf(&g).unwrap())
    }

    #[test]
    fn static_goal_pose_errors_match_fk() {
        let (m, sdf) = scene();
        let q = Config(vec![-0.5, -0.5, 0.3, 0.1, 0.2, 0.3]);
        let ee = m.fk_end_effector(&q);
        let goal = Pose2::new(ee.position[0] + 0.03, ee.position[1], ee.heading + 0.1);
        let task = TaskSpec::goal_reach(q.clone(), goal);
        let t = Trajectory::linear(&q, &q, 10);
        let r = score_trajectory(&m, &sdf, &t, &task, &EvalThresholds::default(), 0.0).unwrap();
        assert!((r.pos_error - 0.03).abs() < 1e-12);
        assert!((r.ang_error - 0.1).abs() < 1e-12);
        assert!(r.success);
        assert_eq!(sparc(&config_speed(&t)).unwrap().value, 0.0);
    }

    #[test]
    fn driving_through_obstacle_collides() {
        let (m, sdf) = scene();
        let a = Config(vec![-0.5, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let b = Config(vec![2.5, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let t = Trajectory::linear(&a, &b, 30);
        let task = TaskSpec::goal_reach(a, m.fk_end_effector(&b));
        let r = score_trajectory(&m, &sdf, &t, &task, &EvalThresholds::default(), 0.0).unwrap();
        assert!(r.collision.any && r.collision.max_depth > 0.0);
        assert!(!r.success);
    }

    #[test]
    fn joint_violation_counts_entries() {
        let m = RobotModel::default();
        let mut t = Trajectory::linear(&Config::zeros(6), &Config::zeros(6), 5);
        t.steps_mut()[[2, 4]] = 3.0;
        t.steps_mut()[[3, 5]] = -3.0;
        assert!((joint_violation_rate(&m, &t) - 2.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn overlap_full_and_disjoint() {
        let ee = Pose2::new(1.0, 1.0, 0.0);
        let mut task = TaskSpec::place(Config::zeros(6), Vec::new());
        let obj = ee.compose(&task.grasp_offset_or_default());
        let b = bbox(&task.object_points_or_default());
        let corners = [[b[0], b[1]], [b[2], b[1]], [b[2], b[3]], [b[0], b[3]]];
        task.target_area_polygon = Some(corners.iter().map(|&c| obj.transform_point(c)).collect());
        assert!((placement_overlap(&task, &ee) - 1.0).abs() < 1e-12);
        assert_eq!(placement_overlap(&task, &Pose2::new(5.0, 5.0, 0.0)), 0.0);
    }

    fn row(planner: PlannerKind, success: bool, collide: bool, depth: f64) -> BenchmarkRow {
        BenchmarkRow {
            task_id: "t".into(),
            planner,
            seed: 0,
            success,
            pos_error: 0.0,
            ang_error: 0.0,
            collision_any: collide,
            max_depth: depth,
            joint_violation_rate: 0.0,
            sparc_config: -2.0,
            sparc_ee: -3.0,
            solve_time_s: 1.0,
        }
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        let rows = vec![
            row(PlannerKind::Guided, true, false, 0.0),
            row(PlannerKind::Guided, false, true, 0.2),
            row(PlannerKind::Guided, false, true, 0.1),
            row(PlannerKind::Langevin, false, true, 0.4),
            BenchmarkRow::failure("t", PlannerKind::Langevin, 1),
        ];
        let a = aggregate(&rows);
        assert_eq!(a.len(), 2);
        assert!((a[0].success_pct - 100.0 / 3.0).abs() < 1e-12);
        assert!((a[0].collision_pct - 200.0 / 3.0).abs() < 1e-12);
        assert!((a[0].mean_depth - 0.15).abs() < 1e-12);
        assert!((a[0].median_depth - 0.15).abs() < 1e-12);
        assert_eq!(a[1].rows, 2);
        assert_eq!(a[1].mean_sparc_config, -2.0);
        assert_eq!(a[1].mean_solve_time_s, 0.0);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rows.csv");
        let rows = vec![row(PlannerKind::Guided, true, false, 0.0), BenchmarkRow::failure("x", PlannerKind::Unguided, 3)];
        write_rows_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(
            "task_id,planner,seed,success,pos_error,ang_error,collision_any,max_depth,joint_violation_rate,sparc_config,sparc_ee,solve_time_s\n"
        ));
        let back = read_rows_csv(&p).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(back[1].pos_error.is_nan() && back[1].planner == PlannerKind::Unguided);
        write_rows_csv(&p, &[]).unwrap();
        assert!(read_rows_csv(&p).unwrap().is_empty());
    }
}
