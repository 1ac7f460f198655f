//! Expert demonstrations: inverse reach, CHOMP-style trajectory descent and
//! dataset generation.

use std::f64::consts::PI;
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::dataset::{write_dataset, DatasetRecord, Split};
use crate::error::{Error, Result};
use crate::kinematics::{wrap_angle, Config, Pose2, RobotModel, Trajectory};
use crate::objective::{evaluate_objective, CostWeights, TaskEnergy};
use crate::scene::{base_connected, build_sdf, generate_scene_with_witness, sample_task, GeneratorSpec, SceneFile, SceneSdf};
use crate::task::{TaskSpec, TaskType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub restarts: usize,
    pub descent_steps: usize,
    /// Initial step size; halved on failed line-search trials.
    pub step_size: f64,
    pub goal_ik_attempts: usize,
    pub horizon: usize,
    /// Cost weights for descent. The energy weight is ignored.
    pub weights: CostWeights,
    /// Minimum surface clearance of an IK goal configuration.
    pub ik_clearance: f64,
    pub max_penetration: f64,
    pub goal_pos_tol: f64,
    pub goal_ang_tol_deg: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            descent_steps: 400,
            step_size: 2e-3,
            goal_ik_attempts: 50,
            horizon: 50,
            weights: CostWeights {
                energy_weight: 0.0,
                epsilon_c: 0.05,
                ..CostWeights::default()
            },
            ik_clearance: 0.03,
            max_penetration: 0.0,
            goal_pos_tol: 0.04,
            goal_ang_tol_deg: 20.0,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = self.restarts > 0 && self.descent_steps > 0 && self.goal_ik_attempts > 0 && self.horizon >= 3;
        let thresholds = [self.max_penetration, self.goal_pos_tol, self.goal_ang_tol_deg, self.ik_clearance]
            .iter()
            .all(|v| *v >= 0.0);
        if !counts || !thresholds || !(self.step_size > 0.0) {
            return Err(Error::InvalidArgument("expert config needs positive counts and nonnegative thresholds".into()));
        }
        self.weights.validate()
    }
}

/// Minimum signed distance over all surface points of all steps.
pub fn min_clearance(model: &RobotModel, sdf: &SceneSdf, traj: &Trajectory) -> f64 {
    let mut m = f64::INFINITY;
    for row in traj.steps().outer_iter() {
        let chain = model.chain(row.as_slice().expect("contiguous"));
        model.for_each_surface_point(&chain, |_, p| m = m.min(sdf.value(p)));
    }
    m
}

fn pose_error(a: &Pose2, b: &Pose2) -> (f64, f64) {
    (
        (a.position[0] - b.position[0]).hypot(a.position[1] - b.position[1]),
        wrap_angle(a.heading - b.heading).abs(),
    )
}

/// End-effector poses that complete the task: the goal pose, each grasp
/// candidate, or the pose that carries the object onto the target area.
pub fn task_goal_poses(task: &TaskSpec) -> Vec<Pose2> {
    match task.task_type {
        TaskType::GoalReach => task.goal_pose.into_iter().collect(),
        TaskType::Grasp => task.grasp_candidates.clone().unwrap_or_default(),
        TaskType::Place => {
            let Some(poly) = task.target_area_polygon.as_ref().filter(|p| p.len() >= 3) else {
                return Vec::new();
            };
            let n = poly.len() as f64;
            let cx = poly.iter().map(|p| p[0]).sum::<f64>() / n;
            let cy = poly.iter().map(|p| p[1]).sum::<f64>() / n;
            let heading = (poly[1][1] - poly[0][1]).atan2(poly[1][0] - poly[0][0]);
            let object = Pose2::new(cx, cy, heading);
            let off = task.grasp_offset_or_default();
            // ee = object * off^-1
            let inv_heading = -off.heading;
            let p = crate::kinematics::rotate(inv_heading, [-off.position[0], -off.position[1]]);
            vec![object.compose(&Pose2::new(p[0], p[1], inv_heading))]
        }
    }
}

/// Damped-least-squares inverse reach. Attempt 0 starts from the reference
/// yaw and arm, later attempts from random ones; the base is placed so the
/// end effector starts at the goal position. Accepts a configuration within
/// the pose tolerances, inside joint limits, with clearance, and whose base
/// can drive to it from the reference base.
pub fn solve_goal_config(
    model: &RobotModel,
    sdf: &SceneSdf,
    goal: &Pose2,
    reference: &Config,
    cfg: &ExpertConfig,
    seed: u64,
) -> Result<Config> {
    let d = model.dof();
    if reference.len() != d {
        return Err(Error::dim("reference configuration has the wrong dof"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = model.lower_with_margin(0.05);
    let hi = model.upper_with_margin(0.05);
    for attempt in 0..cfg.goal_ik_attempts {
        let mut q = vec![0.0; d];
        if attempt == 0 {
            q[2] = reference.0[2];
            q[3..].copy_from_slice(&reference.0[3..]);
        } else {
            q[2] = rng.random_range(-PI..PI);
            for j in 3..d {
                q[j] = rng.random_range(lo[j]..hi[j]);
            }
        }
        let local = model.fk_end_effector(&Config(q.clone())).position;
        q[0] = goal.position[0] - local[0];
        q[1] = goal.position[1] - local[1];
        let mut q = Config(q);
        for _ in 0..100 {
            let ee = model.fk_end_effector(&q);
            let e = [
                goal.position[0] - ee.position[0],
                goal.position[1] - ee.position[1],
                wrap_angle(goal.heading - ee.heading),
            ];
            if e.iter().all(|v| v.abs() < 1e-9) {
                break;
            }
            let j = model.ee_jacobian(&q);
            let lambda2 = 1e-4;
            let mut m = j.dot(&j.t());
            for k in 0..3 {
                m[[k, k]] += lambda2;
            }
            let y = solve3(&m, e);
            for c in 0..d {
                q.0[c] += (0..3).map(|r| j[[r, c]] * y[r]).sum::<f64>();
            }
            for c in 3..d {
                q.0[c] = q.0[c].clamp(lo[c], hi[c]);
            }
        }
        let (pe, ae) = pose_error(&model.fk_end_effector(&q), goal);
        if pe > 1e-6 || ae > 1e-6 || !model.within_limits(&q.0) {
            continue;
        }
        if sdf.grid.cell_of([q.0[0], q.0[1]]).is_none()
            || crate::scene::clearance(model, sdf, &q) < cfg.ik_clearance
            || !base_connected(sdf, model.base_radius, [reference.0[0], reference.0[1]], [q.0[0], q.0[1]])
        {
            continue;
        }
        // Unwrap yaw so the straight line turns the short way.
        q.0[2] = reference.0[2] + wrap_angle(q.0[2] - reference.0[2]);
        return Ok(q);
    }
    Err(Error::UnreachableGoal {
        attempts: cfg.goal_ik_attempts,
    })
}

fn solve3(m: &Array2<f64>, b: [f64; 3]) -> [f64; 3] {
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let a = [
        [m[[0, 0]], m[[0, 1]], m[[0, 2]]],
        [m[[1, 0]], m[[1, 1]], m[[1, 2]]],
        [m[[2, 0]], m[[2, 1]], m[[2, 2]]],
    ];
    let dt = det(a);
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut ak = a;
        for r in 0..3 {
            ak[r][k] = b[r];
        }
        *o = det(ak) / dt;
    }
    out
}

/// Solves `A x = b` in place for the tridiagonal `A = tridiag(-1, 2, -1)`
/// (the first-difference metric on interior waypoints).
pub fn solve_metric(b: &mut [f64]) {
    let n = b.len();
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut denom = 2.0;
    c[0] = -1.0 / denom;
    b[0] /= denom;
    for i in 1..n {
        denom = 2.0 + c[i - 1];
        c[i] = -1.0 / denom;
        b[i] = (b[i] + b[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        b[i] -= c[i] * b[i + 1];
    }
}

/// Expert cost (collision, smoothness and limits) and its gradient.
fn expert_cost(model: &RobotModel, sdf: &SceneSdf, traj: &Trajectory, w: &CostWeights) -> Result<(f64, Array2<f64>)> {
    let energy = TaskEnergy::GoalReach { goal_points: Vec::new() };
    let w = CostWeights { energy_weight: 0.0, ..*w };
    let r = evaluate_objective(model, sdf, traj, &energy, &w, None)?;
    Ok((-r.total, -r.gradient))
}

/// One run of preconditioned descent with Armijo backtracking. Endpoints stay
/// fixed. Returns the final trajectory and the accepted cost sequence.
pub fn descend(
    model: &RobotModel,
    sdf: &SceneSdf,
    init: Trajectory,
    cfg: &ExpertConfig,
) -> Result<(Trajectory, Vec<f64>)> {
    let (h, d) = init.steps().dim();
    let mut traj = init;
    let (mut f, mut g) = expert_cost(model, sdf, &traj, &cfg.weights)?;
    let mut history = vec![f];
    let mut step = cfg.step_size;
    let max_step = cfg.step_size * 1e3;
    for _ in 0..cfg.descent_steps {
        if f == 0.0 {
            break;
        }
        let mut dir = Array2::<f64>::zeros((h, d));
        for j in 0..d {
            let mut col: Vec<f64> = (1..h - 1).map(|r| -g[[r, j]]).collect();
            solve_metric(&mut col);
            for (r, v) in col.into_iter().enumerate() {
                dir[[r + 1, j]] = v;
            }
        }
        let slope: f64 = (&g * &dir).sum();
        if !(slope < 0.0) {
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut cand = traj.steps().clone();
            cand.scaled_add(step, &dir);
            let cand = Trajectory::new(cand)?;
            let (fc, gc) = expert_cost(model, sdf, &cand, &cfg.weights)?;
            if fc <= f + 1e-4 * step * slope {
                traj = cand;
                f = fc;
                g = gc;
                accepted = true;
                step = (step * 2.0).min(max_step);
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        history.push(f);
        if history.len() > 20 && history[history.len() - 21] - f <= 1e-9 * (1.0 + f) {
            break;
        }
    }
    Ok((traj, history))
}

/// Checks the acceptance thresholds against a goal pose.
pub fn accepts(model: &RobotModel, sdf: &SceneSdf, traj: &Trajectory, goal: &Pose2, cfg: &ExpertConfig) -> bool {
    let last = traj.row(traj.horizon() - 1);
    let (pe, ae) = pose_error(&model.fk_end_effector(&last), goal);
    -min_clearance(model, sdf, traj) <= cfg.max_penetration
        && traj.steps().outer_iter().all(|r| model.within_limits(r.as_slice().expect("contiguous")))
        && pe <= cfg.goal_pos_tol
        && ae <= cfg.goal_ang_tol_deg.to_radians()
}

/// Multi-restart trajectory optimization from `q0` to `q_goal`. Restart 0 is
/// the straight line; later restarts add a random smooth detour. Returns the
/// lowest-cost restart that meets the acceptance thresholds.
pub fn optimize_trajectory(
    model: &RobotModel,
    sdf: &SceneSdf,
    q0: &Config,
    q_goal: &Config,
    cfg: &ExpertConfig,
    seed: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    let goal = model.fk_end_effector(q_goal);
    let h = cfg.horizon;
    let line = Trajectory::linear(q0, q_goal, h);
    let lo = model.lower_with_margin(cfg.weights.epsilon_l);
    let hi = model.upper_with_margin(cfg.weights.epsilon_l);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Trajectory)> = None;
    for restart in 0..cfg.restarts {
        let mut init = line.clone();
        if restart > 0 {
            let r = rng.random_range(0.2..1.2);
            let a = rng.random_range(-PI..PI);
            let mut delta = vec![r * a.cos(), r * a.sin(), 0.5 * rng.sample::<f64, _>(StandardNormal)];
            delta.extend((3..model.dof()).map(|_| rng.random_range(-1.0..1.0)));
            for k in 1..h - 1 {
                let bump = (PI * k as f64 / (h - 1) as f64).sin();
                let mut row = init.steps_mut().row_mut(k);
                for (j, v) in row.iter_mut().enumerate() {
                    *v += bump * delta[j];
                    if j >= 3 {
                        *v = v.clamp(lo[j], hi[j]);
                    }
                }
            }
        }
        let (traj, history) = descend(model, sdf, init, cfg)?;
        let f = *history.last().expect("nonempty");
        if accepts(model, sdf, &traj, &goal, cfg) && best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, traj));
        }
        if best.as_ref().is_some_and(|(bf, _)| *bf == 0.0) {
            break;
        }
    }
    best.map(|(_, t)| t).ok_or(Error::PlanningFailed)
}

/// Inverse reach plus descent for one task; tries each goal pose in turn.
pub fn solve_task(model: &RobotModel, sdf: &SceneSdf, task: &TaskSpec, cfg: &ExpertConfig, seed: u64) -> Result<Trajectory> {
    task.validate(model)?;
    let mut last = Error::PlanningFailed;
    for (k, goal) in task_goal_poses(task).iter().enumerate() {
        let s = seed.wrapping_mul(31).wrapping_add(k as u64);
        match solve_goal_config(model, sdf, goal, &task.start, cfg, s)
            .and_then(|q| optimize_trajectory(model, sdf, &task.start, &q, cfg, s))
        {
            Ok(t) => return Ok(t),
            Err(e) => last = e,
        }
    }
    Err(last)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discard {
    pub seed: u64,
    pub task: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seeds: Vec<u64>,
    pub tasks_per_scene: usize,
    pub solved: usize,
    pub discarded: usize,
    pub split: SplitCounts,
    pub discards: Vec<Discard>,
    pub generator: GeneratorSpec,
    pub expert: ExpertConfig,
}

/// Split of the `i`-th stored record: every tenth goes to test.
pub fn split_for(index: usize) -> Split {
    if index % 10 == 9 {
        Split::Test
    } else {
        Split::Train
    }
}

pub fn scene_file_name(seed: u64) -> String {
    format!("scenes/scene_{seed:06}.json")
}

struct SceneOutcome {
    seed: u64,
    scene: SceneFile,
    solved: Vec<(TaskSpec, Trajectory)>,
    discards: Vec<Discard>,
}

fn task_seed(scene_seed: u64, task: usize) -> u64 {
    scene_seed.wrapping_mul(1_000_003).wrapping_add(task as u64)
}

fn solve_scene(model: &RobotModel, seed: u64, tasks: usize, gen: &GeneratorSpec, cfg: &ExpertConfig) -> Result<SceneOutcome> {
    let generated = generate_scene_with_witness(model, seed, gen)?;
    let sdf = build_sdf(&generated.grid)?;
    let mut specs = vec![generated.task.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, usize::MAX));
    let mut tries = 0;
    while specs.len() < tasks && tries < tasks * 20 {
        tries += 1;
        if let Some((t, _)) = sample_task(model, &sdf, gen, &mut rng) {
            specs.push(t);
        }
    }
    specs.truncate(tasks);
    let mut solved = Vec::new();
    let mut discards = Vec::new();
    for (k, task) in specs.into_iter().enumerate() {
        match solve_task(model, &sdf, &task, cfg, task_seed(seed, k)) {
            Ok(t) => solved.push((task, t)),
            Err(e) => {
                log::warn!("scene {seed} task {k} discarded: {e}");
                discards.push(Discard {
                    seed,
                    task: k,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(SceneOutcome {
        seed,
        scene: SceneFile::new(&generated.grid, generated.task.clone()),
        solved,
        discards,
    })
}

/// Generates scenes for `scene_seeds`, solves `tasks_per_scene` tasks in
/// each, and writes `scenes/`, `dataset.jsonl` and `manifest.json` into
/// `out_dir`. Scenes are solved in parallel and written in seed order.
pub fn generate_dataset(
    model: &RobotModel,
    scene_seeds: Range<u64>,
    tasks_per_scene: usize,
    gen: &GeneratorSpec,
    cfg: &ExpertConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    gen.validate()?;
    let seeds: Vec<u64> = scene_seeds.collect();
    let outcomes: Vec<Result<SceneOutcome>> = seeds
        .par_iter()
        .map(|&s| solve_scene(model, s, tasks_per_scene, gen, cfg))
        .collect();
    let scenes_dir = out_dir.join("scenes");
    std::fs::create_dir_all(&scenes_dir).map_err(|e| Error::io(&scenes_dir, e))?;
    let mut records = Vec::new();
    let mut discards = Vec::new();
    for (seed, outcome) in seeds.iter().zip(outcomes) {
        let o = match outcome {
            Ok(o) => o,
            Err(e) => {
                log::warn!("scene {seed} failed: {e}");
                discards.push(Discard {
                    seed: *seed,
                    task: 0,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let name = scene_file_name(o.seed);
        o.scene.save(&out_dir.join(&name))?;
        for (task, traj) in &o.solved {
            let split = split_for(records.len());
            records.push(DatasetRecord::new(name.clone(), task, traj.steps(), split));
        }
        discards.extend(o.discards);
    }
    write_dataset(&out_dir.join("dataset.jsonl"), &records)?;
    let test = records.iter().filter(|r| r.split == Split::Test).count();
    let manifest = DatasetManifest {
        seeds,
        tasks_per_scene,
        solved: records.len(),
        discarded: discards.len(),
        split: SplitCounts {
            train: records.len() - test,
            test,
        },
        discards,
        generator: gen.clone(),
        expert: cfg.clone(),
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
