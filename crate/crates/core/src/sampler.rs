//! Guided reverse diffusion and the inverse-Langevin baseline.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::frame::{gradient_to_local, to_local, to_world};
use crate::diffusion::model::{point_features, Denoiser, Layout};
use crate::diffusion::{Checkpoint, NoiseSchedule, Normalizer};
use crate::error::{Error, Result};
use crate::kinematics::{Config, RobotModel, Trajectory};
use crate::objective::{CostWeights, GuidanceObjective, Objective, ObjectiveReport, TaskEnergy, DEFAULT_GRAD_CLIP};
use crate::scene::{sample_scene_points, SceneSdf, ScenePoints};
use crate::task::TaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub weights: CostWeights,
    /// Task energy; derived from the task when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<TaskEnergy>,
    /// Extra refinement steps at `t = 1` after the main loop.
    #[serde(rename = "K")]
    pub extra_steps: usize,
    pub guidance_enabled: bool,
    pub seed: u64,
    /// Per-element clip on the normalized-space guidance gradient.
    pub grad_clip: Option<f64>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            weights: CostWeights::default(),
            energy: None,
            extra_steps: 10,
            guidance_enabled: true,
            seed: 0,
            grad_clip: Some(DEFAULT_GRAD_CLIP),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LangevinConfig {
    pub steps: usize,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub seed: u64,
    pub grad_clip: Option<f64>,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            alpha_start: 0.1,
            alpha_end: 0.005,
            seed: 0,
            grad_clip: Some(DEFAULT_GRAD_CLIP),
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.alpha_end > 0.0) || !(self.alpha_end <= self.alpha_start) {
            return Err(Error::InvalidArgument(
                "langevin needs steps >= 1 and 0 < alpha_end <= alpha_start".into(),
            ));
        }
        Ok(())
    }

    /// Geometric decay from `alpha_start` to `alpha_end`.
    pub fn alphas(&self) -> Vec<f64> {
        let n = self.steps;
        (0..n)
            .map(|k| {
                if n == 1 {
                    self.alpha_start
                } else {
                    self.alpha_start * (self.alpha_end / self.alpha_start).powf(k as f64 / (n - 1) as f64)
                }
            })
            .collect()
    }
}

/// Maps a world-frame gradient of `phi` to the normalized local frame: rotated
/// into the start frame, then divided by the normalizer scale so the resulting
/// shift `Σ_t g` moves the physical trajectory by `Σ_t ∇φ`.
pub fn gradient_to_normalized(world_grad: &Array2<f64>, q0: &Config, normalizer: &Normalizer) -> Array2<f64> {
    let mut g = gradient_to_local(world_grad, q0);
    let s = normalizer.scale();
    for mut row in g.outer_iter_mut() {
        for (v, sj) in row.iter_mut().zip(&s) {
            *v /= sj;
        }
    }
    g
}

/// Normalized-space trajectory to a world-frame one.
pub fn normalized_to_world(u: &Array2<f64>, q0: &Config, normalizer: &Normalizer) -> Array2<f64> {
    to_world(&normalizer.denormalize(u), q0)
}

/// `q0` in the normalized local frame.
pub fn normalized_start(q0: &Config, normalizer: &Normalizer) -> Vec<f64> {
    let row = Array2::from_shape_vec((1, q0.0.len()), q0.0.clone()).expect("row shape");
    normalizer.normalize_row(to_local(&row, q0).row(0).as_slice().expect("contiguous"))
}

fn clamp_row0(tau: &mut Array2<f64>, row0: &[f64]) {
    for (v, r) in tau.row_mut(0).iter_mut().zip(row0) {
        *v = *r;
    }
}

fn world_trajectory(u: &Array2<f64>, q0: &Config, normalizer: &Normalizer) -> Result<Trajectory> {
    Trajectory::new(normalized_to_world(u, q0, normalizer)).map_err(|_| Error::NonFinite { term: "denoiser" })
}

fn clipped(mut g: Array2<f64>, clip: Option<f64>) -> Result<Array2<f64>> {
    if let Some(c) = clip {
        g.mapv_inplace(|v| v.clamp(-c, c));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { term: "guidance" });
    }
    Ok(g)
}

/// Result of one reverse step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub tau: Array2<f64>,
    /// Objective evaluated at the denormalized posterior mean.
    pub report: ObjectiveReport,
}

/// One planning problem bound to a checkpoint: scene encoding, start state
/// and objective are fixed across steps.
pub struct GuidedSampler<'a> {
    net: Denoiser<'a, f32>,
    codes: Array2<f32>,
    schedule: &'a NoiseSchedule,
    normalizer: &'a Normalizer,
    q0: Config,
    row0: Vec<f64>,
    objective: &'a dyn GuidanceObjective,
    guidance: bool,
    grad_clip: Option<f64>,
}

impl<'a> GuidedSampler<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        checkpoint: &'a Checkpoint,
        layout: &'a Layout,
        points: &ScenePoints,
        q0: &Config,
        objective: &'a dyn GuidanceObjective,
        guidance: bool,
        grad_clip: Option<f64>,
    ) -> Result<Self> {
        let arch = &checkpoint.arch;
        if q0.0.len() != arch.dof {
            return Err(Error::dim(format!("start has {} dof, checkpoint expects {}", q0.0.len(), arch.dof)));
        }
        if arch.horizon < 3 {
            return Err(Error::dim("planning needs a horizon of at least 3"));
        }
        let net = Denoiser::new(layout, &checkpoint.params);
        let feats = point_features::<f32>(&points.points, &points.labels);
        let (codes, _) = net.encode_scene(&feats, points.len());
        Ok(Self {
            net,
            codes,
            schedule: &checkpoint.schedule,
            normalizer: &checkpoint.normalizer,
            q0: q0.clone(),
            row0: normalized_start(q0, &checkpoint.normalizer),
            objective,
            guidance,
            grad_clip,
        })
    }

    pub fn horizon(&self) -> usize {
        self.net.layout.arch.horizon
    }

    pub fn dof(&self) -> usize {
        self.net.layout.arch.dof
    }

    pub fn start_row(&self) -> &[f64] {
        &self.row0
    }

    /// Initial `tau_T ~ N(0, I)` with row 0 clamped.
    pub fn initial(&self, rng: &mut impl Rng) -> Array2<f64> {
        let mut tau = Array2::from_shape_simple_fn((self.horizon(), self.dof()), || rng.sample(StandardNormal));
        clamp_row0(&mut tau, &self.row0);
        tau
    }

    /// Predicted noise for a single trajectory.
    pub fn predict_noise(&self, tau_t: &Array2<f64>, t: usize) -> Array2<f64> {
        let x = tau_t.mapv(|v| v as f32);
        let (eps, _) = self.net.forward_trunk(&x, &[t], &self.codes);
        eps.mapv(f64::from)
    }

    /// The guidance shift direction `g` at a normalized trajectory, plus the
    /// objective report there.
    pub fn guidance_at(&self, u: &Array2<f64>) -> Result<(Array2<f64>, ObjectiveReport)> {
        let report = self.objective.evaluate(&world_trajectory(u, &self.q0, self.normalizer)?)?;
        let g = if self.guidance {
            clipped(gradient_to_normalized(&report.gradient, &self.q0, self.normalizer), self.grad_clip)?
        } else {
            Array2::zeros(u.dim())
        };
        Ok((g, report))
    }

    /// `tau_{t-1} = mu_t + Sigma_t g + sqrt(Sigma_t) z`, then row 0 clamped.
    pub fn step_with_noise(&self, tau_t: &Array2<f64>, t: usize, z: &Array2<f64>) -> Result<StepOutput> {
        let eps = self.predict_noise(tau_t, t);
        let mu = self.schedule.posterior_mean(tau_t, t, &eps);
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { term: "denoiser" });
        }
        let (g, report) = self.guidance_at(&mu)?;
        let var = self.schedule.sigma2(t);
        let mut tau = mu;
        tau.scaled_add(var, &g);
        tau.scaled_add(var.sqrt(), z);
        clamp_row0(&mut tau, &self.row0);
        Ok(StepOutput { tau, report })
    }

    /// One reverse step. No noise is added at `t = 1`.
    pub fn step(&self, tau_t: &Array2<f64>, t: usize, rng: &mut impl Rng) -> Result<StepOutput> {
        let z = if t > 1 {
            Array2::from_shape_simple_fn(tau_t.dim(), || rng.sample(StandardNormal))
        } else {
            Array2::zeros(tau_t.dim())
        };
        self.step_with_noise(tau_t, t, &z)
    }

    pub fn to_world(&self, u: &Array2<f64>) -> Result<Trajectory> {
        let mut steps = normalized_to_world(u, &self.q0, self.normalizer);
        for (v, q) in steps.row_mut(0).iter_mut().zip(&self.q0.0) {
            *v = *q;
        }
        Trajectory::new(steps).map_err(|_| Error::NonFinite { term: "denoiser" })
    }
}

/// One row of the per-step objective trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub phi: f64,
    pub e: f64,
    pub c_collision: f64,
    pub c_smoothness: f64,
    pub c_limit: f64,
}

impl StepTrace {
    fn new(step: usize, r: &ObjectiveReport) -> Self {
        Self {
            step,
            phi: r.total,
            e: r.energy,
            c_collision: r.collision,
            c_smoothness: r.smoothness,
            c_limit: r.limit,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PlanDiagnostics {
    /// Objective at each step's posterior mean, in execution order
    /// (`T` main steps then `K` extra steps).
    pub trace: Vec<StepTrace>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub trajectory: Trajectory,
    pub diagnostics: PlanDiagnostics,
}

/// Runs the full reverse chain for an already-bound sampler.
pub fn run_sampler(sampler: &GuidedSampler<'_>, extra_steps: usize, seed: u64) -> Result<Plan> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tau = sampler.initial(&mut rng);
    let steps = sampler.schedule.steps();
    let mut trace = Vec::with_capacity(steps + extra_steps);
    let schedule_t = (1..=steps).rev().chain(std::iter::repeat_n(1, extra_steps));
    for (k, t) in schedule_t.enumerate() {
        let out = sampler.step(&tau, t, &mut rng)?;
        trace.push(StepTrace::new(k, &out.report));
        tau = out.tau;
    }
    let trajectory = sampler.to_world(&tau)?;
    Ok(Plan {
        trajectory,
        diagnostics: PlanDiagnostics {
            trace,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    })
}

/// Plans a trajectory for `task` in `sdf` with the given checkpoint.
pub fn plan(
    model: &RobotModel,
    checkpoint: &Checkpoint,
    sdf: &SceneSdf,
    task: &TaskSpec,
    cfg: &GuidanceConfig,
) -> Result<Plan> {
    task.validate(model)?;
    cfg.weights.validate()?;
    if checkpoint.arch.dof != model.dof() {
        return Err(Error::dim(format!(
            "checkpoint has {} dof, robot has {}",
            checkpoint.arch.dof,
            model.dof()
        )));
    }
    let energy = cfg.energy.clone().unwrap_or_else(|| TaskEnergy::from_task(model, task));
    let objective = Objective {
        model,
        sdf,
        energy,
        weights: cfg.weights,
        grad_clip: None,
    };
    let points = sample_scene_points(model, sdf, task, checkpoint.point_counts, cfg.seed);
    let layout = Layout::new(&checkpoint.arch);
    let sampler = GuidedSampler::new(
        checkpoint,
        &layout,
        &points,
        &task.start,
        &objective,
        cfg.guidance_enabled,
        cfg.grad_clip,
    )?;
    run_sampler(&sampler, cfg.extra_steps, cfg.seed)
}

/// Inverse-Langevin baseline: `tau <- tau + 0.5 a_k^2 grad phi + a_k eps` in
/// the normalized local frame, starting from `N(0, I)`.
pub fn langevin_plan(
    objective: &dyn GuidanceObjective,
    normalizer: &Normalizer,
    q0: &Config,
    horizon: usize,
    cfg: &LangevinConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    langevin_plan_with_schedule(objective, normalizer, q0, horizon, &cfg.alphas(), cfg.seed, cfg.grad_clip)
}

/// [`langevin_plan`] with an explicit step-size sequence.
pub fn langevin_plan_with_schedule(
    objective: &dyn GuidanceObjective,
    normalizer: &Normalizer,
    q0: &Config,
    horizon: usize,
    alphas: &[f64],
    seed: u64,
    grad_clip: Option<f64>,
) -> Result<Trajectory> {
    let d = normalizer.dim();
    if q0.0.len() != d {
        return Err(Error::dim(format!("start has {} dof, normalizer has {d}", q0.0.len())));
    }
    if horizon < 2 {
        return Err(Error::dim("langevin needs a horizon of at least 2"));
    }
    let row0 = normalized_start(q0, normalizer);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tau = Array2::from_shape_simple_fn((horizon, d), || rng.sample(StandardNormal));
    clamp_row0(&mut tau, &row0);
    for &a in alphas {
        let report = objective.evaluate(&world_trajectory(&tau, q0, normalizer)?)?;
        let g = clipped(gradient_to_normalized(&report.gradient, q0, normalizer), grad_clip)?;
        let z: Array2<f64> = Array2::from_shape_simple_fn((horizon, d), || rng.sample(StandardNormal));
        tau.scaled_add(0.5 * a * a, &g);
        tau.scaled_add(a, &z);
        clamp_row0(&mut tau, &row0);
    }
    let mut steps = normalized_to_world(&tau, q0, normalizer);
    for (v, q) in steps.row_mut(0).iter_mut().zip(&q0.0) {
        *v = *q;
    }
    Trajectory::new(steps)
}
