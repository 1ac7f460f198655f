//! Denoiser training: noise-prediction loss, Adam, loss curve.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::dataset::Example;
use super::frame::to_local;
use super::model::{point_features, Arch, Denoiser, Layout, Real};
use super::normalizer::Normalizer;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::scene::ScenePointCounts;

/// Samples per gradient work unit. Fixed so results do not depend on the
/// number of worker threads.
pub const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Number of diffusion steps `T`.
    pub steps: usize,
    /// Network shape; defaults to [`Arch::new`] for the data's `d` and `H`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch: Option<Arch>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 200,
            seed: 0,
            steps: 50,
            arch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 || self.steps == 0 {
            return Err(Error::InvalidArgument("training config needs lr >= 0, batch_size > 0, steps > 0".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f32, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Per-sample squared error `sum (eps_hat - eps)^2` and the parameter
/// gradient of `scale * sum_i loss_i` for a stacked batch.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grad<A: Real>(
    layout: &Layout,
    params: &[A],
    x_t: &Array2<A>,
    t: &[usize],
    eps: &Array2<A>,
    feats: &Array2<A>,
    m: usize,
    scale: A,
) -> (Vec<f64>, Vec<A>) {
    let h = layout.arch.horizon;
    let net = Denoiser::new(layout, params);
    let (codes, enc) = net.encode_scene(feats, m);
    let (eps_hat, cache) = net.forward_trunk(x_t, t, &codes);
    let diff = &eps_hat - eps;
    let losses = (0..t.len())
        .map(|k| {
            diff.slice(s![k * h..(k + 1) * h, ..])
                .iter()
                .map(|v| {
                    let v = v.to_f64().unwrap_or(f64::NAN);
                    v * v
                })
                .sum()
        })
        .collect();
    let two = A::one() + A::one();
    let dy = diff.mapv(|v| v * two * scale);
    let mut grads = vec![A::zero(); params.len()];
    let dcodes = net.backward_trunk(&cache, &dy, &mut grads);
    net.backward_encoder(&enc, &dcodes, &mut grads);
    (losses, grads)
}

/// Draws `t ~ U{1..T}` and `eps ~ N(0, I)` per sample and noises the stack.
/// Each sample's first row is left clean.
pub fn noise_batch<A: Real>(schedule: &NoiseSchedule, tau0: &Array2<A>, horizon: usize, rng: &mut impl Rng) -> (Vec<usize>, Array2<A>, Array2<A>) {
    let b = tau0.nrows() / horizon;
    let mut t = Vec::with_capacity(b);
    let mut eps = Array2::zeros(tau0.dim());
    let mut x = Array2::zeros(tau0.dim());
    for k in 0..b {
        let tk = rng.random_range(1..=schedule.steps());
        t.push(tk);
        let ab = schedule.alpha_bar(tk);
        let (ca, cb) = (A::from_f64(ab.sqrt()).unwrap(), A::from_f64((1.0 - ab).sqrt()).unwrap());
        for r in k * horizon..(k + 1) * horizon {
            for j in 0..tau0.ncols() {
                let e: f64 = rng.sample(StandardNormal);
                let e = A::from_f64(e).unwrap();
                eps[[r, j]] = e;
                x[[r, j]] = ca * tau0[[r, j]] + cb * e;
            }
        }
        // Start row stays clean, matching the clamp applied at sampling time.
        let r0 = k * horizon;
        for j in 0..tau0.ncols() {
            x[[r0, j]] = tau0[[r0, j]];
        }
    }
    (t, eps, x)
}

/// Mean noise-prediction loss over a batch and its exact parameter gradient.
#[allow(clippy::too_many_arguments)]
pub fn training_loss<A: Real>(
    layout: &Layout,
    params: &[A],
    schedule: &NoiseSchedule,
    tau0: &Array2<A>,
    feats: &Array2<A>,
    m: usize,
    rng: &mut impl Rng,
) -> Result<(f64, Vec<A>)> {
    let (t, eps, x) = noise_batch(schedule, tau0, layout.arch.horizon, rng);
    if t.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scale = A::from_f64(1.0 / t.len() as f64).unwrap();
    let (losses, grads) = loss_and_grad(layout, params, &x, &t, &eps, feats, m, scale);
    if let Some(k) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFiniteLoss { sample: k });
    }
    Ok((losses.iter().sum::<f64>() / t.len() as f64, grads))
}

/// Training tensors: normalized local-frame trajectories and point features.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tau0: Vec<Array2<f32>>,
    pub feats: Vec<Array2<f32>>,
    pub points_per_sample: usize,
}

impl Prepared {
    pub fn new(examples: &[Example], normalizer: &Normalizer) -> Result<Self> {
        let m = examples.first().map_or(0, |e| e.points.len());
        let mut tau0 = Vec::with_capacity(examples.len());
        let mut feats = Vec::with_capacity(examples.len());
        for e in examples {
            if e.points.len() != m {
                return Err(Error::dim("examples have differing scene point counts"));
            }
            tau0.push(normalizer.normalize(&to_local(&e.trajectory, &e.q0)).mapv(|v| v as f32));
            feats.push(point_features::<f32>(&e.points.points, &e.points.labels));
        }
        Ok(Self {
            tau0,
            feats,
            points_per_sample: m,
        })
    }

    pub fn len(&self) -> usize {
        self.tau0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau0.is_empty()
    }

    fn stack(&self, idx: &[usize]) -> (Array2<f32>, Array2<f32>) {
        let taus: Vec<_> = idx.iter().map(|&i| self.tau0[i].view()).collect();
        let fs: Vec<_> = idx.iter().map(|&i| self.feats[i].view()).collect();
        (
            ndarray::concatenate(ndarray::Axis(0), &taus).expect("uniform shapes"),
            ndarray::concatenate(ndarray::Axis(0), &fs).expect("uniform shapes"),
        )
    }
}

/// Fixed noising draws for the held-out loss.
struct HeldOut {
    chunks: Vec<(Vec<usize>, Array2<f32>, Array2<f32>, Array2<f32>)>,
    count: usize,
}

impl HeldOut {
    fn new(data: &Prepared, schedule: &NoiseSchedule, horizon: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<usize> = (0..data.len()).collect();
        let chunks = idx
            .chunks(CHUNK)
            .map(|c| {
                let (tau, feats) = data.stack(c);
                let (t, eps, x) = noise_batch(schedule, &tau, horizon, &mut rng);
                (t, eps, x, feats)
            })
            .collect();
        Self {
            chunks,
            count: data.len(),
        }
    }

    fn loss(&self, layout: &Layout, params: &[f32], m: usize) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        let h = layout.arch.horizon;
        let net = Denoiser::new(layout, params);
        let total: f64 = self
            .chunks
            .par_iter()
            .map(|(t, eps, x, feats)| {
                let y = net.forward(x, t, feats, m);
                (&y - eps).iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        let _ = h;
        total / self.count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Entry 0 is the untrained model; entry `k` follows epoch `k`.
    pub curve: Vec<EpochLoss>,
}

/// Trains a denoiser. `heldout` may be empty, in which case the held-out
/// loss is reported as NaN.
pub fn train(train_set: &[Example], heldout: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(train_set, heldout, cfg, |_| {})
}

pub fn train_with_callback(
    train_set: &[Example],
    heldout: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (h, d) = train_set[0].trajectory.dim();
    if train_set.iter().chain(heldout).any(|e| e.trajectory.dim() != (h, d)) {
        return Err(Error::dim("examples have differing trajectory shapes"));
    }
    let arch = cfg.arch.clone().unwrap_or_else(|| Arch::new(d, h));
    if arch.dof != d || arch.horizon != h {
        return Err(Error::dim(format!(
            "architecture is {}x{}, data is {h}x{d}",
            arch.horizon, arch.dof
        )));
    }
    let local: Vec<Array2<f64>> = train_set.iter().map(|e| to_local(&e.trajectory, &e.q0)).collect();
    let normalizer = Normalizer::fit(local.iter().map(|a| a.view()))?;
    let schedule = NoiseSchedule::ddpm_linear(cfg.steps)?;
    let data = Prepared::new(train_set, &normalizer)?;
    let held = Prepared::new(heldout, &normalizer)?;
    let m = data.points_per_sample;
    if !held.is_empty() && held.points_per_sample != m {
        return Err(Error::dim("held-out scene point count differs from training"));
    }
    let mut ck = Checkpoint::untrained(arch, normalizer, schedule.clone(), cfg.seed)?;
    ck.point_counts = infer_counts(&train_set[0]);
    let layout = Layout::new(&ck.arch);
    let held_draws = HeldOut::new(&held, &schedule, h, cfg.seed.wrapping_add(0x5eed));
    let mut adam = Adam::new(cfg.learning_rate as f32, ck.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = vec![EpochLoss {
        epoch: 0,
        train_loss: f64::NAN,
        heldout_loss: held_draws.loss(&layout, &ck.params, m),
    }];
    on_epoch(&curve[0]);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f32;
            // Draw all noise up front, sequentially, so it is independent of
            // how chunks are scheduled.
            let work: Vec<_> = batch
                .chunks(CHUNK)
                .map(|c| {
                    let (tau, feats) = data.stack(c);
                    let (t, eps, x) = noise_batch(&schedule, &tau, h, &mut rng);
                    (c, t, eps, x, feats)
                })
                .collect();
            let results: Vec<(Vec<f64>, Vec<f32>)> = work
                .par_iter()
                .map(|(_, t, eps, x, feats)| loss_and_grad(&layout, &ck.params, x, t, eps, feats, m, scale))
                .collect();
            let mut grads = vec![0.0f32; ck.params.len()];
            for ((c, ..), (losses, g)) in work.iter().zip(&results) {
                if let Some(k) = losses.iter().position(|l| !l.is_finite()) {
                    return Err(Error::NonFiniteLoss { sample: c[k] });
                }
                epoch_loss += losses.iter().sum::<f64>();
                for (a, b) in grads.iter_mut().zip(g) {
                    *a += *b;
                }
            }
            adam.step(&mut ck.params, &grads);
        }
        let e = EpochLoss {
            epoch,
            train_loss: epoch_loss / data.len() as f64,
            heldout_loss: held_draws.loss(&layout, &ck.params, m),
        };
        log::info!("epoch {epoch}: train {:.4} held-out {:.4}", e.train_loss, e.heldout_loss);
        on_epoch(&e);
        curve.push(e);
    }
    ck.validate()?;
    Ok(TrainOutcome { checkpoint: ck, curve })
}

fn infer_counts(e: &Example) -> ScenePointCounts {
    let scene = e
        .points
        .labels
        .iter()
        .filter(|l| **l == crate::scene::PointClass::Scene)
        .count();
    ScenePointCounts {
        scene,
        task: e.points.len() - scene,
    }
}

pub fn write_loss_curve(path: &Path, curve: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in curve {
        w.serialize(e)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Config;
    use crate::scene::{PointClass, ScenePoints};

    fn tiny_arch() -> Arch {
        Arch {
            dof: 6,
            horizon: 8,
            encoder_hidden: 8,
            scene_code: 8,
            time_dim: 8,
            width: 16,
            hidden: 16,
            blocks: 2,
            kernel: 3,
        }
    }

    fn example(shift: f64) -> Example {
        let a = Config(vec![0.0, 0.0, 0.0, 0.1, 0.2, 0.3]);
        let b = Config(vec![1.0 + shift, 0.5, 0.4, -0.2, 0.5, 0.0]);
        let traj = crate::kinematics::Trajectory::linear(&a, &b, 8).into_array();
        let points = ScenePoints {
            points: vec![[0.5, 0.5], [1.0, -0.3], [1.0 + shift, 0.5]],
            labels: vec![PointClass::Scene, PointClass::Scene, PointClass::Goal],
            padded: false,
        };
        Example {
            trajectory: traj,
            q0: a,
            points,
        }
    }

    #[test]
    fn perfect_and_zero_predictors() {
        let s = NoiseSchedule::ddpm_linear(50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tau = Array2::<f64>::zeros((50 * 40, 6));
        let (_, eps, _) = noise_batch(&s, &tau, 50, &mut rng);
        // A predictor that returns the drawn noise has zero loss.
        assert_eq!((&eps - &eps).mapv(|v| v * v).sum(), 0.0);
        // The zero predictor's loss is E|eps|^2 = H d per sample.
        let per_sample = eps.mapv(|v| v * v).sum() / 40.0;
        let sd = (2.0 * 300.0f64).sqrt() / 40f64.sqrt();
        assert!((per_sample - 300.0).abs() < 4.0 * sd, "{per_sample}");
    }

    #[test]
    fn loss_gradient_matches_fd() {
        let arch = tiny_arch();
        let layout = Layout::new(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params: Vec<f64> = (0..layout.num_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let exs = [example(0.0), example(0.3)];
        let n = Normalizer::fit(exs.iter().map(|e| e.trajectory.view())).unwrap();
        let prep = Prepared::new(&exs, &n).unwrap();
        let (tau, feats) = prep.stack(&[0, 1]);
        let (tau, feats) = (tau.mapv(|v| v as f64), feats.mapv(|v| v as f64));
        let s = NoiseSchedule::ddpm_linear(50).unwrap();
        let (_, g) = training_loss(&layout, &params, &s, &tau, &feats, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut checked = 0;
        for k in 0..40 {
            let idx = (k * 104729) % params.len();
            let step = 1e-5;
            let mut a = params.clone();
            let mut b = params.clone();
            a[idx] += step;
            b[idx] -= step;
            let fa = training_loss(&layout, &a, &s, &tau, &feats, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().0;
            let fb = training_loss(&layout, &b, &s, &tau, &feats, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().0;
            let num = (fa - fb) / (2.0 * step);
            let err = (num - g[idx]).abs() / num.abs().max(g[idx].abs()).max(1e-4);
            assert!(err < 1e-3, "param {idx}: analytic {} fd {num}", g[idx]);
            checked += 1;
        }
        assert_eq!(checked, 40);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 2,
            arch: Some(tiny_arch()),
            ..Default::default()
        };
        let exs = vec![example(0.0), example(0.2), example(0.4)];
        let out = train(&exs, &[], &cfg).unwrap();
        assert_eq!(out.checkpoint.params, Layout::new(&tiny_arch()).init(cfg.seed));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 3,
            batch_size: 2,
            arch: Some(tiny_arch()),
            ..Default::default()
        };
        let exs = vec![example(0.0), example(0.2), example(0.4)];
        let a = train(&exs, &exs[..1], &cfg).unwrap();
        let b = train(&exs, &exs[..1], &cfg).unwrap();
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        let bits = |c: &[EpochLoss]| -> Vec<(u64, u64)> {
            c.iter().map(|e| (e.train_loss.to_bits(), e.heldout_loss.to_bits())).collect()
        };
        assert_eq!(bits(&a.curve), bits(&b.curve));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(train(&[], &[], &TrainConfig::default()), Err(Error::EmptyDataset)));
    }
}
