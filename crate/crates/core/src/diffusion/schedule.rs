use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete DDPM noise schedule. Index `t` runs over `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleJson {
    betas: Vec<f64>,
}

impl Serialize for NoiseSchedule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ScheduleJson {
            betas: self.betas.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NoiseSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ScheduleJson::deserialize(d)?;
        NoiseSchedule::from_betas(j.betas).map_err(serde::de::Error::custom)
    }
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) || betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("betas must lie in (0, 1) and be nondecreasing".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let posterior_vars = (0..betas.len())
            .map(|k| {
                let prev = if k == 0 { 1.0 } else { alpha_bars[k - 1] };
                (1.0 - prev) / (1.0 - alpha_bars[k]) * betas[k]
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            posterior_vars,
        })
    }

    /// Linear betas from `start` to `end` inclusive.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        let betas = (0..steps)
            .map(|k| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * k as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// The 1000-step linear schedule (1e-4 to 2e-2) compressed to `steps`
    /// steps by scaling both ends by `1000 / steps`, capped at 0.999.
    pub fn ddpm_linear(steps: usize) -> Result<Self> {
        let k = 1000.0 / steps.max(1) as f64;
        Self::linear(steps, (1e-4 * k).min(0.999), (2e-2 * k).min(0.999))
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    fn check(&self, t: usize) {
        assert!(t >= 1 && t <= self.steps(), "diffusion step {t} outside 1..={}", self.steps());
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.check(t);
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.check(t);
        self.alphas[t - 1]
    }

    /// Cumulative product; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.check(t);
            self.alpha_bars[t - 1]
        }
    }

    /// Posterior variance `((1 - abar_{t-1}) / (1 - abar_t)) beta_t`; zero at `t = 1`.
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.check(t);
        self.posterior_vars[t - 1]
    }

    /// Reverse-process variance used for sampling and guidance scaling.
    /// The posterior variance, with step 1 borrowing step 2's value so the
    /// guidance shift does not vanish on the final steps.
    pub fn sigma2(&self, t: usize) -> f64 {
        self.check(t);
        if t == 1 && self.steps() > 1 {
            self.posterior_vars[1]
        } else {
            self.posterior_vars[t - 1]
        }
    }

    /// `sqrt(abar_t) tau0 + sqrt(1 - abar_t) eps`.
    pub fn forward_noise(&self, tau0: &Array2<f64>, t: usize, eps: &Array2<f64>) -> Array2<f64> {
        let ab = self.alpha_bar(t);
        assert_eq!(tau0.dim(), eps.dim(), "noise shape mismatch");
        tau0 * ab.sqrt() + eps * (1.0 - ab).sqrt()
    }

    /// `(tau_t - (1 - alpha_t) / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t)`.
    pub fn posterior_mean(&self, tau_t: &Array2<f64>, t: usize, eps_hat: &Array2<f64>) -> Array2<f64> {
        let a = self.alpha(t);
        let c = (1.0 - a) / (1.0 - self.alpha_bar(t)).sqrt();
        (tau_t - &(eps_hat * c)) / a.sqrt()
    }
}
