//! Run configuration: module defaults, an optional JSON file, and dot-path
//! `--set key=value` overrides. Unknown keys are rejected at every layer.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use trajdiff_core::diffusion::TrainConfig;
use trajdiff_core::eval::{BenchmarkConfig, EvalThresholds};
use trajdiff_core::expert::ExpertConfig;
use trajdiff_core::sampler::{GuidanceConfig, LangevinConfig};
use trajdiff_core::scene::GeneratorSpec;
use trajdiff_core::RobotModel;

use crate::exit::{coded, MALFORMED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub robot: RobotModel,
    pub generator: GeneratorSpec,
    pub expert: ExpertConfig,
    pub train: TrainConfig,
    pub guidance: GuidanceConfig,
    pub langevin: LangevinConfig,
    pub thresholds: EvalThresholds,
}

impl RunConfig {
    /// Defaults, then `file`, then each `key=value` override in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default()).expect("defaults serialize");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| coded(MALFORMED, format!("{}: {e}", path.display())))?;
            merge(&mut value, patch, "").map_err(|e| coded(MALFORMED, format!("{}: {e}", path.display())))?;
        }
        for kv in overrides {
            let (key, raw) = kv
                .split_once('=')
                .ok_or_else(|| coded(MALFORMED, format!("override `{kv}` is not key=value")))?;
            set_path(&mut value, key.trim(), parse_scalar(raw)).map_err(|e| coded(MALFORMED, e.to_string()))?;
        }
        serde_json::from_value(value).map_err(|e| coded(MALFORMED, format!("invalid configuration: {e}")))
    }

    pub fn benchmark(&self, timing: bool) -> BenchmarkConfig {
        BenchmarkConfig {
            guidance: self.guidance.clone(),
            langevin: self.langevin.clone(),
            thresholds: self.thresholds,
            timing,
        }
    }
}

/// JSON if it parses, otherwise the raw text as a string.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn merge(base: &mut Value, patch: Value, prefix: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                let slot = b.get_mut(&k).ok_or_else(|| anyhow!("unknown key `{path}`"))?;
                merge(slot, v, &path)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

fn set_path(root: &mut Value, key: &str, v: Value) -> Result<()> {
    if key.is_empty() {
        bail!("empty override key");
    }
    let mut cur = root;
    for part in key.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part).ok_or_else(|| anyhow!("unknown key `{key}`"))?,
            _ => bail!("unknown key `{key}`"),
        };
    }
    *cur = v;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::resolve(
            None,
            &["train.epochs=3".into(), "guidance.K=4".into(), "train.epochs=5".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.guidance.extra_steps, 4);
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in ["train.epoch=3", "nope=1", "train.epochs.x=1", "train"] {
            assert!(RunConfig::resolve(None, &[bad.into()]).is_err(), "{bad}");
        }
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"epochs": 7, "seed": 3}}"#).unwrap();
        let cfg = RunConfig::resolve(Some(&p), &["train.seed=9".into()]).unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.seed), (7, 9));
        std::fs::write(&p, r#"{"train": {"epocs": 7}}"#).unwrap();
        assert!(RunConfig::resolve(Some(&p), &[]).is_err());
    }

    #[test]
    fn optional_fields_accept_values() {
        let cfg = RunConfig::resolve(None, &["guidance.grad_clip=null".into()]).unwrap();
        assert_eq!(cfg.guidance.grad_clip, None);
    }
}
