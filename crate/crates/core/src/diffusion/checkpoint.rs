//! Checkpoint files: one JSON header line, then little-endian f32 parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Arch, Layout, ParamSpec};
use super::normalizer::Normalizer;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::scene::ScenePointCounts;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Arch,
    pub normalizer: Normalizer,
    pub schedule: NoiseSchedule,
    pub point_counts: ScenePointCounts,
    pub params: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    byte_offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    d: usize,
    #[serde(rename = "H")]
    horizon: usize,
    #[serde(rename = "T")]
    steps: usize,
    arch: Arch,
    normalizer: Normalizer,
    schedule: NoiseSchedule,
    scene_points: ScenePointCounts,
    manifest: Vec<ManifestEntry>,
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::Malformed {
        what: "checkpoint",
        detail: detail.into(),
    }
}

impl Checkpoint {
    /// Fresh, untrained checkpoint.
    pub fn untrained(arch: Arch, normalizer: Normalizer, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = Layout::new(&arch).init(seed);
        let ck = Self {
            arch,
            normalizer,
            schedule,
            point_counts: ScenePointCounts::default(),
            params,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.normalizer.validate()?;
        if self.normalizer.dim() != self.arch.dof {
            return Err(Error::dim(format!(
                "normalizer has {} dims, architecture {}",
                self.normalizer.dim(),
                self.arch.dof
            )));
        }
        if self.params.len() != Layout::new(&self.arch).num_params() {
            return Err(malformed("parameter count does not match architecture"));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(malformed("non-finite parameter"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let layout = Layout::new(&self.arch);
        let manifest = layout
            .specs()
            .map(|(ParamSpec { name, shape }, slot)| ManifestEntry {
                name: name.clone(),
                shape: shape.clone(),
                byte_offset: slot.offset * 4,
            })
            .collect();
        let header = Header {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            d: self.arch.dof,
            horizon: self.arch.horizon,
            steps: self.schedule.steps(),
            arch: self.arch.clone(),
            normalizer: self.normalizer.clone(),
            schedule: self.schedule.clone(),
            scene_points: self.point_counts,
            manifest,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.reserve(self.params.len() * 4);
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| malformed("missing header terminator"))?;
        let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| malformed(e.to_string()))?;
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(malformed(format!("unsupported schema_version {}", header.schema_version)));
        }
        if header.d != header.arch.dof || header.horizon != header.arch.horizon || header.steps != header.schedule.steps() {
            return Err(malformed("header dimensions disagree with arch/schedule"));
        }
        let layout = Layout::new(&header.arch);
        let expected: Vec<_> = layout.specs().collect();
        if expected.len() != header.manifest.len()
            || expected.iter().zip(&header.manifest).any(|((spec, slot), m)| {
                spec.name != m.name || spec.shape != m.shape || slot.offset * 4 != m.byte_offset
            })
        {
            return Err(malformed("manifest does not match architecture"));
        }
        let blob = &bytes[nl + 1..];
        if blob.len() != layout.num_params() * 4 {
            return Err(malformed(format!(
                "blob holds {} bytes, expected {}",
                blob.len(),
                layout.num_params() * 4
            )));
        }
        let params = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let ck = Self {
            arch: header.arch,
            normalizer: header.normalizer,
            schedule: header.schedule,
            point_counts: header.scene_points,
            params,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let arch = Arch {
            blocks: 1,
            ..Arch::new(6, 8)
        };
        let n = Normalizer::new(vec![-1.0; 6], vec![2.0; 6]).unwrap();
        Checkpoint::untrained(arch, n, NoiseSchedule::ddpm_linear(10).unwrap(), 3).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let header = std::str::from_utf8(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()]).unwrap();
        for key in ["\"schema_version\"", "\"d\":6", "\"H\":8", "\"T\":10", "\"manifest\"", "\"betas\"", "\"byte_offset\""] {
            assert!(header.contains(key), "{key}");
        }
    }

    #[test]
    fn truncated_blob_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Malformed { .. })));
    }
}
