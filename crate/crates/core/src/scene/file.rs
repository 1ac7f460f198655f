//! JSON scene files: grid geometry, bit-packed occupancy and task annotations.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::OccupancyGrid;
use crate::error::{Error, Result};
use crate::kinematics::Point2;
use crate::task::TaskSpec;

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub schema_version: u32,
    pub resolution: f64,
    pub origin: Point2,
    pub width: usize,
    pub height: usize,
    /// Base64 of the row-major occupancy bits, most significant bit first.
    pub occupancy: String,
    pub annotations: TaskSpec,
}

fn pack_bits(cells: &[bool]) -> Vec<u8> {
    cells
        .chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |b, (k, &v)| b | ((v as u8) << (7 - k))))
        .collect()
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|k| bytes[k / 8] >> (7 - k % 8) & 1 == 1).collect()
}

impl SceneFile {
    pub fn new(grid: &OccupancyGrid, annotations: TaskSpec) -> Self {
        Self {
            schema_version: SCENE_SCHEMA_VERSION,
            resolution: grid.resolution,
            origin: grid.origin,
            width: grid.width,
            height: grid.height,
            occupancy: STANDARD.encode(pack_bits(&grid.cells)),
            annotations,
        }
    }

    pub fn grid(&self) -> Result<OccupancyGrid> {
        let malformed = |detail: String| Error::Malformed {
            what: "scene file",
            detail,
        };
        if self.schema_version != SCENE_SCHEMA_VERSION {
            return Err(malformed(format!("unsupported schema_version {}", self.schema_version)));
        }
        let bytes = STANDARD
            .decode(&self.occupancy)
            .map_err(|e| malformed(format!("occupancy is not base64: {e}")))?;
        let n = self.width * self.height;
        if bytes.len() != n.div_ceil(8) {
            return Err(malformed(format!(
                "occupancy holds {} bytes, expected {} for {}x{}",
                bytes.len(),
                n.div_ceil(8),
                self.width,
                self.height
            )));
        }
        let grid = OccupancyGrid {
            resolution: self.resolution,
            origin: self.origin,
            width: self.width,
            height: self.height,
            cells: unpack_bits(&bytes, n),
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scene file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Config, Pose2};

    fn sample() -> SceneFile {
        let mut g = OccupancyGrid::new(0.05, [0.0, -1.0], 13, 7).unwrap();
        for k in [0, 5, 17, 50, 90] {
            g.cells[k] = true;
        }
        SceneFile::new(&g, TaskSpec::goal_reach(Config(vec![1.0, 2.0, 0.1, 0.0, 0.2, -0.3]), Pose2::new(3.0, 1.0, 0.5)))
    }

    #[test]
    fn grid_round_trip() {
        let f = sample();
        let g = f.grid().unwrap();
        assert_eq!(SceneFile::new(&g, f.annotations.clone()), f);
        assert!(g.cells[90] && !g.cells[89]);
    }

    #[test]
    fn text_round_trip_is_byte_identical() {
        let text = sample().to_json();
        assert_eq!(SceneFile::from_json(&text).unwrap().to_json(), text);
    }

    #[test]
    fn bit_order_is_msb_first() {
        assert_eq!(pack_bits(&[true, false, false, false, false, false, false, true, true]), vec![0x81, 0x80]);
    }

    #[test]
    fn truncated_occupancy_rejected() {
        let mut f = sample();
        f.occupancy = STANDARD.encode([0u8; 3]);
        assert!(matches!(f.grid(), Err(Error::Malformed { .. })));
    }
}
