//! Occupancy grids, signed distance fields and scene point clouds.

mod edt;
pub mod file;
pub mod generate;
pub mod points;

pub use file::SceneFile;
pub use generate::{
    base_connected, clearance, generate_scene, generate_scene_with_witness, sample_task, GeneratedScene, GeneratorSpec,
};
pub use points::{sample_scene_points, PointClass, ScenePointCounts, ScenePoints};

use crate::error::{Error, Result};
use crate::kinematics::Point2;

/// Distance reported everywhere when the grid has no obstacle at all.
pub const FREE_SPACE_SENTINEL: f64 = 1e6;

/// Row-major occupancy grid. Cell `(i, j)` covers
/// `[origin + i * res, origin + (i + 1) * res)` along x and likewise along y;
/// it is stored at index `j * width + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub origin: Point2,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(resolution: f64, origin: Point2, width: usize, height: usize) -> Result<Self> {
        let grid = Self {
            resolution,
            origin,
            width,
            height,
            cells: vec![false; width * height],
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) {
            return Err(Error::InvalidArgument("grid resolution must be positive".into()));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidArgument("grid must be at least 2x2 cells".into()));
        }
        if self.cells.len() != self.width * self.height {
            return Err(Error::dim(format!(
                "grid has {} cells, expected {}x{}",
                self.cells.len(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn occupied(&self, i: usize, j: usize) -> bool {
        self.cells[self.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        let idx = self.index(i, j);
        self.cells[idx] = value;
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point2 {
        [
            self.origin[0] + (i as f64 + 0.5) * self.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.resolution,
        ]
    }

    /// Cell containing `p`, if inside the grid.
    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let fx = ((p[0] - self.origin[0]) / self.resolution).floor();
        let fy = ((p[1] - self.origin[1]) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn extent(&self) -> [f64; 4] {
        [
            self.origin[0],
            self.origin[1],
            self.origin[0] + self.width as f64 * self.resolution,
            self.origin[1] + self.height as f64 * self.resolution,
        ]
    }
}

/// Signed distance field over the cell centres of an occupancy grid.
///
/// Occupied cells are treated as solid squares, so a free cell adjacent to an
/// obstacle sits half a cell from its surface.
#[derive(Debug, Clone)]
pub struct SceneSdf {
    pub grid: OccupancyGrid,
    pub distances: Vec<f64>,
}

/// Value and spatial gradient of the SDF at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub value: f64,
    pub gradient: Point2,
}

pub fn build_sdf(grid: &OccupancyGrid) -> Result<SceneSdf> {
    grid.validate()?;
    let (w, h, res) = (grid.width, grid.height, grid.resolution);
    let free: Vec<bool> = grid.cells.iter().map(|&c| !c).collect();
    let outside = edt::squared_edt(&grid.cells, w, h);
    let inside = edt::squared_edt(&free, w, h);
    let distances = (0..w * h)
        .map(|k| {
            if grid.cells[k] {
                match &inside {
                    Some(d) => -res * (d[k].sqrt() - 0.5),
                    None => -FREE_SPACE_SENTINEL,
                }
            } else {
                match &outside {
                    Some(d) => res * (d[k].sqrt() - 0.5),
                    None => FREE_SPACE_SENTINEL,
                }
            }
        })
        .collect();
    Ok(SceneSdf {
        grid: grid.clone(),
        distances,
    })
}

impl SceneSdf {
    #[inline]
    pub fn cell_distance(&self, i: usize, j: usize) -> f64 {
        self.distances[self.grid.index(i, j)]
    }

    /// Bilinear interpolation of the cell-centre distances.
    ///
    /// Outside the grid the query is clamped to the nearest edge and the
    /// gradient is zero in the clamped direction. On a patch boundary the
    /// lower-index patch is used.
    pub fn query(&self, p: Point2) -> SdfSample {
        let g = &self.grid;
        let fx = (p[0] - g.origin[0]) / g.resolution - 0.5;
        let fy = (p[1] - g.origin[1]) / g.resolution - 0.5;
        let max_x = (g.width - 1) as f64;
        let max_y = (g.height - 1) as f64;
        let (cx, clamped_x) = clamp_axis(fx, max_x);
        let (cy, clamped_y) = clamp_axis(fy, max_y);
        let i0 = patch_index(cx, g.width);
        let j0 = patch_index(cy, g.height);
        let tx = cx - i0 as f64;
        let ty = cy - j0 as f64;
        let d00 = self.cell_distance(i0, j0);
        let d10 = self.cell_distance(i0 + 1, j0);
        let d01 = self.cell_distance(i0, j0 + 1);
        let d11 = self.cell_distance(i0 + 1, j0 + 1);
        let value = d00 * (1.0 - tx) * (1.0 - ty) + d10 * tx * (1.0 - ty) + d01 * (1.0 - tx) * ty + d11 * tx * ty;
        let gx = if clamped_x {
            0.0
        } else {
            ((d10 - d00) * (1.0 - ty) + (d11 - d01) * ty) / g.resolution
        };
        let gy = if clamped_y {
            0.0
        } else {
            ((d01 - d00) * (1.0 - tx) + (d11 - d10) * tx) / g.resolution
        };
        SdfSample {
            value,
            gradient: [gx, gy],
        }
    }

    pub fn value(&self, p: Point2) -> f64 {
        self.query(p).value
    }

    pub fn has_obstacles(&self) -> bool {
        self.grid.cells.iter().any(|&c| c)
    }
}

#[inline]
fn clamp_axis(f: f64, max: f64) -> (f64, bool) {
    if f < 0.0 {
        (0.0, true)
    } else if f > max {
        (max, true)
    } else {
        (f, false)
    }
}

/// Lower corner of the bilinear patch containing `f`; exact integers belong
/// to the lower patch.
#[inline]
fn patch_index(f: f64, n: usize) -> usize {
    let i = f.ceil() as isize - 1;
    i.clamp(0, n as isize - 2) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn disc_grid(r: f64) -> OccupancyGrid {
        let mut g = OccupancyGrid::new(0.05, [0.0, 0.0], 80, 80).unwrap();
        let c = [2.0, 2.0];
        for j in 0..80 {
            for i in 0..80 {
                let p = g.cell_center(i, j);
                if (p[0] - c[0]).hypot(p[1] - c[1]) <= r {
                    g.set(i, j, true);
                }
            }
        }
        g
    }

    #[test]
    fn single_cell_axis_distance() {
        let mut g = OccupancyGrid::new(0.05, [0.0, 0.0], 40, 40).unwrap();
        g.set(10, 10, true);
        let sdf = build_sdf(&g).unwrap();
        for k in 1..20 {
            let d = sdf.cell_distance(10 + k, 10);
            assert!((d - k as f64 * 0.05).abs() <= 0.5 * 0.05 + 1e-12, "k={k} d={d}");
        }
        assert!(sdf.cell_distance(10, 10) <= 0.0);
    }

    #[test]
    fn disc_matches_analytic_sdf() {
        let r = 0.6;
        let sdf = build_sdf(&disc_grid(r)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let rho: f64 = rng.random_range(r + 0.05..1.6);
            let p = [2.0 + rho * a.cos(), 2.0 + rho * a.sin()];
            let s = sdf.query(p);
            assert!((s.value - (rho - r)).abs() <= 0.05, "rho={rho} v={}", s.value);
            // A few cells out, pixelation of the disc no longer dominates the direction.
            if rho < r + 0.2 {
                continue;
            }
            let n = s.gradient[0].hypot(s.gradient[1]);
            let dot = (s.gradient[0] * a.cos() + s.gradient[1] * a.sin()) / n;
            assert!(dot > 0.95, "dot={dot}");
            assert!((n - 1.0).abs() < 0.2, "norm={n}");
        }
    }

    #[test]
    fn empty_and_full_grids() {
        let g = OccupancyGrid::new(0.1, [0.0, 0.0], 5, 5).unwrap();
        let sdf = build_sdf(&g).unwrap();
        assert!(sdf.distances.iter().all(|&d| d == FREE_SPACE_SENTINEL));
        let mut full = g.clone();
        full.cells.iter_mut().for_each(|c| *c = true);
        let sdf = build_sdf(&full).unwrap();
        assert!(sdf.distances.iter().all(|&d| d < 0.0));
    }

    #[test]
    fn query_at_cell_centre_returns_cell_value() {
        let sdf = build_sdf(&disc_grid(0.5)).unwrap();
        for &(i, j) in &[(3, 4), (40, 40), (30, 51), (79, 79), (0, 0)] {
            let v = sdf.value(sdf.grid.cell_center(i, j));
            assert!((v - sdf.cell_distance(i, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sdf = build_sdf(&disc_grid(0.7)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let h = 1e-4;
        let mut checked = 0;
        while checked < 200 {
            let p: [f64; 2] = [rng.random_range(0.1..3.9), rng.random_range(0.1..3.9)];
            // Keep clear of patch boundaries so the FD stencil stays on one patch.
            let fx = (p[0] / 0.05 - 0.5).fract();
            let fy = (p[1] / 0.05 - 0.5).fract();
            if fx < 0.01 || fx > 0.99 || fy < 0.01 || fy > 0.99 {
                continue;
            }
            let s = sdf.query(p);
            let gx = (sdf.value([p[0] + h, p[1]]) - sdf.value([p[0] - h, p[1]])) / (2.0 * h);
            let gy = (sdf.value([p[0], p[1] + h]) - sdf.value([p[0], p[1] - h])) / (2.0 * h);
            for (a, b) in [(s.gradient[0], gx), (s.gradient[1], gy)] {
                assert!((a - b).abs() <= 1e-3 * b.abs().max(1e-3), "{a} vs {b}");
            }
            checked += 1;
        }
    }

    #[test]
    fn continuous_across_patch_boundaries() {
        let sdf = build_sdf(&disc_grid(0.55)).unwrap();
        for i in 1..79 {
            // x on the boundary between patches i-1 and i, y anywhere.
            let x = (i as f64 + 0.5) * 0.05;
            let y = 1.2345;
            let left = sdf.value([x - 1e-12, y]);
            let on = sdf.value([x, y]);
            let right = sdf.value([x + 1e-12, y]);
            assert!((left - on).abs() < 1e-9 && (right - on).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_bounds_clamps_with_zero_gradient() {
        let sdf = build_sdf(&disc_grid(0.5)).unwrap();
        let s = sdf.query([-3.0, -5.0]);
        assert_eq!(s.gradient, [0.0, 0.0]);
        assert!((s.value - sdf.cell_distance(0, 0)).abs() < 1e-12);
        let s = sdf.query([10.0, 2.0]);
        assert_eq!(s.gradient[0], 0.0);
    }

    #[test]
    fn lipschitz_and_sign_invariants() {
        let g = disc_grid(0.9);
        let sdf = build_sdf(&g).unwrap();
        let res = g.resolution;
        for j in 0..g.height {
            for i in 0..g.width {
                let d = sdf.cell_distance(i, j);
                if g.occupied(i, j) {
                    assert!(d <= 0.0);
                }
                for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
                    if i + di < g.width && j + dj < g.height {
                        let e = sdf.cell_distance(i + di, j + dj);
                        assert!((d - e).abs() <= res * 2f64.sqrt() + 1e-12);
                    }
                }
            }
        }
    }
}
