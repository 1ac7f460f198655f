//! JSON-lines demonstration datasets.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Config, Point2, Pose2, RobotModel};
use crate::scene::{build_sdf, sample_scene_points, SceneFile, SceneSdf, ScenePointCounts, ScenePoints};
use crate::task::{TaskSpec, TaskType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Task payload of a record; mirrors the optional fields of [`TaskSpec`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_pose: Option<Pose2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_area_polygon: Option<Vec<Point2>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasp_candidates: Option<Vec<Pose2>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_points: Option<Vec<Point2>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasp_offset: Option<Pose2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    /// Path of the scene file, relative to the dataset file's directory.
    pub scene_file: String,
    pub task_type: TaskType,
    pub q0: Vec<f64>,
    pub trajectory: Vec<Vec<f64>>,
    pub goal: Goal,
    pub split: Split,
}

impl DatasetRecord {
    pub fn new(scene_file: String, task: &TaskSpec, trajectory: &Array2<f64>, split: Split) -> Self {
        Self {
            scene_file,
            task_type: task.task_type,
            q0: task.start.0.clone(),
            trajectory: trajectory.outer_iter().map(|r| r.to_vec()).collect(),
            goal: Goal {
                goal_pose: task.goal_pose,
                target_area_polygon: task.target_area_polygon.clone(),
                grasp_candidates: task.grasp_candidates.clone(),
                object_points: task.object_points.clone(),
                grasp_offset: task.grasp_offset,
            },
            split,
        }
    }

    pub fn task(&self) -> TaskSpec {
        TaskSpec {
            start: Config(self.q0.clone()),
            task_type: self.task_type,
            goal_pose: self.goal.goal_pose,
            target_area_polygon: self.goal.target_area_polygon.clone(),
            grasp_candidates: self.goal.grasp_candidates.clone(),
            object_points: self.goal.object_points.clone(),
            grasp_offset: self.goal.grasp_offset,
        }
    }

    pub fn trajectory_array(&self) -> Result<Array2<f64>> {
        let h = self.trajectory.len();
        let d = self.trajectory.first().map_or(0, |r| r.len());
        if h == 0 || self.trajectory.iter().any(|r| r.len() != d) {
            return Err(Error::Malformed {
                what: "dataset record",
                detail: "ragged or empty trajectory".into(),
            });
        }
        Ok(Array2::from_shape_fn((h, d), |(i, j)| self.trajectory[i][j]))
    }
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            what: "dataset line",
            detail: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

/// Loads scene files once each and hands out their SDFs.
#[derive(Debug, Default)]
pub struct SceneCache {
    root: PathBuf,
    scenes: HashMap<String, SceneSdf>,
}

impl SceneCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            scenes: HashMap::new(),
        }
    }

    pub fn get(&mut self, rel: &str) -> Result<&SceneSdf> {
        if !self.scenes.contains_key(rel) {
            let path = self.root.join(rel);
            let grid = SceneFile::load(&path)?.grid()?;
            self.scenes.insert(rel.to_string(), build_sdf(&grid)?);
        }
        Ok(&self.scenes[rel])
    }
}

/// One training sample: a world-frame trajectory and its conditioning.
#[derive(Debug, Clone)]
pub struct Example {
    pub trajectory: Array2<f64>,
    pub q0: Config,
    pub points: ScenePoints,
}

/// Seed for the scene points of the `index`-th record.
pub fn scene_point_seed(index: usize) -> u64 {
    index as u64
}

/// Builds examples for the records of one split.
pub fn examples_from_records(
    model: &RobotModel,
    records: &[DatasetRecord],
    scenes: &mut SceneCache,
    counts: ScenePointCounts,
    split: Split,
) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.split != split {
            continue;
        }
        let task = r.task();
        task.validate(model)?;
        let sdf = scenes.get(&r.scene_file)?;
        out.push(Example {
            trajectory: r.trajectory_array()?,
            q0: task.start.clone(),
            points: sample_scene_points(model, sdf, &task, counts, scene_point_seed(i)),
        });
    }
    Ok(out)
}
