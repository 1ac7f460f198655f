//! Subcommand bodies. Each returns the JSON summary printed on success.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::{json, Value};
use trajdiff_core::diffusion::{
    examples_from_records, read_dataset, train_with_callback, write_loss_curve, Checkpoint, SceneCache, Split,
};
use trajdiff_core::eval::{
    aggregate, rescore_dataset, run_benchmark, run_planner, write_rows_csv, BenchmarkRow, BenchmarkTask, PlannerKind,
};
use trajdiff_core::expert::generate_dataset;
use trajdiff_core::sampler::{plan, GuidanceConfig, StepTrace};
use trajdiff_core::scene::{generate_scene, ScenePointCounts, SceneFile};
use trajdiff_core::{build_sdf, SceneSdf, TaskSpec, Trajectory};

use crate::config::RunConfig;
use crate::exit::{coded, GENERATION, MISSING_ARTIFACT};
use crate::plot;

/// Relative output paths land under this directory when it is set.
pub const OUT_DIR_ENV: &str = "TRAJDIFF_OUT_DIR";

pub fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_file(p: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(p)?;
    std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
}

fn require(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(coded(MISSING_ARTIFACT, format!("missing artifact: {}", p.display())))
    }
}

pub fn load_checkpoint(p: &Path) -> Result<Checkpoint> {
    require(p)?;
    Checkpoint::load(p).map_err(|e| coded(MISSING_ARTIFACT, format!("incompatible checkpoint {}: {e}", p.display())))
}

pub fn load_scene(p: &Path) -> Result<(SceneFile, SceneSdf)> {
    require(p)?;
    let bad = |e: trajdiff_core::Error| coded(MISSING_ARTIFACT, format!("incompatible scene {}: {e}", p.display()));
    let file = SceneFile::load(p).map_err(bad)?;
    let sdf = build_sdf(&file.grid().map_err(bad)?).map_err(bad)?;
    Ok((file, sdf))
}

pub fn load_trajectory(p: &Path) -> Result<Trajectory> {
    require(p)?;
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    Trajectory::from_json(&text).map_err(|e| coded(MISSING_ARTIFACT, format!("incompatible trajectory {}: {e}", p.display())))
}

/// Scene files of a directory in name order, keyed by file stem.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<(String, SceneFile, SceneSdf)>> {
    require(dir)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(coded(MISSING_ARTIFACT, format!("no scene files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let (file, sdf) = load_scene(p)?;
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((id, file, sdf))
        })
        .collect()
}

pub fn gen_scenes(cfg: &RunConfig, count: usize, seed: u64, out_dir: &Path) -> Result<Value> {
    let out_dir = output_path(out_dir);
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for s in seed..seed + count as u64 {
        let (grid, task) = generate_scene(&cfg.robot, s, &cfg.generator)
            .map_err(|e| coded(GENERATION, format!("scene seed {s}: {e}")))?;
        SceneFile::new(&grid, task).save(&out_dir.join(format!("scene_{s:06}.json")))?;
    }
    Ok(json!({"command": "gen-scenes", "count": count, "seed": seed, "out_dir": out_dir}))
}

pub fn gen_data(cfg: &RunConfig, scenes: u64, tasks_per_scene: usize, seed: u64, out_dir: &Path) -> Result<Value> {
    let out_dir = output_path(out_dir);
    let start = Instant::now();
    let m = generate_dataset(
        &cfg.robot,
        seed..seed + scenes,
        tasks_per_scene,
        &cfg.generator,
        &cfg.expert,
        &out_dir,
    )
    .map_err(|e| match e {
        trajdiff_core::Error::Io { .. } => anyhow::Error::new(e),
        e => coded(GENERATION, e.to_string()),
    })?;
    log::info!("generated {} trajectories in {:.1}s", m.solved, start.elapsed().as_secs_f64());
    Ok(json!({
        "command": "gen-data",
        "out_dir": out_dir,
        "solved": m.solved,
        "discarded": m.discarded,
        "train": m.split.train,
        "test": m.split.test,
    }))
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path, loss_curve: Option<&Path>) -> Result<Value> {
    let dataset = data.join("dataset.jsonl");
    require(&dataset)?;
    let records =
        read_dataset(&dataset).map_err(|e| coded(MISSING_ARTIFACT, format!("incompatible dataset {}: {e}", dataset.display())))?;
    let mut cache = SceneCache::new(data);
    let counts = ScenePointCounts::default();
    let train_set = examples_from_records(&cfg.robot, &records, &mut cache, counts, Split::Train)?;
    let heldout = examples_from_records(&cfg.robot, &records, &mut cache, counts, Split::Test)?;
    let start = Instant::now();
    let outcome = train_with_callback(&train_set, &heldout, &cfg.train, |e| {
        if e.epoch % 10 == 0 {
            log::info!(
                "epoch {} train {:.4} held-out {:.4} ({:.0}s)",
                e.epoch,
                e.train_loss,
                e.heldout_loss,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    let out = output_path(out);
    ensure_parent(&out)?;
    outcome.checkpoint.save(&out)?;
    let curve_path = match loss_curve {
        Some(p) => output_path(p),
        None => out.with_extension("loss.csv"),
    };
    ensure_parent(&curve_path)?;
    write_loss_curve(&curve_path, &outcome.curve)?;
    let last = outcome.curve.last();
    Ok(json!({
        "command": "train",
        "checkpoint": out,
        "loss_curve": curve_path,
        "train_examples": train_set.len(),
        "heldout_examples": heldout.len(),
        "epochs": cfg.train.epochs,
        "final_train_loss": last.map(|e| e.train_loss),
        "final_heldout_loss": last.map(|e| e.heldout_loss),
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn plan_cmd(
    cfg: &RunConfig,
    checkpoint: &Path,
    scene: &Path,
    planner: PlannerKind,
    seed: u64,
    out: &Path,
    trace: Option<&Path>,
    timing: bool,
) -> Result<Value> {
    let ck = load_checkpoint(checkpoint)?;
    let (file, sdf) = load_scene(scene)?;
    let task: TaskSpec = file.annotations;
    let start = Instant::now();
    let (traj, steps) = match planner {
        PlannerKind::Guided | PlannerKind::Unguided => {
            let g = GuidanceConfig {
                seed,
                guidance_enabled: planner == PlannerKind::Guided && cfg.guidance.guidance_enabled,
                ..cfg.guidance.clone()
            };
            let p = plan(&cfg.robot, &ck, &sdf, &task, &g)?;
            (p.trajectory, p.diagnostics.trace)
        }
        _ => (
            run_planner(&cfg.robot, &ck, &sdf, &task, planner, seed, &cfg.benchmark(timing))?,
            Vec::new(),
        ),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let out = output_path(out);
    write_file(&out, traj.to_json())?;
    let trace_path = match trace {
        Some(p) => {
            let p = output_path(p);
            write_trace(&p, &steps)?;
            Some(p)
        }
        None => None,
    };
    let report = trajdiff_core::eval::score_trajectory(
        &cfg.robot,
        &sdf,
        &traj,
        &task,
        &cfg.thresholds,
        if timing { elapsed } else { 0.0 },
    )?;
    let mut v = json!({
        "command": "plan",
        "planner": planner,
        "seed": seed,
        "trajectory": out,
        "trace": trace_path,
        "success": report.success,
        "pos_error": report.pos_error,
        "ang_error": report.ang_error,
        "collision": report.collision.any,
    });
    if timing {
        v["solve_time_s"] = json!(elapsed);
    }
    Ok(v)
}

fn write_trace(p: &Path, steps: &[StepTrace]) -> Result<()> {
    ensure_parent(p)?;
    let mut w = csv::Writer::from_path(p).with_context(|| format!("writing {}", p.display()))?;
    if steps.is_empty() {
        w.write_record(["step", "phi", "e", "c_collision", "c_smoothness", "c_limit"])?;
    }
    for s in steps {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

fn summary(command: &str, out: &Path, rows: &[BenchmarkRow]) -> Value {
    json!({"command": command, "rows": rows.len(), "csv": out, "aggregate": aggregate(rows)})
}

/// Scores the planners on every scene of `scenes`, or re-scores the expert
/// demonstrations of `dataset`.
#[allow(clippy::too_many_arguments)]
pub fn eval(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    scenes: Option<&Path>,
    dataset: Option<&Path>,
    planner: PlannerKind,
    seeds: &[u64],
    out: &Path,
    timing: bool,
) -> Result<Value> {
    let rows = if let Some(dir) = dataset {
        require(&dir.join("dataset.jsonl"))?;
        rescore_dataset(&cfg.robot, dir, &cfg.thresholds)?
    } else {
        let ck_path = checkpoint.ok_or_else(|| coded(MISSING_ARTIFACT, "eval needs --checkpoint or --dataset"))?;
        let scene_dir = scenes.ok_or_else(|| coded(MISSING_ARTIFACT, "eval needs --scenes with --checkpoint"))?;
        let ck = load_checkpoint(ck_path)?;
        let loaded = load_scene_dir(scene_dir)?;
        let tasks = benchmark_tasks(&loaded);
        run_benchmark(&cfg.robot, &ck, &tasks, planner, seeds, &cfg.benchmark(timing))?
    };
    let out = output_path(out);
    ensure_parent(&out)?;
    write_rows_csv(&out, &rows)?;
    Ok(summary("eval", &out, &rows))
}

fn benchmark_tasks(loaded: &[(String, SceneFile, SceneSdf)]) -> Vec<BenchmarkTask<'_>> {
    loaded
        .iter()
        .map(|(id, file, sdf)| BenchmarkTask {
            task_id: id.clone(),
            sdf,
            task: file.annotations.clone(),
        })
        .collect()
}

/// Runs every planner on the same tasks and seeds; writes the rows CSV and a
/// bar chart.
pub fn ablate(cfg: &RunConfig, checkpoint: &Path, scenes: &Path, seeds: &[u64], out_dir: &Path, timing: bool) -> Result<Value> {
    let ck = load_checkpoint(checkpoint)?;
    let loaded = load_scene_dir(scenes)?;
    let tasks = benchmark_tasks(&loaded);
    let bench = cfg.benchmark(timing);
    let mut rows = Vec::new();
    for p in PlannerKind::ALL {
        let start = Instant::now();
        rows.extend(run_benchmark(&cfg.robot, &ck, &tasks, p, seeds, &bench)?);
        log::info!("{p} done in {:.1}s", start.elapsed().as_secs_f64());
    }
    let out_dir = output_path(out_dir);
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let csv_path = out_dir.join("ablation.csv");
    write_rows_csv(&csv_path, &rows)?;
    let svg_path = out_dir.join("ablation.svg");
    write_file(&svg_path, plot::success_bars(&rows))?;
    let mut v = summary("ablate", &csv_path, &rows);
    v["svg"] = json!(svg_path);
    Ok(v)
}

pub fn plot_cmd(
    cfg: &RunConfig,
    csv: Option<&Path>,
    scene: Option<&Path>,
    trajectories: &[PathBuf],
    px_per_m: f64,
    out: &Path,
) -> Result<Value> {
    let svg = match (csv, scene) {
        (Some(p), _) => {
            require(p)?;
            plot::plot_csv(p)?
        }
        (None, Some(s)) => {
            let (file, _) = load_scene(s)?;
            let grid = file.grid()?;
            let trajs = trajectories.iter().map(|p| load_trajectory(p)).collect::<Result<Vec<_>>>()?;
            if let Some(t) = trajs.iter().find(|t| t.dof() != cfg.robot.dof()) {
                return Err(trajdiff_core::Error::Dimension(format!(
                    "trajectory has {} dof, robot has {}",
                    t.dof(),
                    cfg.robot.dof()
                ))
                .into());
            }
            plot::overlay(&cfg.robot, &grid, &file.annotations, &trajs, plot::MapScale::new(&grid, px_per_m))
        }
        (None, None) => return Err(coded(MISSING_ARTIFACT, "plot needs --csv or --scene")),
    };
    let out = output_path(out);
    write_file(&out, &svg)?;
    Ok(json!({"command": "plot", "svg": out, "bytes": svg.len()}))
}
