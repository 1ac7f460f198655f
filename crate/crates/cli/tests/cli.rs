use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trajdiff_core::diffusion::{Arch, Checkpoint, NoiseSchedule, Normalizer};
use trajdiff_core::eval::{score_trajectory, EvalThresholds};
use trajdiff_core::expert::{solve_task, ExpertConfig};
use trajdiff_core::scene::{generate_scene, GeneratorSpec, SceneFile};
use trajdiff_core::{build_sdf, RobotModel, Trajectory};

fn trajdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajdiff"))
        .args(args)
        .env_remove("TRAJDIFF_OUT_DIR")
        .output()
        .expect("spawn trajdiff")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn small_checkpoint(path: &Path) {
    let arch = Arch {
        encoder_hidden: 16,
        scene_code: 16,
        time_dim: 16,
        width: 32,
        hidden: 32,
        blocks: 1,
        ..Arch::new(6, 50)
    };
    let n = Normalizer::new(vec![-3.0, -3.0, -3.2, -2.9, -2.9, -2.9], vec![3.0, 3.0, 3.2, 2.9, 2.9, 2.9]).unwrap();
    Checkpoint::untrained(arch, n, NoiseSchedule::ddpm_linear(50).unwrap(), 1)
        .unwrap()
        .save(path)
        .unwrap();
}

fn write_scene(dir: &Path, seed: u64) -> PathBuf {
    let (grid, task) = generate_scene(&RobotModel::default(), seed, &GeneratorSpec::default()).unwrap();
    let p = dir.join(format!("scene_{seed}.json"));
    SceneFile::new(&grid, task).save(&p).unwrap();
    p
}

#[test]
fn gen_scenes_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = trajdiff(&["gen-scenes", "--count", "3", "--seed", "7", "--out-dir", s(d)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8(out.stdout).unwrap();
        assert_eq!(stdout.lines().count(), 1);
        let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
        assert_eq!(v["command"], "gen-scenes");
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 3);
    for name in names {
        let bytes = std::fs::read(a.join(&name)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(&name)).unwrap());
        let file = SceneFile::load(&a.join(&name)).unwrap();
        assert_eq!(file.to_json().into_bytes(), bytes);
    }
}

#[test]
fn occupied_everywhere_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = trajdiff(&[
        "gen-scenes",
        "--count",
        "1",
        "--out-dir",
        s(dir.path()),
        "--set",
        "generator.min_obstacles=300",
        "--set",
        "generator.max_obstacles=300",
        "--set",
        "generator.obstacle_min_size=2.0",
        "--set",
        "generator.obstacle_max_size=3.0",
        "--set",
        "generator.max_attempts=2",
    ]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_checkpoint_exits_3_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path(), 1);
    let missing = dir.path().join("nope.ckpt");
    let out = trajdiff(&["plan", "--checkpoint", s(&missing), "--scene", s(&scene)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));

    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = trajdiff(&["plan", "--checkpoint", s(&garbage), "--scene", s(&scene)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn dimension_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ckpt");
    small_checkpoint(&ck);
    let scene = write_scene(dir.path(), 2);
    let mut file = SceneFile::load(&scene).unwrap();
    file.annotations.start.0.pop();
    let short = dir.path().join("short.json");
    file.save(&short).unwrap();
    let out = trajdiff(&["plan", "--checkpoint", s(&ck), "--scene", s(&short), "--out", s(&dir.path().join("p.json"))]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));

    let traj = Trajectory::from_rows(&vec![vec![0.0; 4]; 5]).unwrap();
    let tp = dir.path().join("t4.json");
    std::fs::write(&tp, traj.to_json()).unwrap();
    let out = trajdiff(&["plot", "--scene", s(&scene), "--trajectory", s(&tp), "--out", s(&dir.path().join("o.svg"))]);
    assert_eq!(code(&out), 4);
}

#[test]
fn malformed_inputs_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "what,is,this\n1,2,3\n").unwrap();
    let out = trajdiff(&["plot", "--csv", s(&bad), "--out", s(&dir.path().join("x.svg"))]);
    assert_eq!(code(&out), 5);

    let out = trajdiff(&["gen-scenes", "--count", "0", "--out-dir", s(dir.path()), "--set", "train.epoch=3"]);
    assert_eq!(code(&out), 5);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, "{not json").unwrap();
    let out = trajdiff(&["--config", s(&cfg), "gen-scenes", "--count", "0", "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 5);
}

#[test]
fn plan_is_byte_identical_for_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ckpt");
    small_checkpoint(&ck);
    let scene = write_scene(dir.path(), 3);
    let mut outputs = Vec::new();
    for run in 0..2 {
        let p = dir.path().join(format!("plan{run}.json"));
        let t = dir.path().join(format!("trace{run}.csv"));
        let out = trajdiff(&[
            "plan",
            "--checkpoint",
            s(&ck),
            "--scene",
            s(&scene),
            "--seed",
            "11",
            "--out",
            s(&p),
            "--trace",
            s(&t),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((std::fs::read(&p).unwrap(), std::fs::read(&t).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let traj = Trajectory::from_json(std::str::from_utf8(&outputs[0].0).unwrap()).unwrap();
    assert_eq!((traj.horizon(), traj.dof()), (50, 6));

    let svg0 = dir.path().join("trace0.svg");
    let svg1 = dir.path().join("trace1.svg");
    for (csv, svg) in [("trace0.csv", &svg0), ("trace1.csv", &svg1)] {
        let out = trajdiff(&["plot", "--csv", s(&dir.path().join(csv)), "--out", s(svg)]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(std::fs::read(&svg0).unwrap(), std::fs::read(&svg1).unwrap());
}

fn attr(tag: &str, name: &str) -> f64 {
    let key = format!("{name}=\"");
    let start = tag.find(&key).unwrap_or_else(|| panic!("no {name} in {tag}")) + key.len();
    let end = start + tag[start..].find('"').unwrap();
    tag[start..end].parse().unwrap()
}

#[test]
fn overlay_endpoint_lands_on_goal_marker() {
    let dir = tempfile::tempdir().unwrap();
    let model = RobotModel::default();
    let scene = write_scene(dir.path(), 4);
    let file = SceneFile::load(&scene).unwrap();
    let sdf = build_sdf(&file.grid().unwrap()).unwrap();
    let traj = solve_task(&model, &sdf, &file.annotations, &ExpertConfig::default(), 0).unwrap();
    let report = score_trajectory(&model, &sdf, &traj, &file.annotations, &EvalThresholds::default(), 0.0).unwrap();
    assert!(report.success);
    let tp = dir.path().join("expert.json");
    std::fs::write(&tp, traj.to_json()).unwrap();
    let svg_path = dir.path().join("overlay.svg");
    let out = trajdiff(&["plot", "--scene", s(&scene), "--trajectory", s(&tp), "--out", s(&svg_path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    let goal = svg.lines().find(|l| l.contains("class=\"goal\"")).expect("goal marker");
    let end = svg.lines().find(|l| l.contains("class=\"endpoint\"")).expect("endpoint");
    let dx = attr(goal, "data-x") - attr(end, "cx");
    let dy = attr(goal, "data-y") - attr(end, "cy");
    assert!(dx.hypot(dy) <= 1.0, "endpoint {dx:.2},{dy:.2} px from goal");
}

#[test]
fn empty_rows_plot_no_data() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rows.csv");
    std::fs::write(&csv, "task_id,planner,seed,success\n").unwrap();
    let svg = dir.path().join("rows.svg");
    let out = trajdiff(&["plot", "--csv", s(&csv), "--out", s(&svg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("no data"));
}

#[test]
fn output_dir_env_redirects_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_trajdiff"))
        .args(["gen-scenes", "--count", "1", "--seed", "5", "--out-dir", "rel"])
        .env("TRAJDIFF_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("rel").join("scene_000005.json").exists());
}
