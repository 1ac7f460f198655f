//! Deterministic SVG figures: success-rate bars, objective traces and
//! trajectory overlays on the occupancy map.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use trajdiff_core::eval::{aggregate, read_rows_csv, BenchmarkRow};
use trajdiff_core::kinematics::Point2;
use trajdiff_core::sampler::StepTrace;
use trajdiff_core::{OccupancyGrid, RobotModel, TaskSpec, TaskType, Trajectory};

use crate::exit::{coded, MALFORMED};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 40.0;
/// Default overlay scale, pixels per metre.
pub const DEFAULT_PX_PER_M: f64 = 50.0;

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"white\"/>\n"
    )
}

fn no_data(title: &str) -> String {
    let mut s = header(WIDTH, HEIGHT);
    let _ = writeln!(s, "<text x=\"{:.0}\" y=\"20\" text-anchor=\"middle\">{title}</text>", WIDTH / 2.0);
    let _ = writeln!(
        s,
        "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\" fill=\"gray\">no data</text>",
        WIDTH / 2.0,
        HEIGHT / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Success and collision rate per planner, in first-appearance order.
pub fn success_bars(rows: &[BenchmarkRow]) -> String {
    let aggs = aggregate(rows);
    if aggs.is_empty() {
        return no_data("success rate");
    }
    let mut s = header(WIDTH, HEIGHT);
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let slot = (WIDTH - 2.0 * MARGIN) / aggs.len() as f64;
    let bar = slot * 0.35;
    let _ = writeln!(s, "<text x=\"{:.0}\" y=\"20\" text-anchor=\"middle\">success / collision rate (%)</text>", WIDTH / 2.0);
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN:.0}\" y1=\"{:.0}\" x2=\"{:.0}\" y2=\"{:.0}\" stroke=\"black\"/>",
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN
    );
    for (k, a) in aggs.iter().enumerate() {
        let x0 = MARGIN + k as f64 * slot + slot * 0.15;
        for (j, (v, color)) in [(a.success_pct, "#2a7"), (a.collision_pct, "#c33")].into_iter().enumerate() {
            let h = plot_h * v.clamp(0.0, 100.0) / 100.0;
            let x = x0 + j as f64 * bar;
            let _ = writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{bar:.2}\" height=\"{h:.2}\" fill=\"{color}\"/>",
                HEIGHT - MARGIN - h
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"10\">{v:.1}</text>",
                x + bar / 2.0,
                HEIGHT - MARGIN - h - 3.0
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.0}\" text-anchor=\"middle\">{}</text>",
            x0 + bar,
            HEIGHT - MARGIN + 16.0,
            a.planner
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Guidance objective against reverse-diffusion step.
pub fn trace_plot(trace: &[StepTrace]) -> String {
    let pts: Vec<(f64, f64)> = trace
        .iter()
        .filter(|t| t.phi.is_finite())
        .map(|t| (t.step as f64, t.phi))
        .collect();
    if pts.is_empty() {
        return no_data("phi by step");
    }
    let (x_lo, x_hi) = bounds(pts.iter().map(|p| p.0));
    let (y_lo, y_hi) = bounds(pts.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);
    let mut s = header(WIDTH, HEIGHT);
    let _ = writeln!(s, "<text x=\"{:.0}\" y=\"20\" text-anchor=\"middle\">phi by step</text>", WIDTH / 2.0);
    let line: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"#36c\" stroke-width=\"1.5\"/>", line.join(" "));
    let _ = writeln!(s, "<text x=\"4\" y=\"{:.0}\" font-size=\"10\">{y_hi:.3}</text>", MARGIN);
    let _ = writeln!(s, "<text x=\"4\" y=\"{:.0}\" font-size=\"10\">{y_lo:.3}</text>", HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\" font-size=\"10\">step</text>",
        WIDTH / 2.0,
        HEIGHT - 10.0
    );
    s.push_str("</svg>\n");
    s
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

/// World-to-pixel map for a grid, y pointing up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapScale {
    pub extent: [f64; 4],
    pub px_per_m: f64,
}

impl MapScale {
    pub fn new(grid: &OccupancyGrid, px_per_m: f64) -> Self {
        Self {
            extent: grid.extent(),
            px_per_m,
        }
    }

    pub fn to_px(&self, p: Point2) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.extent[0]) * self.px_per_m,
            MARGIN + (self.extent[3] - p[1]) * self.px_per_m,
        )
    }

    pub fn size(&self) -> (f64, f64) {
        (
            2.0 * MARGIN + (self.extent[2] - self.extent[0]) * self.px_per_m,
            2.0 * MARGIN + (self.extent[3] - self.extent[1]) * self.px_per_m,
        )
    }
}

/// Occupancy map with base and end-effector paths and the task target.
///
/// Path endpoints are drawn as `class="endpoint"` circles and the goal as a
/// `class="goal"` cross so both can be located in the output.
pub fn overlay(model: &RobotModel, grid: &OccupancyGrid, task: &TaskSpec, trajs: &[Trajectory], scale: MapScale) -> String {
    let (w, h) = scale.size();
    let mut s = header(w, h);
    let r = grid.resolution * scale.px_per_m;
    for j in 0..grid.height {
        let mut i = 0;
        while i < grid.width {
            if !grid.occupied(i, j) {
                i += 1;
                continue;
            }
            let start = i;
            while i < grid.width && grid.occupied(i, j) {
                i += 1;
            }
            let (x, y) = scale.to_px([
                grid.origin[0] + start as f64 * grid.resolution,
                grid.origin[1] + (j + 1) as f64 * grid.resolution,
            ]);
            let _ = writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{r:.2}\" fill=\"#444\"/>",
                (i - start) as f64 * r
            );
        }
    }
    let polyline = |pts: &[Point2], color: &str, dash: &str| {
        let p: Vec<String> = pts
            .iter()
            .map(|&q| {
                let (x, y) = scale.to_px(q);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>\n",
            p.join(" ")
        )
    };
    if let Some(poly) = &task.target_area_polygon {
        let mut closed = poly.clone();
        closed.extend(poly.first().copied());
        s.push_str(&polyline(&closed, "#2a7", ""));
    }
    let marker = |s: &mut String, p: Point2| {
        let (x, y) = scale.to_px(p);
        let _ = writeln!(
            s,
            "<path class=\"goal\" d=\"M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}\" stroke=\"#c33\" stroke-width=\"2\" data-x=\"{x:.2}\" data-y=\"{y:.2}\"/>",
            x - 5.0,
            y - 5.0,
            x + 5.0,
            y + 5.0,
            x - 5.0,
            y + 5.0,
            x + 5.0,
            y - 5.0
        );
    };
    match task.task_type {
        TaskType::GoalReach => {
            if let Some(g) = &task.goal_pose {
                marker(&mut s, g.position);
            }
        }
        TaskType::Grasp => {
            for g in task.grasp_candidates.iter().flatten() {
                marker(&mut s, g.position);
            }
        }
        TaskType::Place => {}
    }
    for traj in trajs {
        let base: Vec<Point2> = (0..traj.horizon()).map(|h| traj.row(h).base_pose().position).collect();
        let ee: Vec<Point2> = (0..traj.horizon())
            .map(|h| model.fk_end_effector(&traj.row(h)).position)
            .collect();
        s.push_str(&polyline(&base, "#36c", " stroke-dasharray=\"4 3\""));
        s.push_str(&polyline(&ee, "#e80", ""));
        if let Some(&end) = ee.last() {
            let (x, y) = scale.to_px(end);
            let _ = writeln!(s, "<circle class=\"endpoint\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"#e80\"/>");
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Chooses the figure from the CSV header: benchmark rows give success bars,
/// objective traces give a line plot.
pub fn plot_csv(path: &Path) -> Result<String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| coded(MALFORMED, format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| coded(MALFORMED, format!("{}: {e}", path.display())))?
        .clone();
    let has = |name: &str| headers.iter().any(|h| h == name);
    if has("planner") && has("success") {
        let rows = read_rows_csv(path).map_err(|e| coded(MALFORMED, format!("{}: {e}", path.display())))?;
        Ok(success_bars(&rows))
    } else if has("step") && has("phi") {
        let trace = rdr
            .deserialize()
            .collect::<Result<Vec<StepTrace>, _>>()
            .map_err(|e| coded(MALFORMED, format!("{}: {e}", path.display())))?;
        Ok(trace_plot(&trace))
    } else {
        Err(coded(MALFORMED, format!("{}: unrecognized CSV columns", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use trajdiff_core::eval::PlannerKind;

    fn row(planner: PlannerKind, success: bool) -> BenchmarkRow {
        let mut r = BenchmarkRow::failure("t", planner, 0);
        r.success = success;
        r
    }

    #[test]
    fn empty_inputs_say_no_data() {
        assert!(success_bars(&[]).contains("no data"));
        assert!(trace_plot(&[]).contains("no data"));
    }

    #[test]
    fn bars_are_deterministic() {
        let rows = vec![row(PlannerKind::Guided, true), row(PlannerKind::Langevin, false)];
        let a = success_bars(&rows);
        assert_eq!(a, success_bars(&rows));
        assert!(a.contains(">guided<") && a.contains(">langevin<"));
    }

    #[test]
    fn scale_maps_corners() {
        let grid = OccupancyGrid::new(0.05, [-1.0, 2.0], 40, 20).unwrap();
        let s = MapScale::new(&grid, 50.0);
        assert_eq!(s.to_px([-1.0, 3.0]), (MARGIN, MARGIN));
        assert_eq!(s.to_px([1.0, 2.0]), (MARGIN + 100.0, MARGIN + 50.0));
        assert_eq!(s.size(), (2.0 * MARGIN + 100.0, 2.0 * MARGIN + 50.0));
    }

    proptest::proptest! {
        #[test]
        fn points_in_extent_stay_on_canvas(fx in 0.0..=1.0f64, fy in 0.0..=1.0f64, px in 1.0..200.0f64) {
            let grid = OccupancyGrid::new(0.05, [-3.0, -3.0], 120, 120).unwrap();
            let s = MapScale::new(&grid, px);
            let e = grid.extent();
            let p = [e[0] + fx * (e[2] - e[0]), e[1] + fy * (e[3] - e[1])];
            let (x, y) = s.to_px(p);
            let (w, h) = s.size();
            proptest::prop_assert!((MARGIN - 1e-9..=w - MARGIN + 1e-9).contains(&x));
            proptest::prop_assert!((MARGIN - 1e-9..=h - MARGIN + 1e-9).contains(&y));
            // Distances scale uniformly.
            let (x0, y0) = s.to_px([e[0], e[1]]);
            let d = (x - x0).hypot(y - y0);
            proptest::prop_assert!((d - px * (p[0] - e[0]).hypot(p[1] - e[1])).abs() < 1e-6);
        }
    }
}
