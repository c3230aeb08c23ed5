//! Episode directories and offline rendering of episode logs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BevSnapshot, EpisodeLog, EpisodeSummary, SimError, TrajectoryRow};
use crate::bevmap::{encode_png, render_rgb, BevGrid, GridSpec};
use crate::controller::diagnostics::DiagnosticsRecord;
use crate::dataset::records::{load_records, save_records};
use crate::dataset::tensorfile::{Tensor, TensorFile};

pub const SUMMARY_FILE: &str = "summary.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";
pub const GEOMETRY_FILE: &str = "episode.sqnv";

pub fn save_episode(dir: impl AsRef<Path>, log: &EpisodeLog) -> Result<(), SimError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let summary = toml::to_string(&log.summary).map_err(|e| SimError::BadLog(e.to_string()))?;
    fs::write(dir.join(SUMMARY_FILE), summary)?;
    save_records(dir.join(TRAJECTORY_FILE), &log.trajectory)?;
    save_records(dir.join(DIAGNOSTICS_FILE), &log.diagnostics)?;

    let mut tf = TensorFile::new();
    tf.insert("path", points_tensor(&log.path))?;
    tf.insert("route", points_tensor(&log.route))?;
    tf.insert("zone_sizes", Tensor::f64(&[log.zones.len()], log.zones.iter().map(|z| z.len() as f64).collect()))?;
    tf.insert("zones", points_tensor(&log.zones.concat()))?;
    let spec = log.snapshots.first().map(|s| *s.grid.spec()).unwrap_or_default();
    if log.snapshots.iter().any(|s| *s.grid.spec() != spec) {
        return Err(SimError::BadLog("snapshots have different grid shapes".into()));
    }
    tf.insert(
        "grid_spec",
        Tensor::f64(
            &[6],
            vec![spec.rows as f64, spec.cols as f64, spec.classes as f64, spec.cell_x, spec.cell_y, spec.lateral_half_width],
        ),
    )?;
    tf.insert("snapshot_ticks", Tensor::f64(&[log.snapshots.len()], log.snapshots.iter().map(|s| s.tick as f64).collect()))?;
    tf.insert(
        "snapshots",
        Tensor::f32(
            &[log.snapshots.len(), spec.rows, spec.cols, spec.classes],
            log.snapshots.iter().flat_map(|s| s.grid.data().iter().copied()).collect(),
        ),
    )?;
    tf.save(dir.join(GEOMETRY_FILE))?;
    Ok(())
}

pub fn load_episode(dir: impl AsRef<Path>) -> Result<EpisodeLog, SimError> {
    let dir = dir.as_ref();
    let summary: EpisodeSummary =
        toml::from_str(&fs::read_to_string(dir.join(SUMMARY_FILE))?).map_err(|e| SimError::BadLog(e.to_string()))?;
    let trajectory: Vec<TrajectoryRow> = load_records(dir.join(TRAJECTORY_FILE))?;
    let diagnostics: Vec<DiagnosticsRecord> = load_records(dir.join(DIAGNOSTICS_FILE))?;

    let tf = TensorFile::load(dir.join(GEOMETRY_FILE))?;
    let path = tensor_points(tf.f64s("path")?)?;
    let route = tensor_points(tf.f64s("route")?)?;
    let mut flat = tensor_points(tf.f64s("zones")?)?.into_iter();
    let mut zones = Vec::new();
    for &n in tf.f64s("zone_sizes")? {
        let z: Vec<[f64; 2]> = flat.by_ref().take(n as usize).collect();
        if z.len() != n as usize {
            return Err(SimError::BadLog("zone sizes exceed stored vertices".into()));
        }
        zones.push(z);
    }
    let g = tf.f64s("grid_spec")?;
    if g.len() != 6 {
        return Err(SimError::BadLog("grid spec needs 6 values".into()));
    }
    let spec = GridSpec {
        rows: g[0] as usize,
        cols: g[1] as usize,
        classes: g[2] as usize,
        cell_x: g[3],
        cell_y: g[4],
        lateral_half_width: g[5],
    };
    let ticks = tf.f64s("snapshot_ticks")?;
    let data = tf.f32s("snapshots")?;
    let per = spec.rows * spec.cols * spec.classes;
    if data.len() != ticks.len() * per {
        return Err(SimError::BadLog("snapshot data does not match tick count".into()));
    }
    let snapshots = ticks
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            Ok(BevSnapshot {
                tick: t as u64,
                grid: BevGrid::from_data(spec, data[k * per..(k + 1) * per].to_vec())?,
            })
        })
        .collect::<Result<_, SimError>>()?;
    Ok(EpisodeLog {
        summary,
        trajectory,
        diagnostics,
        path,
        route,
        zones,
        snapshots,
    })
}

fn points_tensor(pts: &[[f64; 2]]) -> Tensor {
    Tensor::f64(&[pts.len(), 2], pts.iter().flatten().copied().collect())
}

fn tensor_points(v: &[f64]) -> Result<Vec<[f64; 2]>, SimError> {
    if !v.len().is_multiple_of(2) {
        return Err(SimError::BadLog("point list has odd length".into()));
    }
    Ok(v.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

/// Renders a log to named files: `trajectory.svg`, `controls.svg` and one
/// `bev_<tick>.png` per snapshot. An empty log renders nothing.
pub fn replay(log: &EpisodeLog) -> Result<Vec<(String, Vec<u8>)>, SimError> {
    if log.trajectory.is_empty() {
        return Ok(Vec::new());
    }
    check(log)?;
    let mut out = vec![("trajectory.svg".to_string(), trajectory_svg(log).into_bytes())];
    if !log.diagnostics.is_empty() {
        out.push(("controls.svg".to_string(), controls_svg(&log.diagnostics).into_bytes()));
    }
    for s in &log.snapshots {
        out.push((format!("bev_{:06}.png", s.tick), encode_png(&render_rgb(&s.grid))));
    }
    Ok(out)
}

/// Writes [`replay`] output into `dir`.
pub fn write_artifacts(dir: impl AsRef<Path>, log: &EpisodeLog) -> Result<usize, SimError> {
    let files = replay(log)?;
    fs::create_dir_all(dir.as_ref())?;
    for (name, bytes) in &files {
        fs::write(dir.as_ref().join(name), bytes)?;
    }
    Ok(files.len())
}

fn check(log: &EpisodeLog) -> Result<(), SimError> {
    let bad = |m: &str| Err(SimError::BadLog(m.to_string()));
    if log.trajectory.windows(2).any(|w| w[1].tick <= w[0].tick) {
        return bad("trajectory ticks must increase");
    }
    if log.trajectory.iter().any(|r| ![r.east, r.north, r.heading, r.cross_track].iter().all(|v| v.is_finite())) {
        return bad("non-finite trajectory value");
    }
    let geometry = log.path.iter().chain(&log.route).chain(log.zones.iter().flatten());
    if geometry.flatten().any(|v| !v.is_finite()) {
        return bad("non-finite geometry");
    }
    if log.diagnostics.iter().any(|d| ![d.u_final.x, d.u_final.y, d.u_final.theta, d.timestamp].iter().all(|v| v.is_finite())) {
        return bad("non-finite control");
    }
    Ok(())
}

const SIZE: f64 = 600.0;
const MARGIN: f64 = 20.0;

/// Maps scene coordinates into a square canvas, north up.
struct Frame {
    min: [f64; 2],
    scale: f64,
    height: f64,
}

impl Frame {
    fn fit<'a>(pts: impl Iterator<Item = &'a [f64; 2]>) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
        let scale = (SIZE - 2.0 * MARGIN) / span;
        Self {
            min: lo,
            scale,
            height: (hi[1] - lo[1]) * scale + 2.0 * MARGIN,
        }
    }

    fn width(&self, max_east: f64) -> f64 {
        (max_east - self.min[0]) * self.scale + 2.0 * MARGIN
    }

    fn xy(&self, p: [f64; 2]) -> (f64, f64) {
        (MARGIN + (p[0] - self.min[0]) * self.scale, self.height - MARGIN - (p[1] - self.min[1]) * self.scale)
    }

    fn points(&self, pts: impl Iterator<Item = [f64; 2]>) -> String {
        pts.map(|p| {
            let (x, y) = self.xy(p);
            format!("{x:.2},{y:.2}")
        })
        .collect::<Vec<_>>()
        .join(" ")
    }
}

fn trajectory_svg(log: &EpisodeLog) -> String {
    let robot: Vec<[f64; 2]> = log.trajectory.iter().map(|r| [r.east, r.north]).collect();
    let all: Vec<[f64; 2]> = robot.iter().chain(&log.path).chain(&log.route).chain(log.zones.iter().flatten()).copied().collect();
    let f = Frame::fit(all.iter());
    let max_east = all.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (f.width(max_east), f.height);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">\n");
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for z in &log.zones {
        let _ = writeln!(s, "<polygon points=\"{}\" fill=\"#f4c430\" fill-opacity=\"0.35\" stroke=\"none\"/>", f.points(z.iter().copied()));
    }
    if !log.path.is_empty() {
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"#888\" stroke-width=\"3\"/>", f.points(log.path.iter().copied()));
    }
    for p in &log.route {
        let (x, y) = f.xy(*p);
        let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"#1f77b4\"/>");
    }
    let fixes = log.trajectory.iter().map(|r| [r.gnss_east, r.gnss_north]);
    let mut last = None;
    for p in fixes {
        if last != Some(p) {
            let (x, y) = f.xy(p);
            let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.5\" fill=\"#2ca02c\"/>");
            last = Some(p);
        }
    }
    let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\"/>", f.points(robot.iter().copied()));
    let (x0, y0) = f.xy(robot[0]);
    let _ = writeln!(s, "<circle cx=\"{x0:.2}\" cy=\"{y0:.2}\" r=\"5\" fill=\"none\" stroke=\"#d62728\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{MARGIN}\" y=\"14\" font-size=\"12\" font-family=\"monospace\">{} ticks={} max_ct={:.3} m</text>",
        log.summary.outcome.as_str(),
        log.summary.ticks,
        log.summary.max_cross_track
    );
    s += "</svg>\n";
    s
}

fn controls_svg(diag: &[DiagnosticsRecord]) -> String {
    const ROW: f64 = 120.0;
    let t0 = diag[0].timestamp;
    let span = (diag[diag.len() - 1].timestamp - t0).max(1e-9);
    let w = SIZE;
    let h = 3.0 * ROW + 2.0 * MARGIN;
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">\n");
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    let x: fn(&DiagnosticsRecord) -> f64 = |d| d.u_final.x;
    let y: fn(&DiagnosticsRecord) -> f64 = |d| d.u_final.y;
    let theta: fn(&DiagnosticsRecord) -> f64 = |d| d.u_final.theta;
    for (k, (name, get)) in [("x", x), ("y", y), ("theta", theta)].iter().enumerate() {
        let top = MARGIN + k as f64 * ROW;
        let mid = top + ROW / 2.0;
        let _ = writeln!(s, "<line x1=\"{MARGIN}\" y1=\"{mid:.2}\" x2=\"{:.2}\" y2=\"{mid:.2}\" stroke=\"#ccc\"/>", w - MARGIN);
        let _ = writeln!(s, "<text x=\"{MARGIN}\" y=\"{:.2}\" font-size=\"12\" font-family=\"monospace\">{name}</text>", top + 12.0);
        let pts: Vec<String> = diag
            .iter()
            .map(|d| {
                let x = MARGIN + (d.timestamp - t0) / span * (w - 2.0 * MARGIN);
                let y = mid - get(d).clamp(-1.0, 1.0) * (ROW / 2.0 - 6.0);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1\"/>", pts.join(" "));
    }
    s += "</svg>\n";
    s
}
