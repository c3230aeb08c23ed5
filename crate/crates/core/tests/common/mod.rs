//! Checks shared by the integration tests and the acceptance runner.
#![allow(dead_code, clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqnav::bevmap::{
    back_project, build_bev, reproject, BevConfig, BevGrid, CameraIntrinsics, CameraToRobot, DepthImage, GridSpec,
    SegScores,
};
use seqnav::controller::{blend, BlendBranch, BlendWeights, ControlAction, GateNorm, MlpHead};
use seqnav::geodesy::{
    bearing_formula, curvature_radii, global_to_local, great_circle_distance, wrap_angle, Bearing, Ellipsoid, GeoFix,
    LocalPoint,
};
use seqnav::learning::{mgn_update, FrameInput, MgnConfig, ModelConfig, PolicyModel, TaskWeights, TrainSample};
use seqnav::planner::{gru_step_backward, gru_step_traced, rollout_backward, rollout_waypoints, GruParams, PlannerState, WaypointHeads};

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    pub fn assert(&self) {
        assert!(self.passed, "{}", self.detail);
    }
}

// ---------------------------------------------------------------- geodesy

pub const ORACLE_CSV: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/geodesy_oracle.csv");

#[derive(Debug, Clone, Copy, serde::Deserialize)]
pub struct OracleRow {
    pub prev_lat: f64,
    pub prev_lon: f64,
    pub curr_lat: f64,
    pub curr_lon: f64,
    pub route_lat: f64,
    pub route_lon: f64,
    pub beta: f64,
    pub bearing: f64,
    pub c_m: f64,
    pub c_e: f64,
    pub local_x: f64,
    pub local_y: f64,
    pub distance: f64,
}

pub fn oracle_rows() -> Vec<OracleRow> {
    csv::Reader::from_path(ORACLE_CSV)
        .expect("oracle fixture")
        .deserialize()
        .collect::<Result<_, _>>()
        .expect("oracle rows")
}

fn fix(lat: f64, lon: f64) -> GeoFix {
    GeoFix::new(lat, lon).expect("valid fix")
}

/// Largest relative error per quantity over the oracle table.
#[derive(Debug, Default, Clone, Copy)]
pub struct GeoErrors {
    pub bearing: f64,
    pub c_m: f64,
    pub c_e: f64,
    pub local: f64,
    pub distance: f64,
}

impl GeoErrors {
    pub fn max(&self) -> f64 {
        [self.bearing, self.c_m, self.c_e, self.local, self.distance]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn geodesy_errors(rows: &[OracleRow]) -> GeoErrors {
    let ell = Ellipsoid::WGS84;
    let mut e = GeoErrors::default();
    for r in rows {
        let prev = fix(r.prev_lat, r.prev_lon);
        let curr = fix(r.curr_lat, r.curr_lon);
        let route = fix(r.route_lat, r.route_lon);

        // angles are compared on the circle, relative to at least one radian
        let b = bearing_formula(prev, curr).radians();
        e.bearing = e.bearing.max(wrap_angle(b - r.bearing).abs() / r.bearing.abs().max(1.0));

        let radii = curvature_radii(curr.lat_rad(), &ell);
        e.c_m = e.c_m.max((radii.meridional - r.c_m).abs() / r.c_m);
        e.c_e = e.c_e.max((radii.prime_vertical - r.c_e).abs() / r.c_e);

        let p = global_to_local(route, curr, Bearing::new(r.beta), &ell);
        let scale = r.local_x.hypot(r.local_y);
        e.local = e.local.max((p.x - r.local_x).abs().max((p.y - r.local_y).abs()) / scale);

        let d = great_circle_distance(prev, curr, &ell);
        e.distance = e.distance.max((d - r.distance).abs() / r.distance);
    }
    e
}

/// Closed-form cases, returned as `(name, error)`.
pub fn geodesy_closed_forms() -> Vec<(&'static str, f64)> {
    let ell = Ellipsoid::WGS84;
    let origin = fix(0.0, 0.0);
    let north = bearing_formula(origin, fix(1.0, 0.0)).radians();
    let east = bearing_formula(origin, fix(0.0, 1.0)).radians();
    let c_e = curvature_radii(0.0, &ell).prime_vertical;
    let same = fix(35.0, 137.0);
    let zero = global_to_local(same, same, Bearing::new(1.234), &ell);
    let eps_deg = 1e-4;
    let east_pt = global_to_local(fix(0.0, eps_deg), origin, Bearing::new(0.0), &ell);
    let half = great_circle_distance(origin, fix(0.0, 180.0), &ell);
    vec![
        ("bearing due north", north.abs()),
        ("bearing due east", (east - PI / 2.0).abs()),
        ("prime-vertical radius at the equator", (c_e - 6_378_137.0).abs() / 6_378_137.0),
        ("coincident route point", zero.norm()),
        (
            "route point due east",
            ((east_pt.x - 6_378_137.0 * eps_deg.to_radians()).abs() / east_pt.x).max(east_pt.y.abs()),
        ),
        ("distance to self", great_circle_distance(same, same, &ell)),
        ("antipodal distance", (half - PI * 6_378_137.0).abs() / half),
    ]
}

pub fn criterion_geodesy() -> Check {
    let t0 = Instant::now();
    let rows = oracle_rows();
    let errs = geodesy_errors(&rows);
    let closed = geodesy_closed_forms();
    let secs = t0.elapsed().as_secs_f64();
    let worst_closed = closed.iter().map(|c| c.1).fold(0.0, f64::max);
    let passed = rows.len() == 1000 && errs.max() <= 1e-9 && worst_closed <= 1e-12 && secs < 5.0;
    Check::new(
        passed,
        format!(
            "{} fixes, max rel err bearing {:.1e} c_m {:.1e} c_e {:.1e} local {:.1e} distance {:.1e}; \
             closed forms max {:.1e}; {:.2}s",
            rows.len(),
            errs.bearing,
            errs.c_m,
            errs.c_e,
            errs.local,
            errs.distance,
            worst_closed,
            secs
        ),
    )
}

// -------------------------------------------------------------------- BEV

/// One randomly drawn camera frame plus optional fusion history.
pub struct BevFrame {
    pub intr: CameraIntrinsics,
    pub ext: CameraToRobot,
    pub depth: DepthImage,
    pub seg: SegScores,
    pub previous: Option<BevGrid>,
    pub cfg: BevConfig,
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    // forward-looking mount, then random pitch, roll and yaw
    let base = *CameraToRobot::forward_mounted(0.0, rng.gen_range(-0.2..0.6)).rotation();
    let (sy, cy) = rng.gen_range(-0.8f64..0.8).sin_cos();
    let (sr, cr) = rng.gen_range(-0.2f64..0.2).sin_cos();
    let yaw = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
    let roll = [[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]];
    mat_mul(&yaw, &mat_mul(&roll, &base))
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn random_bev_frame(seed: u64) -> BevFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = rng.gen_range(4..48);
    let height = rng.gen_range(3..32);
    let intr = CameraIntrinsics::new(
        rng.gen_range(3.0..60.0),
        rng.gen_range(3.0..60.0),
        rng.gen_range(0.0..width as f64),
        rng.gen_range(0.0..height as f64),
        width,
        height,
    )
    .unwrap();
    let ext = CameraToRobot::new(
        random_rotation(&mut rng),
        [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(0.2..1.5)],
    )
    .unwrap();
    let n = width * height;
    let depth_values: Vec<f32> = (0..n)
        .map(|_| match rng.gen_range(0..20) {
            0 => f32::NAN,
            1 => 0.0,
            2 => -1.0,
            3 => f32::INFINITY,
            _ => rng.gen_range(0.05f32..24.0),
        })
        .collect();
    let mask: Vec<bool> = (0..n).map(|_| rng.gen_range(0..10) > 0).collect();
    let depth = DepthImage::with_mask(width, height, depth_values, mask).unwrap();

    let mut cfg = BevConfig::default();
    if rng.gen_bool(0.5) {
        cfg.grid = GridSpec {
            rows: rng.gen_range(1..64),
            cols: rng.gen_range(1..96),
            classes: rng.gen_range(1..8),
            cell_x: rng.gen_range(0.05..0.6),
            cell_y: rng.gen_range(0.05..0.6),
            lateral_half_width: rng.gen_range(0.5..12.0),
        };
    }
    cfg.height_ceiling = rng.gen_range(0.0..3.0);
    cfg.alpha = rng.gen_range(0.05..=1.0);
    let classes = cfg.grid.classes;
    // quantized scores make arg-max ties common
    let scores: Vec<f32> = (0..n * classes).map(|_| rng.gen_range(0..5) as f32 * 0.25).collect();
    let seg = SegScores::new(width, height, classes, scores).unwrap();
    let previous = rng.gen_bool(0.5).then(|| {
        let len = cfg.grid.rows * cfg.grid.cols * classes;
        let data = (0..len)
            .map(|_| if rng.gen_bool(0.9) { 0.0 } else { rng.gen_range(0.0f32..=1.0) })
            .collect();
        BevGrid::from_data(cfg.grid, data).unwrap()
    });
    BevFrame {
        intr,
        ext,
        depth,
        seg,
        previous,
        cfg,
    }
}

/// Per-pixel loop over a dense count table, written without the library's
/// point list, cell map or reducer.
pub fn reference_bev(f: &BevFrame) -> Vec<f32> {
    let g = f.cfg.grid;
    let (w, h, classes) = (f.depth.width(), f.depth.height(), g.classes);
    let r = f.ext.rotation();
    let t = f.ext.translation();
    let mut tally = vec![0u32; g.rows * g.cols * classes];
    for v in 0..h {
        for u in 0..w {
            let k = v * w + u;
            let d = f.depth.values()[k];
            if !(d.is_finite() && d > 0.0 && f.depth.mask()[k]) {
                continue;
            }
            let d = d as f64;
            let pc = [(u as f64 - f.intr.cx) * d / f.intr.fx, (v as f64 - f.intr.cy) * d / f.intr.fy, d];
            let mut p = [0.0; 3];
            for (i, out) in p.iter_mut().enumerate() {
                *out = r[i][0] * pc[0] + r[i][1] * pc[1] + r[i][2] * pc[2] + t[i];
            }
            if p[2] > f.cfg.height_ceiling || !(p[0] > 0.0) {
                continue;
            }
            let i = (p[0] / g.cell_x).floor();
            let j = ((p[1] + g.lateral_half_width) / g.cell_y).floor();
            if i < 0.0 || j < 0.0 || i >= g.rows as f64 || j >= g.cols as f64 {
                continue;
            }
            let scores = &f.seg.data()[k * classes..(k + 1) * classes];
            let mut class = 0;
            for c in 1..classes {
                if scores[c] > scores[class] {
                    class = c;
                }
            }
            tally[(i as usize * g.cols + j as usize) * classes + class] += 1;
        }
    }
    let mut out = vec![0.0f32; tally.len()];
    for cell in 0..g.rows * g.cols {
        let counts = &tally[cell * classes..(cell + 1) * classes];
        let top = *counts.iter().max().unwrap();
        if top > 0 {
            let winner = counts.iter().position(|&n| n == top).unwrap();
            out[cell * classes + winner] = 1.0;
        }
    }
    if let Some(prev) = &f.previous {
        let a = f.cfg.alpha as f32;
        for (o, &p) in out.iter_mut().zip(prev.data()) {
            *o = (a * *o + (1.0 - a) * p).clamp(0.0, 1.0);
        }
    }
    out
}

pub struct BevStats {
    pub frames: usize,
    pub mismatched_frames: usize,
    pub points: usize,
    pub occupied_cells: usize,
    pub max_reprojection_px: f64,
}

pub fn bev_stats(frames: usize) -> BevStats {
    let mut s = BevStats {
        frames,
        mismatched_frames: 0,
        points: 0,
        occupied_cells: 0,
        max_reprojection_px: 0.0,
    };
    for seed in 0..frames as u64 {
        let f = random_bev_frame(seed);
        let grid = build_bev(&f.seg, &f.depth, &f.intr, &f.ext, f.previous.as_ref(), &f.cfg).unwrap();
        let reference = reference_bev(&f);
        let same = grid.data().len() == reference.len()
            && grid.data().iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            s.mismatched_frames += 1;
        }
        s.occupied_cells += grid.occupied_cells().count();
        for p in back_project(&f.depth, &f.intr, &f.ext).unwrap() {
            let (u, v) = reproject(p.point, &f.intr, &f.ext);
            let err = (u - p.pixel.0 as f64).hypot(v - p.pixel.1 as f64);
            s.max_reprojection_px = s.max_reprojection_px.max(err);
            s.points += 1;
        }
    }
    s
}

pub fn criterion_bev() -> Check {
    let s = bev_stats(100);
    Check::new(
        s.mismatched_frames == 0 && s.max_reprojection_px < 1e-6 && s.occupied_cells > 0,
        format!(
            "{} frames, {} differ from the reference; {} points, {} occupied cells; max reprojection error {:.1e} px",
            s.frames, s.mismatched_frames, s.points, s.occupied_cells, s.max_reprojection_px
        ),
    )
}

// -------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn random_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error of one gradient-check group and how many entries
/// were compared.
#[derive(Debug, Default, Clone, Copy)]
pub struct GradStats {
    pub instances: usize,
    pub entries: usize,
    /// Entries whose finite difference straddles a kink of the loss.
    pub skipped: usize,
    pub max_rel_err: f64,
}

impl GradStats {
    fn push(&mut self, analytic: f64, numeric: f64) {
        self.entries += 1;
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, numeric));
    }
}

/// Central difference of `f` along one coordinate of `x`.
fn central<F: FnMut(&[f64]) -> f64>(x: &mut [f64], i: usize, h: f64, f: &mut F) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Three GRU steps with the loss `c · h_3`; checks every parameter, the
/// first input and the initial state.
pub fn gru_grad_check(seed: u64) -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input, hidden) = (rng.gen_range(2..6), rng.gen_range(2..7));
    let mut p = GruParams::random(input, hidden, &mut rng);
    for (_, s) in p.slices_mut() {
        for v in s.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let zs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(input, 1.0, &mut rng)).collect();
    let h0 = random_vec(hidden, 0.8, &mut rng);
    let c = random_vec(hidden, 1.0, &mut rng);

    let run = |p: &GruParams, zs: &[Vec<f64>], h0: &[f64]| -> f64 {
        let mut h = h0.to_vec();
        for z in zs {
            h = gru_step_traced(z, &h, p).unwrap().0;
        }
        dot(&c, &h)
    };

    let mut traces = Vec::new();
    let mut h = h0.clone();
    for z in &zs {
        let (next, tr) = gru_step_traced(z, &h, &p).unwrap();
        traces.push(tr);
        h = next;
    }
    let mut grads = GruParams::zeros(input, hidden);
    let mut d_h = c.clone();
    let mut d_z0 = Vec::new();
    for (step, tr) in traces.iter().enumerate().rev() {
        let (d_z, d_prev) = gru_step_backward(tr, &p, &d_h, &mut grads);
        if step == 0 {
            d_z0 = d_z;
        }
        d_h = d_prev;
    }

    let mut st = GradStats {
        instances: 1,
        ..Default::default()
    };
    let blocks = p.slices().len();
    for b in 0..blocks {
        let len = p.slices()[b].1.len();
        for i in 0..len {
            let analytic = grads.slices()[b].1[i];
            let mut probe = p.clone();
            let orig = probe.slices()[b].1[i];
            probe.slices_mut()[b].1[i] = orig + FD_STEP;
            let up = run(&probe, &zs, &h0);
            probe.slices_mut()[b].1[i] = orig - FD_STEP;
            let down = run(&probe, &zs, &h0);
            st.push(analytic, (up - down) / (2.0 * FD_STEP));
        }
    }
    let mut z0 = zs[0].clone();
    for (i, &analytic) in d_z0.iter().enumerate() {
        let numeric = central(&mut z0, i, FD_STEP, &mut |z: &[f64]| {
            let mut zz = zs.clone();
            zz[0] = z.to_vec();
            run(&p, &zz, &h0)
        });
        st.push(analytic, numeric);
    }
    let mut hh = h0.clone();
    for (i, &analytic) in d_h.iter().enumerate() {
        let numeric = central(&mut hh, i, FD_STEP, &mut |h: &[f64]| run(&p, &zs, h));
        st.push(analytic, numeric);
    }
    st
}

/// Waypoint rollout with the loss `c · points`.
pub fn rollout_grad_check(seed: u64) -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = rng.gen_range(2..9);
    let mut heads = WaypointHeads::random(hidden, &mut rng);
    for b in heads.bias.iter_mut() {
        *b = rng.gen_range(-0.5..0.5);
    }
    let h = random_vec(hidden, 1.0, &mut rng);
    let c = random_vec(10, 1.0, &mut rng);
    let run = |heads: &WaypointHeads, h: &[f64]| {
        dot(&c, &rollout_waypoints(&PlannerState { h: h.to_vec() }, heads).unwrap().flatten())
    };
    let mut grads = WaypointHeads::zeros(hidden);
    let d_h = rollout_backward(&h, &heads, &c, &mut grads);

    let mut st = GradStats {
        instances: 1,
        ..Default::default()
    };
    for b in 0..2 {
        let len = heads.slices()[b].1.len();
        for i in 0..len {
            let mut probe = heads.clone();
            let orig = probe.slices()[b].1[i];
            probe.slices_mut()[b].1[i] = orig + FD_STEP;
            let up = run(&probe, &h);
            probe.slices_mut()[b].1[i] = orig - FD_STEP;
            let down = run(&probe, &h);
            st.push(grads.slices()[b].1[i], (up - down) / (2.0 * FD_STEP));
        }
    }
    let mut hh = h.clone();
    for (i, &analytic) in d_h.iter().enumerate() {
        st.push(analytic, central(&mut hh, i, FD_STEP, &mut |x: &[f64]| run(&heads, x)));
    }
    st
}

/// One MLP head with the loss `c · action`. Weights are drawn small enough
/// that the output clamp stays inactive.
pub fn mlp_grad_check(seed: u64) -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input, hidden) = (rng.gen_range(2..9), rng.gen_range(2..9));
    let mut head = MlpHead::random(input, hidden, &mut rng);
    for v in head.b1.iter_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    for v in head.b2.iter_mut() {
        *v = rng.gen_range(-0.2..0.2);
    }
    let mut h = random_vec(input, 1.0, &mut rng);
    // shrink until every output sits well inside the clamp
    while head.forward(&h).unwrap().raw.iter().any(|r| r.abs() > 0.9) {
        for (_, s) in head.slices_mut() {
            s.iter_mut().for_each(|v| *v *= 0.5);
        }
        h.iter_mut().for_each(|v| *v *= 0.5);
    }
    let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let run = |head: &MlpHead, h: &[f64]| {
        let a = ControlAction::from_array(head.forward(h).unwrap().raw);
        dot(&c, &a.to_array())
    };
    let trace = head.forward(&h).unwrap();
    let mut grads = MlpHead::zeros(input, hidden);
    let d_h = head.backward(&trace, c, &mut grads);

    let mut st = GradStats {
        instances: 1,
        ..Default::default()
    };
    for b in 0..4 {
        let len = head.slices()[b].1.len();
        for i in 0..len {
            let mut probe = head.clone();
            let orig = probe.slices()[b].1[i];
            probe.slices_mut()[b].1[i] = orig + FD_STEP;
            let up = run(&probe, &h);
            probe.slices_mut()[b].1[i] = orig - FD_STEP;
            let down = run(&probe, &h);
            st.push(grads.slices()[b].1[i], (up - down) / (2.0 * FD_STEP));
        }
    }
    let mut hh = h.clone();
    for (i, &analytic) in d_h.iter().enumerate() {
        st.push(analytic, central(&mut hh, i, FD_STEP, &mut |x: &[f64]| run(&head, x)));
    }
    st
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        enc_w: 2,
        enc_h: 1,
        encoder_hidden: 4,
        feature_dim: 3,
        seg_classes: 2,
        bev_feature: 2,
        hidden: 5,
        mlp_hidden: 4,
        ..Default::default()
    }
}

pub fn random_sample(cfg: &ModelConfig, k: usize, rng: &mut ChaCha8Rng) -> TrainSample {
    let cells = cfg.enc_w * cfg.enc_h;
    TrainSample {
        frames: (0..k)
            .map(|_| FrameInput {
                rgb: (0..cfg.encoder_input()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                f_bev: (0..cfg.bev_feature).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                route: [
                    LocalPoint::new(rng.gen_range(-3.0..3.0), rng.gen_range(2.0..6.0)),
                    LocalPoint::new(rng.gen_range(-3.0..3.0), rng.gen_range(6.0..10.0)),
                ],
                speed: rng.gen_range(0.0..1.0),
            })
            .collect(),
        seg_truth: (0..cells * cfg.seg_classes).map(|_| rng.gen_range(0..2) as f64).collect(),
        depth_truth: (0..cells).map(|_| rng.gen_range(0.0..1.0)).collect(),
        wp_truth: (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        control: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
    }
}

/// The whole model end to end: every parameter of a tiny instance against
/// the total loss. The loss has kinks (absolute values, clamps, the blend
/// gate); an entry is skipped when differences at two step sizes disagree,
/// which only happens when one lies within the step of a kink.
pub fn model_grad_check(seed: u64) -> GradStats {
    let cfg = tiny_model_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = PolicyModel::new(cfg.clone(), seed);
    let sample = random_sample(&cfg, rng.gen_range(1..4), &mut rng);
    let weights = TaskWeights([rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5)]);
    let (_, grads) = model.backward(&sample, weights).unwrap();

    let mut st = GradStats {
        instances: 1,
        ..Default::default()
    };
    let mut probe = model.clone();
    let blocks = model.slices().len();
    for b in 0..blocks {
        let len = model.slices()[b].1.len();
        for i in 0..len {
            let orig = model.slices()[b].1[i];
            let mut fd = |h: f64| {
                probe.slices_mut()[b].1[i] = orig + h;
                let up = probe.evaluate(&sample, weights).unwrap().l_total;
                probe.slices_mut()[b].1[i] = orig - h;
                let down = probe.evaluate(&sample, weights).unwrap().l_total;
                probe.slices_mut()[b].1[i] = orig;
                (up - down) / (2.0 * h)
            };
            let coarse = fd(FD_STEP);
            let fine = fd(0.25 * FD_STEP);
            if (coarse - fine).abs() > 1e-6 * coarse.abs().max(1.0) {
                st.skipped += 1;
                continue;
            }
            st.push(grads.slices()[b].1[i], coarse);
        }
    }
    st
}

pub fn merge(stats: impl IntoIterator<Item = GradStats>) -> GradStats {
    stats.into_iter().fold(GradStats::default(), |a, b| GradStats {
        instances: a.instances + b.instances,
        entries: a.entries + b.entries,
        skipped: a.skipped + b.skipped,
        max_rel_err: a.max_rel_err.max(b.max_rel_err),
    })
}

pub const GRAD_SEEDS: u64 = 20;

pub fn criterion_gradients() -> Check {
    let t0 = Instant::now();
    let groups = [
        ("gru", merge((0..GRAD_SEEDS).map(gru_grad_check))),
        ("rollout", merge((0..GRAD_SEEDS).map(rollout_grad_check))),
        ("mlp", merge((0..GRAD_SEEDS).map(mlp_grad_check))),
        ("model", merge((0..GRAD_SEEDS).map(model_grad_check))),
    ];
    let secs = t0.elapsed().as_secs_f64();
    let ok = groups.iter().all(|(_, g)| {
        g.instances >= 20 && g.max_rel_err < 1e-4 && g.entries > 0 && g.skipped * 20 <= g.entries + g.skipped
    });
    let parts: Vec<String> = groups
        .iter()
        .map(|(n, g)| {
            format!(
                "{n}: {} instances, {} entries ({} skipped at kinks), max rel err {:.1e}",
                g.instances, g.entries, g.skipped, g.max_rel_err
            )
        })
        .collect();
    Check::new(ok && secs < 30.0, format!("{}; {:.1}s", parts.join("; "), secs))
}

// ------------------------------------------------------------------ blend

/// `(case, passed)` for every row of the gate truth table.
pub fn blend_truth_table() -> Vec<(String, bool)> {
    let mut rows = Vec::new();
    let eps = 0.1;
    let beta = BlendWeights::new([[0.25, 0.75], [0.5, 0.125]]).unwrap();
    let mlp = ControlAction::new(0.5, 0.25, -0.75);
    let pid = ControlAction::new(0.25, -0.5, 1.0);
    let tiny = ControlAction::new(0.01, -0.02, 0.03);
    for norm in [GateNorm::L2, GateNorm::LInf] {
        let tag = format!("{norm:?}");
        let (u, b) = blend(mlp, pid, &beta, eps, norm);
        // x = 0.25·0.5 + 0.5·0.25, y = 0.25·0.25 + 0.5·(−0.5), θ = 0.75·(−0.75) + 0.125·1
        rows.push((
            format!("{tag} both active"),
            b == BlendBranch::Blended && u == ControlAction::new(0.25, -0.1875, -0.4375),
        ));
        let (u, b) = blend(mlp, tiny, &beta, eps, norm);
        rows.push((format!("{tag} mlp only"), b == BlendBranch::MlpOnly && u == mlp));
        let (u, b) = blend(tiny, pid, &beta, eps, norm);
        rows.push((format!("{tag} pid only"), b == BlendBranch::PidOnly && u == pid));
        let (u, b) = blend(tiny, tiny, &beta, eps, norm);
        rows.push((
            format!("{tag} neither"),
            b == BlendBranch::Stopped && u == ControlAction::ZERO,
        ));
        let (u, b) = blend(ControlAction::ZERO, ControlAction::ZERO, &beta, eps, norm);
        rows.push((format!("{tag} all zero"), b == BlendBranch::Stopped && u == ControlAction::ZERO));

        // gate boundary on each controller, each axis
        for axis in 0..3 {
            let along = |m: f64| {
                let mut v = [0.0; 3];
                v[axis] = m;
                ControlAction::from_array(v)
            };
            for (delta, active) in [(1e-9, true), (0.0, true), (-1e-9, false)] {
                let edge = along(eps + delta);
                let (u, b) = blend(edge, tiny, &beta, eps, norm);
                let want = if active { BlendBranch::MlpOnly } else { BlendBranch::Stopped };
                let want_u = if active { edge } else { ControlAction::ZERO };
                rows.push((format!("{tag} mlp norm ε{delta:+e} axis {axis}"), b == want && u == want_u));
                let (u, b) = blend(tiny, edge, &beta, eps, norm);
                let want = if active { BlendBranch::PidOnly } else { BlendBranch::Stopped };
                rows.push((format!("{tag} pid norm ε{delta:+e} axis {axis}"), b == want && u == want_u));
            }
        }
    }
    // unit weights on the diagonal keep each source's own column
    let eye = BlendWeights::new([[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let (u, b) = blend(mlp, pid, &eye, eps, GateNorm::L2);
    rows.push((
        "identity weights".into(),
        b == BlendBranch::Blended && u == ControlAction::new(mlp.x, mlp.y, pid.theta),
    ));
    rows
}

pub fn criterion_blend() -> Check {
    let rows = blend_truth_table();
    let failed: Vec<&str> = rows.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    let branches = ["both active", "mlp only", "pid only", "neither"]
        .iter()
        .all(|name| rows.iter().any(|r| r.0.ends_with(name)));
    Check::new(
        failed.is_empty() && branches,
        if failed.is_empty() {
            format!("{} cases exact, four branches and ε±1e-9 on both gates", rows.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

// ---------------------------------------------------------------- losses

pub fn loss_identity_errors(r: &seqnav::learning::LossReport) -> (f64, f64) {
    let [a, b, c] = r.weights.0;
    (
        (r.l_percep - (r.l_seg + r.l_depth)).abs(),
        (r.l_total - (a * r.l_percep + b * r.l_wp + c * r.l_ctrl)).abs(),
    )
}

pub fn weights_valid(w: TaskWeights) -> bool {
    w.0.iter().all(|v| *v > 0.0 && v.is_finite()) && (w.0[0] + w.0[1]) + w.0[2] == 3.0
}

pub fn criterion_losses() -> Check {
    use seqnav::learning::{train, TrainConfig};
    let cfg = tiny_model_config();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let train_set: Vec<TrainSample> = (0..20).map(|_| random_sample(&cfg, 2, &mut rng)).collect();
    let val_set: Vec<TrainSample> = (0..5).map(|_| random_sample(&cfg, 2, &mut rng)).collect();
    let tc = TrainConfig {
        k: 2,
        max_epochs: 50,
        early_stop_patience: 1000,
        lr: 1e-3,
        mgn: MgnConfig {
            per_step: true,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = train(PolicyModel::new(cfg, 1), &train_set, &val_set, &tc).unwrap();
    let (mut percep, mut total) = (0.0f64, 0.0f64);
    let mut bad_weights = 0;
    for s in &out.steps {
        let (p, t) = loss_identity_errors(s);
        percep = percep.max(p);
        total = total.max(t);
        bad_weights += !weights_valid(s.weights) as usize;
    }
    for h in &out.history {
        let (p, t) = loss_identity_errors(&h.train);
        percep = percep.max(p);
        total = total.max(t);
    }
    let moved = out.steps.windows(2).filter(|w| w[0].weights != w[1].weights).count();

    // the update itself on random norms and weights
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut direct_bad = 0;
    let mut w = TaskWeights::default();
    for _ in 0..10_000 {
        let norms = [rng.gen_range(0.0..50.0), rng.gen_range(0.0..1e-3), rng.gen_range(0.0..5.0)];
        let cfg = MgnConfig {
            step: rng.gen_range(0.01..1.0),
            ..Default::default()
        };
        w = mgn_update(norms, w, &cfg).unwrap();
        direct_bad += !weights_valid(w) as usize;
    }

    let passed = out.history.len() == 50 && percep <= 1e-9 && total <= 1e-9 && bad_weights == 0 && moved > 0 && direct_bad == 0;
    Check::new(
        passed,
        format!(
            "{} epochs, {} steps ({} with moved weights); max |l_percep - sum| {:.1e}, max |l_total - sum| {:.1e}; \
             {} invalid step weights, {} invalid of 10000 direct updates",
            out.history.len(),
            out.steps.len(),
            moved,
            percep,
            total,
            bad_weights,
            direct_bad
        ),
    )
}

// ------------------------------------------------------ sequential inputs

/// Validation control MAE for `k`-frame windows, one value per seed.
pub struct TrendResult {
    pub k1: Vec<f64>,
    pub k3: Vec<f64>,
    pub seconds: f64,
}

pub fn k_trend(seeds: &[u64]) -> TrendResult {
    use seqnav::dataset::synth::varied_spec;
    use seqnav::dataset::{synth_route, PathShape, SceneSpec, Split};
    use seqnav::learning::{evaluate_routes, routes_samples, train, TrainConfig};

    let t0 = Instant::now();
    let base = SceneSpec {
        path: PathShape::Straight { length: 30.0 },
        fps: 5.0,
        gnss_sigma: 0.5,
        image_width: 32,
        image_height: 16,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut routes = |n: u64, first: u64, split: Split| -> Vec<_> {
        (0..n)
            .map(|i| synth_route(&varied_spec(&base, &mut rng), first + i, &format!("r{i}"), split).unwrap())
            .collect::<Vec<_>>()
    };
    let train_routes = routes(6, 100, Split::Train);
    let val_routes = routes(3, 200, Split::Val);
    let model_cfg = ModelConfig::default();
    let mut res = TrendResult {
        k1: Vec::new(),
        k3: Vec::new(),
        seconds: 0.0,
    };
    for &k in &[1usize, 3] {
        let tr = routes_samples(&train_routes, k, &model_cfg).unwrap();
        let va = routes_samples(&val_routes, k, &model_cfg).unwrap();
        for &seed in seeds {
            let cfg = TrainConfig {
                k,
                max_epochs: 30,
                lr: 1e-3,
                seed,
                ..Default::default()
            };
            let out = train(PolicyModel::new(model_cfg.clone(), seed), &tr, &va, &cfg).unwrap();
            let mae = evaluate_routes(&out.best, &val_routes, k).unwrap().overall.ctrl_mae;
            if k == 1 {
                res.k1.push(mae)
            } else {
                res.k3.push(mae)
            }
        }
    }
    res.seconds = t0.elapsed().as_secs_f64();
    res
}

pub fn criterion_k_trend() -> Check {
    let r = k_trend(&[0, 1, 2]);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m1, m3) = (mean(&r.k1), mean(&r.k3));
    let per_seed: Vec<String> = r
        .k1
        .iter()
        .zip(&r.k3)
        .enumerate()
        .map(|(s, (a, b))| format!("seed {s}: {a:.4} vs {b:.4}"))
        .collect();
    Check::new(
        m3 <= m1 && r.seconds < 600.0,
        format!(
            "val control MAE K=1 {m1:.4}, K=3 {m3:.4} ({}); {:.0}s",
            per_seed.join(", "),
            r.seconds
        ),
    )
}

// ------------------------------------------------------------ closed loop

pub struct LoopResult {
    pub name: &'static str,
    pub clean_goal: bool,
    pub clean_max: f64,
    pub zone_goal: bool,
    pub zone_peak: f64,
    /// Largest cross-track from 10 m past the zone exit to the goal.
    pub after_zone: f64,
    pub deterministic: bool,
}

pub const ZONE_START: f64 = 20.0;
pub const ZONE_END: f64 = 30.0;

pub fn closed_loop(name: &'static str, path: seqnav::dataset::PathShape) -> LoopResult {
    use seqnav::dataset::{BiasZone, SceneSpec};
    use seqnav::simulator::{run_episode, Outcome, RouteFollower, Scenario, SimConfig};

    let spec = SceneSpec {
        path,
        heading: 0.7,
        obstacles: 0,
        ..Default::default()
    };
    let sc = Scenario::from_spec(&spec, 1).unwrap();
    let clean = run_episode(&sc, &mut RouteFollower::default(), &SimConfig::default()).unwrap();
    let cfg = SimConfig {
        bias_zones: vec![BiasZone::along_path(sc.path(), ZONE_START, ZONE_END, 8.0, 5.0)],
        ..Default::default()
    };
    let zone = run_episode(&sc, &mut RouteFollower::default(), &cfg).unwrap();
    let again = run_episode(&sc, &mut RouteFollower::default(), &cfg).unwrap();
    let zone_peak = zone
        .trajectory
        .iter()
        .filter(|r| r.in_zone)
        .map(|r| r.cross_track)
        .fold(0.0, f64::max);
    LoopResult {
        name,
        clean_goal: clean.outcome() == Outcome::GoalReached,
        clean_max: clean.summary.max_cross_track,
        zone_goal: zone.outcome() == Outcome::GoalReached,
        zone_peak,
        after_zone: zone.max_cross_track_between(ZONE_END + 10.0, f64::INFINITY).unwrap_or(f64::INFINITY),
        deterministic: zone == again,
    }
}

pub fn closed_loop_routes() -> Vec<LoopResult> {
    use seqnav::dataset::PathShape;
    vec![
        closed_loop("straight", PathShape::Straight { length: 60.0 }),
        closed_loop(
            "s-curve",
            PathShape::SCurve {
                length: 60.0,
                amplitude: 2.0,
                wavelength: 40.0,
            },
        ),
    ]
}

impl LoopResult {
    pub fn passed(&self) -> bool {
        self.clean_goal
            && self.clean_max < 0.5
            && self.zone_goal
            && self.zone_peak > 1.0
            && self.after_zone < 0.5
            && self.deterministic
    }

    pub fn describe(&self) -> String {
        format!(
            "{}: clean max {:.2} m (goal {}), zone peak {:.2} m, after exit+10 m max {:.2} m (goal {}), deterministic {}",
            self.name, self.clean_max, self.clean_goal, self.zone_peak, self.after_zone, self.zone_goal, self.deterministic
        )
    }
}

pub fn criterion_closed_loop() -> Check {
    let runs = closed_loop_routes();
    Check::new(
        runs.iter().all(LoopResult::passed),
        runs.iter().map(LoopResult::describe).collect::<Vec<_>>().join("; "),
    )
}

// ---------------------------------------------------------------- metrics

pub fn criterion_metrics() -> Check {
    use seqnav::metrics::{ctrl_mae, depth_mae, iou, masks_from_labels, wp_mae, IouOptions};
    use seqnav::planner::WaypointPlan;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    for trial in 0..200 {
        let classes = rng.gen_range(1..6);
        let n = rng.gen_range(1..64);
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..classes) as u8).collect();
        let a = masks_from_labels(&labels, classes);
        for opts in [IouOptions::default(), IouOptions { empty_as_one: true }] {
            if iou(&a, &a, classes, opts).unwrap() != 1.0 {
                failures.push(format!("iou(a,a) trial {trial}"));
            }
        }
        let (w, h) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let depth: Vec<f32> = (0..w * h).map(|_| rng.gen_range(0.1f32..30.0)).collect();
        let mask: Vec<bool> = (0..w * h).map(|k| k == 0 || rng.gen_bool(0.7)).collect();
        let d = DepthImage::with_mask(w, h, depth, mask).unwrap();
        if depth_mae(&d, &d).unwrap() != 0.0 {
            failures.push(format!("depth_mae(a,a) trial {trial}"));
        }
        let pts: Vec<LocalPoint> = (0..5).map(|_| LocalPoint::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.0..10.0))).collect();
        let plan = WaypointPlan::from_points(&pts);
        if wp_mae(&plan, &plan).unwrap() != 0.0 {
            failures.push(format!("wp_mae(a,a) trial {trial}"));
        }
        let u = ControlAction::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if ctrl_mae(&u, &u) != 0.0 {
            failures.push(format!("ctrl_mae(a,a) trial {trial}"));
        }
    }
    // 2×2 labels, two classes: each class overlaps in one of three cells
    let pred = masks_from_labels(&[0, 0, 1, 1], 2);
    let truth = masks_from_labels(&[0, 1, 0, 1], 2);
    let fixture = iou(&pred, &truth, 2, IouOptions::default()).unwrap();
    if fixture != 1.0 / 3.0 {
        failures.push(format!("2x2 fixture gave {fixture}"));
    }
    Check::new(
        failures.is_empty(),
        if failures.is_empty() {
            "200 random identities exact for IoU and all three MAEs; 2x2 fixture IoU = 1/3 exactly".to_string()
        } else {
            failures.join(", ")
        },
    )
}

// ---------------------------------------------------------- serialization

use seqnav::dataset::records::{read_records, write_records, Record, RecordError};
use seqnav::dataset::tensorfile::{Tensor, TensorFile, TensorFileError};

/// Awkward but finite-or-infinite values; every one has a distinct bit
/// pattern that must survive the text encoding.
pub const EDGE_F64: [f64; 10] = [
    0.0,
    -0.0,
    1.0 / 3.0,
    -2.5e-300,
    5e-324,
    f64::MAX,
    f64::MIN_POSITIVE,
    f64::INFINITY,
    f64::NEG_INFINITY,
    std::f64::consts::PI,
];

pub fn edge(i: usize) -> f64 {
    EDGE_F64[i % EDGE_F64.len()]
}

/// Write, read, write again: values equal and the two encodings identical.
pub fn record_round_trip<T: Record + PartialEq + std::fmt::Debug>(items: &[T]) -> Result<(), String> {
    let mut first = Vec::new();
    write_records(&mut first, items).map_err(|e| e.to_string())?;
    let back: Vec<T> = read_records(first.as_slice()).map_err(|e| format!("{}: {e}", T::KIND))?;
    if back != items {
        return Err(format!("{}: values changed", T::KIND));
    }
    for (a, b) in items.iter().zip(&back) {
        if a.to_fields() != b.to_fields() {
            return Err(format!("{}: fields changed {:?} -> {:?}", T::KIND, a.to_fields(), b.to_fields()));
        }
    }
    let mut second = Vec::new();
    write_records(&mut second, &back).map_err(|e| e.to_string())?;
    if first != second {
        return Err(format!("{}: re-encoding differs", T::KIND));
    }
    Ok(())
}

pub fn trajectory_fixture() -> Vec<seqnav::simulator::TrajectoryRow> {
    (0..12)
        .map(|i| seqnav::simulator::TrajectoryRow {
            tick: i as u64 * 7,
            t: i as f64 / 30.0,
            east: edge(i),
            north: edge(i + 1),
            heading: edge(i + 2),
            speed: edge(i + 3),
            progress: edge(i + 4),
            cross_track: edge(i + 5),
            in_zone: i % 3 == 0,
            gnss_east: edge(i + 6),
            gnss_north: edge(i + 7),
        })
        .collect()
}

pub fn diagnostics_fixture() -> Vec<seqnav::controller::diagnostics::DiagnosticsRecord> {
    use seqnav::controller::diagnostics::DiagnosticsRecord;
    use seqnav::geodesy::Command;
    let branches = [BlendBranch::Blended, BlendBranch::MlpOnly, BlendBranch::PidOnly, BlendBranch::Stopped];
    (0..12)
        .map(|i| DiagnosticsRecord {
            timestamp: i as f64 * 0.1,
            command: Command::ALL[i % 3],
            waypoints: (0..5).map(|l| LocalPoint::new(edge(i + l), edge(i + 2 * l + 1))).collect(),
            theta_ref: (i % 2 == 0).then(|| edge(i)),
            v_ref: (i % 3 != 0).then(|| edge(i + 1)),
            u_mlp: ControlAction {
                x: edge(i),
                y: -0.25,
                theta: 1.0 / 7.0,
            },
            u_pid: ControlAction {
                x: -0.0,
                y: edge(i + 4),
                theta: 0.5,
            },
            u_final: ControlAction {
                x: 1.0,
                y: -1.0,
                theta: edge(i + 8),
            },
            branch: branches[i % 4],
        })
        .collect()
}

pub fn history_fixture() -> Vec<seqnav::learning::HistoryRow> {
    use seqnav::learning::{HistoryRow, LossReport};
    (0..12)
        .map(|i| HistoryRow {
            epoch: i,
            lr: 1e-4 / (1 << (i % 4)) as f64,
            train: LossReport {
                l_seg: edge(i),
                l_depth: edge(i + 1),
                l_percep: edge(i + 2),
                l_wp: edge(i + 3),
                l_ctrl: edge(i + 4),
                l_total: edge(i + 5),
                weights: TaskWeights([edge(i + 6), 1.0 / 3.0, 3.0 - 1.0 / 3.0]),
            },
            val_total: edge(i + 7),
        })
        .collect()
}

pub fn frame_record_fixture() -> Vec<seqnav::dataset::FrameRecord> {
    (0..12)
        .map(|i| seqnav::dataset::FrameRecord {
            index: i,
            timestamp: i as f64 / 5.0,
            lat: 35.0 + edge(i).clamp(-1.0, 1.0) * 1e-4,
            lon: -137.123456789012345,
            speed: edge(i + 1),
            control: ControlAction {
                x: edge(i + 2),
                y: 0.1,
                theta: -0.0,
            },
            east: edge(i + 3),
            north: edge(i + 4),
            heading: edge(i + 5),
        })
        .collect()
}

pub fn fix_row_fixture() -> Vec<seqnav::cli::FixRow> {
    (0..12)
        .map(|i| seqnav::cli::FixRow {
            lat: edge(i),
            lon: edge(i + 1),
            prev_lat: -89.999999999999,
            prev_lon: 179.99999999999997,
            p1_lat: 35.000_000_000_000_01,
            p1_lon: edge(i + 2),
            p2_lat: edge(i + 3),
            p2_lon: 0.1 + 0.2,
        })
        .collect()
}

pub fn local_row_fixture() -> Vec<seqnav::cli::LocalRow> {
    use seqnav::geodesy::Command;
    (0..12)
        .map(|i| seqnav::cli::LocalRow {
            bearing_deg: edge(i),
            held: i % 2 == 1,
            p1_x: edge(i + 1),
            p1_y: edge(i + 2),
            p2_x: edge(i + 3),
            p2_y: edge(i + 4),
            command: Command::ALL[i % 3],
            conflict: i % 5 == 0,
        })
        .collect()
}

pub fn all_record_round_trips() -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("trajectory", record_round_trip(&trajectory_fixture())),
        ("diagnostics", record_round_trip(&diagnostics_fixture())),
        ("history", record_round_trip(&history_fixture())),
        ("frames", record_round_trip(&frame_record_fixture())),
        ("fixes", record_round_trip(&fix_row_fixture())),
        ("local", record_round_trip(&local_row_fixture())),
        ("empty", record_round_trip::<seqnav::simulator::TrajectoryRow>(&[])),
    ]
}

/// Each corruption of a valid stream and whether it raised the right error.
pub fn record_corruptions() -> Vec<(&'static str, bool)> {
    use seqnav::simulator::TrajectoryRow;
    let mut good = Vec::new();
    write_records(&mut good, &trajectory_fixture()).unwrap();
    let text = String::from_utf8(good).unwrap();
    let read = |s: String| read_records::<TrajectoryRow, _>(s.as_bytes());
    let (preface, rest) = text.split_once('\n').unwrap();
    let (header, body) = rest.split_once('\n').unwrap();
    let mut broken_row: Vec<&str> = body.lines().collect();
    let bad_line = broken_row[3].replacen(',', ",oops", 1);
    broken_row[3] = &bad_line;
    vec![
        ("empty stream", matches!(read(String::new()), Err(RecordError::BadMagic))),
        ("wrong magic", matches!(read(text.replacen("sqnv-records", "sqnv-recordz", 1)), Err(RecordError::BadMagic))),
        ("missing preface", matches!(read(rest.to_string()), Err(RecordError::BadMagic))),
        (
            "future version",
            matches!(read(text.replacen("records 1 ", "records 9 ", 1)), Err(RecordError::UnsupportedVersion(9))),
        ),
        (
            "other kind",
            matches!(read_records::<seqnav::learning::HistoryRow, _>(text.as_bytes()), Err(RecordError::WrongKind { .. })),
        ),
        (
            "renamed column",
            matches!(read(format!("{preface}\n{}\n{body}", header.replace("east", "x"))), Err(RecordError::HeaderMismatch { .. })),
        ),
        (
            "garbled field",
            matches!(read(format!("{preface}\n{header}\n{}\n", broken_row.join("\n"))), Err(RecordError::Field { row: 3, .. })),
        ),
        (
            "short row",
            read(format!("{preface}\n{header}\n1,2,3\n")).is_err(),
        ),
    ]
}

/// Entries of every element type, including empty and edge-valued ones.
pub fn tensor_fixture() -> TensorFile {
    let mut f = TensorFile::new();
    let f32s = vec![0.0f32, -0.0, f32::NAN, -f32::NAN, f32::INFINITY, f32::MIN_POSITIVE, 1e-45, f32::MAX, 0.1, -3.5, 7.0, 1.0 / 3.0];
    f.insert("f32/grid", Tensor::f32(&[2, 3, 2], f32s)).unwrap();
    f.insert("f64/vec", Tensor::f64(&[10], EDGE_F64.to_vec())).unwrap();
    f.insert("f64/nan", Tensor::f64(&[2], vec![f64::NAN, f64::from_bits(0x7ff8_dead_beef_0001)])).unwrap();
    f.insert("u8/bytes", Tensor::u8(&[256], (0..=255).collect())).unwrap();
    f.insert("empty", Tensor::f32(&[4, 0], vec![])).unwrap();
    f.insert("scalar", Tensor::f64(&[], vec![42.0])).unwrap();
    f.insert("ユニコード", Tensor::u8(&[1], vec![7])).unwrap();
    f
}

fn bits(t: &Tensor) -> Vec<u64> {
    use seqnav::dataset::tensorfile::TensorData;
    match &t.data {
        TensorData::F32(v) => v.iter().map(|x| x.to_bits() as u64).collect(),
        TensorData::F64(v) => v.iter().map(|x| x.to_bits()).collect(),
        TensorData::U8(v) => v.iter().map(|x| *x as u64).collect(),
    }
}

pub fn tensor_round_trip(f: &TensorFile) -> Result<(), String> {
    let bytes = f.to_bytes();
    let back = TensorFile::from_bytes(&bytes).map_err(|e| e.to_string())?;
    if back.to_bytes() != bytes {
        return Err("re-encoding differs".into());
    }
    let names: Vec<&str> = f.names().collect();
    if names != back.names().collect::<Vec<_>>() {
        return Err("entry names or order changed".into());
    }
    for n in names {
        let (a, b) = (f.get(n).unwrap(), back.get(n).unwrap());
        if a.dims != b.dims || bits(a) != bits(b) {
            return Err(format!("entry {n:?} changed"));
        }
    }
    Ok(())
}

pub fn tensor_corruptions() -> Vec<(&'static str, bool)> {
    let f = tensor_fixture();
    let good = f.to_bytes();
    let parse = |b: &[u8]| TensorFile::from_bytes(b);
    let with = |at: usize, v: u8| {
        let mut b = good.clone();
        b[at] = v;
        b
    };
    // every strict prefix past the magic is a truncation
    let truncations_ok = (4..good.len()).all(|n| matches!(parse(&good[..n]), Err(TensorFileError::TruncatedPayload)));

    // hand-built single entries
    let entry = |name: &[u8], code: u8, dims: &[u64], payload: &[u8]| {
        let mut b = Vec::new();
        b.extend_from_slice(&(name.len() as u32).to_le_bytes());
        b.extend_from_slice(name);
        b.push(code);
        b.push(dims.len() as u8);
        for d in dims {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b.extend_from_slice(payload);
        b
    };
    let file = |entries: &[Vec<u8>]| {
        let mut b = b"SQNV".to_vec();
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for e in entries {
            b.extend_from_slice(e);
        }
        b
    };
    let one = entry(b"a", 2, &[2], &[1, 2]);
    let mut trailing = good.clone();
    trailing.extend_from_slice(&[0, 0, 0]);

    vec![
        ("empty input", matches!(parse(&[]), Err(TensorFileError::BadMagic))),
        ("wrong magic", matches!(parse(&with(0, b'X')), Err(TensorFileError::BadMagic))),
        ("future version", matches!(parse(&with(4, 2)), Err(TensorFileError::UnsupportedVersion(2)))),
        ("every truncation", truncations_ok),
        ("trailing bytes", matches!(parse(&trailing), Err(TensorFileError::TrailingData(3)))),
        ("unknown dtype", matches!(parse(&file(&[entry(b"a", 9, &[1], &[0])])), Err(TensorFileError::UnknownDtype(9)))),
        ("non-utf8 name", matches!(parse(&file(&[entry(&[0xff, 0xfe], 2, &[1], &[0])])), Err(TensorFileError::InvalidName))),
        ("duplicate name", matches!(parse(&file(&[one.clone(), one.clone()])), Err(TensorFileError::DuplicateName(_)))),
        (
            "overflowing dims",
            matches!(parse(&file(&[entry(b"a", 1, &[u64::MAX, 2], &[])])), Err(TensorFileError::TruncatedPayload)),
        ),
        ("missing entry", matches!(f.get("nope"), Err(TensorFileError::Missing(_)))),
        ("wrong type", matches!(f.f64s("u8/bytes"), Err(TensorFileError::WrongType { .. }))),
        (
            "insert shape mismatch",
            matches!(TensorFile::new().insert("x", Tensor::f32(&[3], vec![1.0])), Err(TensorFileError::ShapeMismatch { .. })),
        ),
        ("valid hand-built file", parse(&file(&[one])).is_ok()),
    ]
}

pub fn criterion_serialization() -> Check {
    let mut failures = Vec::new();
    let records = all_record_round_trips();
    for (name, r) in &records {
        if let Err(e) = r {
            failures.push(format!("{name} round trip: {e}"));
        }
    }
    let tensor = tensor_round_trip(&tensor_fixture());
    if let Err(e) = &tensor {
        failures.push(format!("tensor round trip: {e}"));
    }
    let model = PolicyModel::new(tiny_model_config(), 3);
    let ckpt = model.to_tensorfile().unwrap();
    match tensor_round_trip(&ckpt) {
        Ok(()) if PolicyModel::from_tensorfile(&TensorFile::from_bytes(&ckpt.to_bytes()).unwrap()).unwrap() == model => {}
        Ok(()) => failures.push("checkpoint reload differs".into()),
        Err(e) => failures.push(format!("checkpoint: {e}")),
    }
    let grid = build_random_grid();
    if BevGrid::from_tensorfile(&TensorFile::from_bytes(&grid.to_tensorfile().unwrap().to_bytes()).unwrap()).unwrap() != grid {
        failures.push("BEV grid reload differs".into());
    }
    let corruptions: Vec<(&str, bool)> = record_corruptions().into_iter().chain(tensor_corruptions()).collect();
    failures.extend(corruptions.iter().filter(|c| !c.1).map(|c| format!("corruption case {:?}", c.0)));
    Check::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "{} record kinds, tensor fixture, checkpoint and BEV grid bit-identical; {} corruption cases raise the documented errors",
                records.len() - 1,
                corruptions.len()
            )
        } else {
            failures.join("; ")
        },
    )
}

fn build_random_grid() -> BevGrid {
    let f = random_bev_frame(3);
    build_bev(&f.seg, &f.depth, &f.intr, &f.ext, f.previous.as_ref(), &f.cfg).unwrap()
}
