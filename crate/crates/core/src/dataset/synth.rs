//! Synthetic route generator: a scene, a pure-pursuit expert with full state
//! access, and a GNSS model with optional degraded zones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::world::{CameraModel, Obstacle, Polyline, World};
use super::{DatasetError, ObservationSet, Route, Split};
use crate::bevmap::{CameraIntrinsics, CameraToRobot};
use crate::controller::ControlAction;
use crate::geodesy::{bearing, global_to_local, great_circle_distance, Bearing, Ellipsoid, GeoFix, LocalPoint, TangentPlane};
use crate::planner::{WaypointPlan, NUM_WAYPOINTS};
use crate::simulator::{step, Kinematics, RobotState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathShape {
    Straight { length: f64 },
    /// Sinusoidal lateral offset `amplitude · sin(2π · forward / wavelength)`.
    SCurve { length: f64, amplitude: f64, wavelength: f64 },
}

/// Region of degraded GNSS: fixes taken inside are shifted by `bias`
/// (east, north meters) and get `extra_sigma` of additional noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasZone {
    pub polygon: Vec<[f64; 2]>,
    pub bias: [f64; 2],
    pub extra_sigma: f64,
}

impl BiasZone {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.polygon.len();
        let mut inside = false;
        for i in 0..n {
            let (a, b) = (self.polygon[i], self.polygon[(i + 1) % n]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Band over the path interval `[s_start, s_end]`, `half_width` to each
    /// side, whose bias pushes fixes `lateral_bias` meters to the right of
    /// the local travel direction.
    pub fn along_path(path: &Polyline, s_start: f64, s_end: f64, half_width: f64, lateral_bias: f64) -> Self {
        let steps = ((s_end - s_start) / 0.5).ceil().max(1.0) as usize;
        let side = |sign: f64| -> Vec<[f64; 2]> {
            (0..=steps)
                .map(|k| {
                    let s = s_start + (s_end - s_start) * k as f64 / steps as f64;
                    let p = path.point_at(s);
                    let h = path.heading_at(s);
                    [p[0] + sign * half_width * h.cos(), p[1] - sign * half_width * h.sin()]
                })
                .collect()
        };
        let mut polygon = side(1.0);
        polygon.extend(side(-1.0).into_iter().rev());
        let h = path.heading_at(0.5 * (s_start + s_end));
        Self {
            polygon,
            bias: [lateral_bias * h.cos(), -lateral_bias * h.sin()],
            extra_sigma: 0.0,
        }
    }

    /// `e1,n1;e2,n2;...@be,bn[@sigma]`.
    pub fn parse(s: &str) -> Result<Self, DatasetError> {
        let bad = || DatasetError::InvalidSpec(format!("bias zone {s:?}: expected e,n;e,n;...@be,bn[@sigma]"));
        let parts: Vec<&str> = s.split('@').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(bad());
        }
        let pair = |t: &str| -> Result<[f64; 2], DatasetError> {
            let v: Vec<f64> = t.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
            match v[..] {
                [a, b] => Ok([a, b]),
                _ => Err(bad()),
            }
        };
        let polygon = parts[0].split(';').map(pair).collect::<Result<Vec<_>, _>>()?;
        if polygon.len() < 3 {
            return Err(bad());
        }
        let extra_sigma = match parts.get(2) {
            Some(t) => t.trim().parse().map_err(|_| bad())?,
            None => 0.0,
        };
        Ok(Self {
            polygon,
            bias: pair(parts[1])?,
            extra_sigma,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub path: PathShape,
    /// Compass heading of the path's initial direction, radians.
    pub heading: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub road_half_width: f64,
    pub obstacles: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub hfov_deg: f64,
    pub camera_height: f64,
    pub camera_pitch_deg: f64,
    pub max_depth: f64,
    pub fps: f64,
    pub gnss_rate: f64,
    pub gnss_sigma: f64,
    pub bias_zones: Vec<BiasZone>,
    /// Expert forward command on straights.
    pub cruise: f64,
    pub lookahead: f64,
    /// Std-dev of noise added to executed (not recorded) expert actions.
    pub exec_noise: f64,
    pub pixel_noise: f64,
    pub waypoint_spacing: f64,
    pub route_spacing: f64,
    /// Initial displacement to the right of the path, meters.
    pub start_offset: f64,
    pub start_heading_error: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            path: PathShape::Straight { length: 50.0 },
            heading: 0.0,
            origin_lat: 35.0,
            origin_lon: 137.0,
            road_half_width: 1.5,
            obstacles: 6,
            image_width: 64,
            image_height: 32,
            hfov_deg: 90.0,
            camera_height: 0.6,
            camera_pitch_deg: 15.0,
            max_depth: 20.0,
            fps: 30.0,
            gnss_rate: 1.0,
            gnss_sigma: 0.0,
            bias_zones: Vec::new(),
            cruise: 0.8,
            lookahead: 2.5,
            exec_noise: 0.0,
            pixel_noise: 0.0,
            waypoint_spacing: 1.0,
            route_spacing: 5.0,
            start_offset: 0.0,
            start_heading_error: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.to_string()));
        let length = match self.path {
            PathShape::Straight { length } => length,
            PathShape::SCurve { length, amplitude, wavelength } => {
                if !amplitude.is_finite() || !(wavelength > 0.0) {
                    return bad("s-curve needs finite amplitude and positive wavelength");
                }
                length
            }
        };
        if !(length > 1.0) || !length.is_finite() {
            return bad("path length must exceed 1 m");
        }
        let positive = [
            self.road_half_width,
            self.hfov_deg,
            self.camera_height,
            self.max_depth,
            self.fps,
            self.gnss_rate,
            self.cruise,
            self.lookahead,
            self.waypoint_spacing,
            self.route_spacing,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return bad("geometry, rates and spacings must be positive");
        }
        if self.hfov_deg >= 180.0 {
            return bad("horizontal field of view must be below 180 degrees");
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive");
        }
        if [self.gnss_sigma, self.exec_noise, self.pixel_noise].iter().any(|v| !(*v >= 0.0)) {
            return bad("noise levels must be non-negative");
        }
        if self.gnss_rate > self.fps {
            return bad("GNSS rate cannot exceed the frame rate");
        }
        GeoFix::new(self.origin_lat, self.origin_lon).map_err(|e| DatasetError::InvalidSpec(e.to_string()))?;
        for z in &self.bias_zones {
            if z.polygon.len() < 3 || !(z.extra_sigma >= 0.0) {
                return bad("bias zones need a polygon and non-negative sigma");
            }
        }
        Ok(())
    }

    pub fn origin(&self) -> GeoFix {
        GeoFix::new(self.origin_lat, self.origin_lon).expect("validated origin")
    }

    pub fn tangent_plane(&self) -> TangentPlane {
        TangentPlane::new(self.origin())
    }

    pub fn path(&self) -> Polyline {
        let (length, local): (f64, Box<dyn Fn(f64) -> f64>) = match self.path {
            PathShape::Straight { length } => (length, Box::new(|_| 0.0)),
            PathShape::SCurve { length, amplitude, wavelength } => (
                length,
                Box::new(move |y| amplitude * (std::f64::consts::TAU * y / wavelength).sin()),
            ),
        };
        let n = (length / 0.25).ceil() as usize;
        let (s, c) = self.heading.sin_cos();
        let pts = (0..=n)
            .map(|k| {
                let fwd = length * k as f64 / n as f64;
                let right = local(fwd);
                [right * c + fwd * s, -right * s + fwd * c]
            })
            .collect();
        Polyline::new(pts).expect("path has positive length")
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel {
            intrinsics: CameraIntrinsics::from_fov(self.image_width, self.image_height, self.hfov_deg.to_radians())
                .expect("validated camera"),
            extrinsics: CameraToRobot::forward_mounted(self.camera_height, self.camera_pitch_deg.to_radians()),
            max_depth: self.max_depth,
        }
    }

    /// Scene geometry; obstacle placement depends on `seed`.
    pub fn build_world(&self, seed: u64) -> World {
        let path = self.path();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b57_ac1e);
        let obstacles = (0..self.obstacles)
            .map(|_| {
                let s = rng.gen_range(0.0..path.length());
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let radius = rng.gen_range(0.3..0.6);
                let offset = side * (self.road_half_width + radius + rng.gen_range(0.8..5.0));
                let p = path.point_at(s);
                let h = path.heading_at(s);
                Obstacle {
                    center: [p[0] + offset * h.cos(), p[1] - offset * h.sin()],
                    radius,
                    height: 1.5,
                }
            })
            .collect();
        World {
            path,
            road_half_width: self.road_half_width,
            obstacles,
            camera: self.camera(),
        }
    }

    /// Global route points every `route_spacing` meters, ending at the goal.
    pub fn route_fixes(&self, path: &Polyline) -> Result<Vec<GeoFix>, DatasetError> {
        let plane = self.tangent_plane();
        let mut s = self.route_spacing;
        let mut out = Vec::new();
        while s < path.length() - 1e-9 {
            let p = path.point_at(s);
            out.push(plane.to_geo(p[0], p[1])?);
            s += self.route_spacing;
        }
        let end = path.point_at(path.length());
        out.push(plane.to_geo(end[0], end[1])?);
        Ok(out)
    }

    pub fn start_state(&self, path: &Polyline) -> RobotState {
        let p = path.point_at(0.0);
        let h = path.heading_at(0.0);
        RobotState::new(
            p[0] + self.start_offset * h.cos(),
            p[1] - self.start_offset * h.sin(),
            h + self.start_heading_error,
        )
    }
}

/// Pure-pursuit follower with full state access.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub lookahead: f64,
    pub cruise: f64,
    pub k_theta: f64,
    pub k_lateral: f64,
}

impl Expert {
    pub fn from_spec(spec: &SceneSpec) -> Self {
        Self {
            lookahead: spec.lookahead,
            cruise: spec.cruise,
            k_theta: 1.5,
            k_lateral: 0.8,
        }
    }

    pub fn act(&self, path: &Polyline, state: &RobotState) -> ControlAction {
        let proj = path.project(state.position());
        let target = state.world_to_body(path.point_at(proj.s + self.lookahead));
        let alpha = target[0].atan2(target[1]);
        let theta = self.k_theta * alpha;
        let closest = state.world_to_body(path.point_at(proj.s));
        let remaining = path.length() - proj.s;
        let slow = (remaining / 1.5).clamp(0.25, 1.0);
        let y = self.cruise * slow * (1.0 - 0.5 * theta.abs().min(1.0));
        ControlAction::new(self.k_lateral * closest[0], y, theta)
    }
}

/// Chooses the next two route points from the robot's own GNSS-frame view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RouteCursor {
    pub index: usize,
}

impl RouteCursor {
    /// Route points closer than this, or behind the robot, are passed.
    pub const REACH: f64 = 2.0;

    pub fn advance(&mut self, route: &[GeoFix], fix: GeoFix, beta: Bearing, ell: &Ellipsoid) -> [LocalPoint; 2] {
        let local = |i: usize| global_to_local(route[i], fix, beta, ell);
        while self.index + 1 < route.len() {
            let p = local(self.index);
            if p.norm() < Self::REACH || p.y < 0.0 {
                self.index += 1;
            } else {
                break;
            }
        }
        let next = (self.index + 1).min(route.len() - 1);
        [local(self.index), local(next)]
    }

    pub fn points(&self, route: &[GeoFix]) -> [GeoFix; 2] {
        [route[self.index], route[(self.index + 1).min(route.len() - 1)]]
    }
}

/// GNSS receiver model over a local tangent plane.
#[derive(Debug, Clone)]
pub struct GnssModel {
    pub plane: TangentPlane,
    pub sigma: f64,
    pub zones: Vec<BiasZone>,
    rng: ChaCha8Rng,
}

impl GnssModel {
    pub fn new(plane: TangentPlane, sigma: f64, zones: Vec<BiasZone>, seed: u64) -> Self {
        Self {
            plane,
            sigma,
            zones,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn zone_at(&self, p: [f64; 2]) -> Option<&BiasZone> {
        self.zones.iter().find(|z| z.contains(p))
    }

    pub fn sample(&mut self, p: [f64; 2]) -> Result<GeoFix, DatasetError> {
        let (bias, extra) = match self.zone_at(p) {
            Some(z) => (z.bias, z.extra_sigma),
            None => ([0.0, 0.0], 0.0),
        };
        let sigma = self.sigma.hypot(extra);
        let (ne, nn) = if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("finite sigma");
            (n.sample(&mut self.rng), n.sample(&mut self.rng))
        } else {
            (0.0, 0.0)
        };
        Ok(self.plane.to_geo(p[0] + bias[0] + ne, p[1] + bias[1] + nn)?)
    }
}

/// Fix pairs closer than this keep the previous bearing; a near-stationary
/// receiver's bearing is noise.
pub const MIN_BEARING_BASELINE: f64 = 0.1;

/// Fix pairs implying a speed above this (m/s) are receiver jumps, not
/// motion; bearing and speed are held across them.
pub const MAX_FIX_SPEED: f64 = 2.0;

/// Bearing and speed after the fix pair `prev → curr`, holding `held` when
/// the pair is too short or implausibly long.
pub fn fix_update(prev: GeoFix, curr: GeoFix, fix_dt: f64, held: (Bearing, f64)) -> (Bearing, f64) {
    let d = great_circle_distance(prev, curr, &Ellipsoid::WGS84);
    if d > MAX_FIX_SPEED * fix_dt {
        return held;
    }
    let beta = if d < MIN_BEARING_BASELINE { held.0 } else { bearing(prev, curr).unwrap_or(held.0) };
    (beta, d / fix_dt)
}

/// Latest two fixes and the bearing and speed derived from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixTracker {
    pub prev: GeoFix,
    pub curr: GeoFix,
    pub bearing: Bearing,
    pub speed: f64,
    pub fix_dt: f64,
}

impl FixTracker {
    pub fn new(prev: GeoFix, curr: GeoFix, heading: Bearing, fix_dt: f64) -> Self {
        let (bearing, speed) = fix_update(prev, curr, fix_dt, (heading, 0.0));
        Self { prev, curr, bearing, speed, fix_dt }
    }

    pub fn push(&mut self, fix: GeoFix) {
        self.prev = self.curr;
        self.curr = fix;
        (self.bearing, self.speed) = fix_update(self.prev, self.curr, self.fix_dt, (self.bearing, self.speed));
    }
}

/// Ground-truth waypoints: path points `spacing, 2·spacing, ...` ahead of
/// the robot's projection, in the true robot frame.
pub fn waypoints_ahead(path: &Polyline, state: &RobotState, spacing: f64) -> WaypointPlan {
    let s0 = path.project(state.position()).s;
    let pts: Vec<LocalPoint> = (1..=NUM_WAYPOINTS)
        .map(|l| {
            let b = state.world_to_body(path.point_at(s0 + l as f64 * spacing));
            LocalPoint::new(b[0], b[1])
        })
        .collect();
    WaypointPlan::from_points(&pts)
}

/// Drives the expert along the scene and records one observation per frame.
pub fn synth_route(spec: &SceneSpec, seed: u64, name: &str, split: Split) -> Result<Route, DatasetError> {
    spec.validate()?;
    let world = spec.build_world(seed);
    let path = &world.path;
    let route_fixes = spec.route_fixes(path)?;
    let expert = Expert::from_spec(spec);
    let kin = Kinematics::default();
    let ell = Ellipsoid::WGS84;
    let mut gnss = GnssModel::new(spec.tangent_plane(), spec.gnss_sigma, spec.bias_zones.clone(), seed ^ 0x6e55);
    let mut render_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut exec_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7ec);

    let frame_dt = 1.0 / spec.fps;
    let substeps = (frame_dt * 30.0).ceil().max(1.0) as usize;
    let sub_dt = frame_dt / substeps as f64;
    let fix_dt = 1.0 / spec.gnss_rate;
    let max_frames = (4.0 * path.length() / (spec.cruise * kin.v_max) * spec.fps).ceil() as usize + 10;

    let mut state = spec.start_state(path);
    let h0 = state.heading;
    let behind = [
        state.east - spec.cruise * fix_dt * h0.sin(),
        state.north - spec.cruise * fix_dt * h0.cos(),
    ];
    let mut fixes = FixTracker::new(gnss.sample(behind)?, gnss.sample(state.position())?, Bearing::new(h0), fix_dt);
    let mut next_fix = fix_dt;
    let mut cursor = RouteCursor::default();
    let exec = Normal::new(0.0, spec.exec_noise.max(0.0)).expect("finite sigma");

    let mut frames = Vec::new();
    for i in 0..max_frames {
        let t = i as f64 * frame_dt;
        if t + 1e-9 >= next_fix {
            fixes.push(gnss.sample(state.position())?);
            next_fix += fix_dt;
        }
        cursor.advance(&route_fixes, fixes.curr, fixes.bearing, &ell);
        let frame = world.render(&state, spec.pixel_noise, &mut render_rng);
        let control = expert.act(path, &state);
        frames.push(ObservationSet {
            timestamp: t,
            width: frame.width,
            height: frame.height,
            rgb: frame.rgb,
            depth: frame.depth,
            labels: frame.labels,
            gnss: fixes.curr,
            gnss_prev: fixes.prev,
            route_pts: cursor.points(&route_fixes).to_vec(),
            control,
            wp_truth: waypoints_ahead(path, &state, spec.waypoint_spacing),
            speed: fixes.speed,
            pose: state,
        });

        if path.length() - path.project(state.position()).s < 0.3 {
            break;
        }
        let executed = if spec.exec_noise > 0.0 {
            ControlAction::new(
                control.x + exec.sample(&mut exec_rng),
                control.y + exec.sample(&mut exec_rng),
                control.theta + exec.sample(&mut exec_rng),
            )
        } else {
            control
        };
        for _ in 0..substeps {
            state = step(&state, executed, &kin, sub_dt);
        }
    }
    Route::new(name, split, spec.clone(), seed, frames)
}

/// Scene variations used to populate dataset splits.
pub fn varied_spec(base: &SceneSpec, rng: &mut impl Rng) -> SceneSpec {
    let mut spec = base.clone();
    let length = match base.path {
        PathShape::Straight { length } | PathShape::SCurve { length, .. } => length,
    };
    spec.path = if rng.gen_bool(0.5) {
        PathShape::Straight { length }
    } else {
        PathShape::SCurve {
            length,
            amplitude: rng.gen_range(1.5..3.5),
            wavelength: rng.gen_range(25.0..45.0),
        }
    };
    spec.heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    spec.start_offset = rng.gen_range(-0.5..0.5);
    spec.start_heading_error = rng.gen_range(-0.15..0.15);
    spec
}
