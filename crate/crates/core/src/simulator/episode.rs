use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{step, RobotState, SimConfig, SimError};
use crate::bevmap::BevGrid;
use crate::controller::diagnostics::DiagnosticsRecord;
use crate::controller::{control_policy, BlendWeights, ControlAction, Diagnostics, Measurements, MlpHeads, PolicyConfig, PolicyParams, PolicyState};
use crate::dataset::records::{fmt_f64, FieldReader, Record, RecordError};
use crate::dataset::synth::{FixTracker, GnssModel, RouteCursor, SceneSpec};
use crate::dataset::world::{Polyline, RenderedFrame, World};
use crate::geodesy::{Bearing, Ellipsoid, GeoFix, LocalPoint};
use crate::learning::{PolicyModel, Preprocessor};
use crate::planner::features::encoder_input;
use crate::planner::{fuse_inputs, GruParams, WaypointHeads, NUM_WAYPOINTS};

/// World, global route and start pose of one episode.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: SceneSpec,
    pub world: World,
    pub route: Vec<GeoFix>,
    pub start: RobotState,
}

impl Scenario {
    pub fn from_spec(spec: &SceneSpec, seed: u64) -> Result<Self, SimError> {
        spec.validate()?;
        let world = spec.build_world(seed);
        let route = spec.route_fixes(&world.path)?;
        let start = spec.start_state(&world.path);
        Ok(Self {
            spec: spec.clone(),
            world,
            route,
            start,
        })
    }

    pub fn path(&self) -> &Polyline {
        &self.world.path
    }

    pub fn goal(&self) -> [f64; 2] {
        self.world.path.point_at(self.world.path.length())
    }
}

/// What a policy sees on one tick.
#[derive(Debug, Clone)]
pub struct TickInput<'a> {
    pub t: f64,
    /// Rendered only for policies that ask for images.
    pub frame: Option<&'a RenderedFrame>,
    pub gnss: GeoFix,
    pub gnss_prev: GeoFix,
    pub bearing: Bearing,
    /// Next two route points in the GNSS-estimated robot frame.
    pub route: [LocalPoint; 2],
    pub speed: f64,
}

pub trait Policy {
    fn needs_frames(&self) -> bool {
        false
    }

    fn act(&mut self, input: &TickInput<'_>) -> Result<(ControlAction, Option<Diagnostics>), SimError>;

    /// Recurrent state after the last tick, if any.
    fn hidden(&self) -> Option<&[f64]> {
        None
    }

    /// Latest BEV grid, for snapshots.
    fn bev(&self) -> Option<&BevGrid> {
        None
    }
}

/// Always commands zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, _: &TickInput<'_>) -> Result<(ControlAction, Option<Diagnostics>), SimError> {
        Ok((ControlAction::ZERO, None))
    }
}

/// Hand-set planner that aims at the route points, run through the full
/// control policy with zero MLP heads so the gate always selects PID.
///
/// The GRU update gate is saturated open, so the hidden state is
/// `tanh(a · [p1, p2])`; each waypoint displacement is
/// `gain · ((1 − mix)·p1 + mix·p2)` with its lateral component scaled by
/// `steer`. Route points refresh only with each GNSS fix, so `steer < 1`
/// keeps the heading loop from overshooting between fixes.
#[derive(Debug, Clone)]
pub struct RouteFollower {
    pub params: PolicyParams,
    pub config: PolicyConfig,
    pub state: PolicyState,
}

impl RouteFollower {
    pub const HIDDEN: usize = 4;
    const INPUT_SCALE: f64 = 0.02;

    pub fn new(gain: f64, mix: f64, steer: f64, config: PolicyConfig) -> Self {
        let input = crate::planner::ROUTE_INPUTS;
        let hidden = Self::HIDDEN;
        let mut gru = GruParams::zeros(input, hidden);
        gru.b_u.fill(40.0);
        for i in 0..hidden {
            gru.w_h.set(i, i, Self::INPUT_SCALE);
        }
        let mut heads = WaypointHeads::zeros(hidden);
        let w = gain / Self::INPUT_SCALE;
        for l in 0..NUM_WAYPOINTS {
            for (axis, scale) in [(0, steer), (1, 1.0)] {
                heads.weights.set(2 * l + axis, axis, w * scale * (1.0 - mix));
                heads.weights.set(2 * l + axis, 2 + axis, w * scale * mix);
            }
        }
        let params = PolicyParams {
            gru,
            waypoint_heads: heads,
            mlp_heads: MlpHeads::zeros(hidden, 4),
            weights: BlendWeights::fixed(),
        };
        Self {
            state: PolicyState::new(hidden, &config),
            params,
            config,
        }
    }
}

impl Default for RouteFollower {
    fn default() -> Self {
        Self::new(0.5, 0.0, 0.35, PolicyConfig::default())
    }
}

impl Policy for RouteFollower {
    fn act(&mut self, input: &TickInput<'_>) -> Result<(ControlAction, Option<Diagnostics>), SimError> {
        let z = fuse_inputs(&[], &[], input.route, input.speed);
        let meas = Measurements { speed: input.speed };
        let (u, next, diag) = control_policy(&z, &self.state, input.route, meas, &self.params, &self.config)?;
        self.state = next;
        Ok((u, Some(diag)))
    }

    fn hidden(&self) -> Option<&[f64]> {
        Some(&self.state.planner.h)
    }
}

/// A trained model driven statefully: the GRU state persists across ticks.
/// Perception uses the frozen oracle BEV and the trained RGB encoder.
#[derive(Debug, Clone)]
pub struct ModelPolicy {
    pub model: PolicyModel,
    params: PolicyParams,
    pre: Preprocessor,
    state: PolicyState,
    last_bev: Option<BevGrid>,
}

impl ModelPolicy {
    pub fn new(model: PolicyModel, spec: &SceneSpec) -> Self {
        let pre = Preprocessor::new(&model.config, spec.camera());
        Self {
            params: model.policy_params(),
            state: PolicyState::new(model.config.hidden, &model.config.policy),
            pre,
            model,
            last_bev: None,
        }
    }
}

impl Policy for ModelPolicy {
    fn needs_frames(&self) -> bool {
        true
    }

    fn act(&mut self, input: &TickInput<'_>) -> Result<(ControlAction, Option<Diagnostics>), SimError> {
        let frame = input.frame.ok_or_else(|| SimError::ConfigMismatch("model policy needs rendered frames".into()))?;
        let c = &self.model.config;
        let f_rgb = self.model.encoder.encode(&encoder_input(&frame.rgb, frame.width, frame.height, c.enc_w, c.enc_h));
        let grid = self.pre.oracle_bev(&frame.labels, &frame.depth, None)?;
        let f_bev = self.pre.projector.encode(&grid);
        self.last_bev = Some(grid);
        let z = self.model.fuse(&f_rgb, &f_bev, input.route, input.speed);
        let meas = Measurements { speed: input.speed };
        let (u, next, diag) = control_policy(&z, &self.state, input.route, meas, &self.params, &c.policy)?;
        self.state = next;
        Ok((u, Some(diag)))
    }

    fn hidden(&self) -> Option<&[f64]> {
        Some(&self.state.planner.h)
    }

    fn bev(&self) -> Option<&BevGrid> {
        self.last_bev.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    GoalReached,
    TickBudget,
    CrossTrackBlowout,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::GoalReached => 0,
            Outcome::TickBudget => 2,
            Outcome::CrossTrackBlowout => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::GoalReached => "goal_reached",
            Outcome::TickBudget => "tick_budget",
            Outcome::CrossTrackBlowout => "cross_track_blowout",
        }
    }
}

/// True pose and what the robot believed on one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub tick: u64,
    pub t: f64,
    pub east: f64,
    pub north: f64,
    pub heading: f64,
    pub speed: f64,
    /// Arc length of the projection onto the path.
    pub progress: f64,
    pub cross_track: f64,
    pub in_zone: bool,
    /// Latest fix in the scene frame.
    pub gnss_east: f64,
    pub gnss_north: f64,
}

impl Record for TrajectoryRow {
    const KIND: &'static str = "trajectory";

    fn header() -> Vec<String> {
        ["tick", "t", "east", "north", "heading", "speed", "progress", "cross_track", "in_zone", "gnss_east", "gnss_north"]
            .map(String::from)
            .to_vec()
    }

    fn to_fields(&self) -> Vec<String> {
        let mut v = vec![self.tick.to_string()];
        v.extend([self.t, self.east, self.north, self.heading, self.speed, self.progress, self.cross_track].map(fmt_f64));
        v.push((self.in_zone as u8).to_string());
        v.extend([self.gnss_east, self.gnss_north].map(fmt_f64));
        v
    }

    fn from_fields(f: &FieldReader<'_>) -> Result<Self, RecordError> {
        Ok(Self {
            tick: f.u64("tick")?,
            t: f.f64("t")?,
            east: f.f64("east")?,
            north: f.f64("north")?,
            heading: f.f64("heading")?,
            speed: f.f64("speed")?,
            progress: f.f64("progress")?,
            cross_track: f.f64("cross_track")?,
            in_zone: f.u64("in_zone")? != 0,
            gnss_east: f.f64("gnss_east")?,
            gnss_north: f.f64("gnss_north")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub outcome: Outcome,
    pub ticks: u64,
    pub duration: f64,
    pub distance: f64,
    pub max_cross_track: f64,
    pub mean_cross_track: f64,
    /// Largest absolute hidden-state component seen, when the policy has one.
    pub max_hidden_abs: f64,
    pub command_conflicts: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevSnapshot {
    pub tick: u64,
    pub grid: BevGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub summary: EpisodeSummary,
    pub trajectory: Vec<TrajectoryRow>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    /// Reference path and route points in the scene frame.
    pub path: Vec<[f64; 2]>,
    pub route: Vec<[f64; 2]>,
    pub zones: Vec<Vec<[f64; 2]>>,
    pub snapshots: Vec<BevSnapshot>,
}

impl EpisodeLog {
    pub fn outcome(&self) -> Outcome {
        self.summary.outcome
    }

    /// Largest cross-track error over ticks whose progress lies in `[s0, s1)`.
    pub fn max_cross_track_between(&self, s0: f64, s1: f64) -> Option<f64> {
        self.trajectory
            .iter()
            .filter(|r| r.progress >= s0 && r.progress < s1)
            .map(|r| r.cross_track)
            .reduce(f64::max)
    }
}

/// Runs one closed-loop episode: render, sample GNSS, transform the route,
/// act, step.
pub fn run_episode(scenario: &Scenario, policy: &mut dyn Policy, cfg: &SimConfig) -> Result<EpisodeLog, SimError> {
    cfg.validate()?;
    let ell = Ellipsoid::WGS84;
    let path = scenario.path();
    let goal = scenario.goal();
    let plane = scenario.spec.tangent_plane();
    let mut gnss = GnssModel::new(plane, cfg.gnss_sigma, cfg.bias_zones.clone(), cfg.seed ^ 0x6e55);
    let mut render_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let fix_dt = 1.0 / cfg.gnss_rate;

    let mut state = scenario.start;
    let h0 = state.heading;
    let lead = scenario.spec.cruise * fix_dt;
    let behind = gnss.sample([state.east - lead * h0.sin(), state.north - lead * h0.cos()])?;
    let mut fixes = FixTracker::new(behind, gnss.sample(state.position())?, Bearing::new(h0), fix_dt);
    let mut next_fix = fix_dt;
    let mut cursor = RouteCursor::default();

    let mut trajectory = Vec::new();
    let mut diagnostics = Vec::new();
    let mut snapshots = Vec::new();
    let mut distance = 0.0;
    let mut max_hidden: f64 = 0.0;
    let mut conflicts = 0;
    let mut outcome = Outcome::TickBudget;

    let mut tick: u64 = 0;
    loop {
        let t = tick as f64 * cfg.dt;
        if t + 1e-9 >= next_fix {
            fixes.push(gnss.sample(state.position())?);
            next_fix += fix_dt;
        }
        let route = cursor.advance(&scenario.route, fixes.curr, fixes.bearing, &ell);

        let proj = path.project(state.position());
        let fix_local = plane.to_enu(fixes.curr);
        trajectory.push(TrajectoryRow {
            tick,
            t,
            east: state.east,
            north: state.north,
            heading: state.heading,
            speed: state.speed,
            progress: proj.s,
            cross_track: proj.distance,
            in_zone: gnss.zone_at(state.position()).is_some(),
            gnss_east: fix_local.0,
            gnss_north: fix_local.1,
        });

        let dx = state.east - goal[0];
        let dy = state.north - goal[1];
        if dx.hypot(dy) < cfg.goal_radius {
            outcome = Outcome::GoalReached;
            break;
        }
        if proj.distance > cfg.max_cross_track {
            outcome = Outcome::CrossTrackBlowout;
            break;
        }
        if tick >= cfg.max_ticks {
            break;
        }

        let frame = if policy.needs_frames() {
            Some(scenario.world.render(&state, scenario.spec.pixel_noise, &mut render_rng))
        } else {
            None
        };
        let input = TickInput {
            t,
            frame: frame.as_ref(),
            gnss: fixes.curr,
            gnss_prev: fixes.prev,
            bearing: fixes.bearing,
            route,
            speed: fixes.speed,
        };
        let (action, diag) = policy.act(&input)?;
        if let Some(d) = &diag {
            conflicts += d.command_conflict as u64;
            diagnostics.push(DiagnosticsRecord::from_diagnostics(t, d));
        }
        if let Some(h) = policy.hidden() {
            max_hidden = h.iter().fold(max_hidden, |m, v| m.max(v.abs()));
        }
        if cfg.snapshot_every > 0 && tick.is_multiple_of(cfg.snapshot_every) {
            if let Some(g) = policy.bev() {
                snapshots.push(BevSnapshot { tick, grid: g.clone() });
            }
        }
        let next = step(&state, action, &cfg.kinematics, cfg.dt);
        distance += (next.east - state.east).hypot(next.north - state.north);
        state = next;
        tick += 1;
    }

    let n = trajectory.len() as f64;
    let summary = EpisodeSummary {
        outcome,
        ticks: tick,
        duration: tick as f64 * cfg.dt,
        distance,
        max_cross_track: trajectory.iter().map(|r| r.cross_track).fold(0.0, f64::max),
        mean_cross_track: trajectory.iter().map(|r| r.cross_track).sum::<f64>() / n,
        max_hidden_abs: max_hidden,
        command_conflicts: conflicts,
    };
    Ok(EpisodeLog {
        summary,
        trajectory,
        diagnostics,
        path: path.points().to_vec(),
        route: scenario
            .route
            .iter()
            .map(|f| {
                let (e, n) = plane.to_enu(*f);
                [e, n]
            })
            .collect(),
        zones: cfg.bias_zones.iter().map(|z| z.polygon.clone()).collect(),
        snapshots,
    })
}
