//! Command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bevmap::{encode_png, render_rgb, BevGrid};
use crate::dataset::records::{fmt_f64, load_records, read_records, save_records, write_records, FieldReader, Record, RecordError};
use crate::dataset::{generate_splits, list_routes, load_meta, load_route, BiasZone, PathShape, Route, SceneSpec, Split, SplitCounts};
use crate::geodesy::{bearing, classify_command, global_to_local, Bearing, CommandThresholds, Ellipsoid, GeoError, GeoFix};
use crate::learning::prepare::Preprocessor;
use crate::learning::{evaluate_routes, routes_samples, train, ModelConfig, PolicyModel, TrainConfig};
use crate::metrics::EvalReport;
use crate::simulator::{run_episode, save_episode, write_artifacts, ModelPolicy, Policy, RouteFollower, Scenario, SimConfig};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Debug, Parser)]
#[command(name = "seqnav", version, about = "Synthetic data, training, evaluation and simulation for GNSS-guided BEV navigation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate train/val/test route directories.
    Gen(GenArgs),
    /// Project route points into the robot frame and infer commands.
    Transform(TransformArgs),
    /// Build the BEV grid of one stored frame.
    Bev(BevArgs),
    /// Train a policy model on generated routes.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Run one closed-loop episode.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub train: usize,
    #[arg(long, default_value_t = 5)]
    pub val: usize,
    #[arg(long, default_value_t = 5)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Base scene as TOML; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    pub fps: f64,
    #[arg(long)]
    pub length: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// `fixes` record stream; `-` reads stdin.
    #[arg(long)]
    pub input: PathBuf,
    /// Output stream; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub tau1: f64,
    #[arg(long, default_value_t = 2.5)]
    pub tau2: f64,
}

#[derive(Debug, Args)]
pub struct BevArgs {
    #[arg(long)]
    pub route: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Frames before `frame` fused in with the EMA.
    #[arg(long, default_value_t = 0)]
    pub history: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root holding `train/` and `val/`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-epoch history stream.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Directory for `report.txt` and `summary.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Route directory; its scene and seed define the world.
    #[arg(long)]
    pub route: PathBuf,
    /// Model checkpoint; the hand-set route follower drives when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// GNSS noise σ in meters.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// `e,n;e,n;...@be,bn[@sigma]` in scene meters; repeatable.
    #[arg(long)]
    pub bias_zone: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_ticks: Option<u64>,
    #[arg(long, default_value_t = 30)]
    pub snapshot_every: u64,
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Cmd::Gen(a) => gen(a),
        Cmd::Transform(a) => transform(a),
        Cmd::Bev(a) => bev(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Simulate(a) => simulate(a),
    }
}

fn gen(a: GenArgs) -> Result<i32> {
    let mut spec = match &a.spec {
        Some(p) => toml::from_str(&fs::read_to_string(p)?)?,
        None => SceneSpec {
            path: PathShape::Straight { length: 40.0 },
            ..Default::default()
        },
    };
    spec.fps = a.fps;
    if let Some(l) = a.length {
        spec.path = PathShape::Straight { length: l };
    }
    if let Some(s) = a.sigma {
        spec.gnss_sigma = s;
    }
    let counts = SplitCounts {
        train: a.train,
        val: a.val,
        test: a.test,
    };
    let dirs = generate_splits(&a.out, &spec, counts, a.seed)?;
    println!("wrote {} routes under {}", dirs.len(), a.out.display());
    Ok(0)
}

/// Robot fix, previous fix and the next two route points, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixRow {
    pub lat: f64,
    pub lon: f64,
    pub prev_lat: f64,
    pub prev_lon: f64,
    pub p1_lat: f64,
    pub p1_lon: f64,
    pub p2_lat: f64,
    pub p2_lon: f64,
}

impl Record for FixRow {
    const KIND: &'static str = "fixes";

    fn header() -> Vec<String> {
        ["lat", "lon", "prev_lat", "prev_lon", "p1_lat", "p1_lon", "p2_lat", "p2_lon"].map(String::from).to_vec()
    }

    fn to_fields(&self) -> Vec<String> {
        [self.lat, self.lon, self.prev_lat, self.prev_lon, self.p1_lat, self.p1_lon, self.p2_lat, self.p2_lon]
            .map(fmt_f64)
            .to_vec()
    }

    fn from_fields(f: &FieldReader<'_>) -> std::result::Result<Self, RecordError> {
        Ok(Self {
            lat: f.f64("lat")?,
            lon: f.f64("lon")?,
            prev_lat: f.f64("prev_lat")?,
            prev_lon: f.f64("prev_lon")?,
            p1_lat: f.f64("p1_lat")?,
            p1_lon: f.f64("p1_lon")?,
            p2_lat: f.f64("p2_lat")?,
            p2_lon: f.f64("p2_lon")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalRow {
    pub bearing_deg: f64,
    /// The fixes coincided and the previous bearing was kept.
    pub held: bool,
    pub p1_x: f64,
    pub p1_y: f64,
    pub p2_x: f64,
    pub p2_y: f64,
    pub command: crate::geodesy::Command,
    pub conflict: bool,
}

impl Record for LocalRow {
    const KIND: &'static str = "local";

    fn header() -> Vec<String> {
        ["bearing_deg", "held", "p1_x", "p1_y", "p2_x", "p2_y", "command", "conflict"].map(String::from).to_vec()
    }

    fn to_fields(&self) -> Vec<String> {
        let mut v = vec![fmt_f64(self.bearing_deg), (self.held as u8).to_string()];
        v.extend([self.p1_x, self.p1_y, self.p2_x, self.p2_y].map(fmt_f64));
        v.push(self.command.as_str().to_string());
        v.push((self.conflict as u8).to_string());
        v
    }

    fn from_fields(f: &FieldReader<'_>) -> std::result::Result<Self, RecordError> {
        let c = f.str("command")?;
        Ok(Self {
            bearing_deg: f.f64("bearing_deg")?,
            held: f.u64("held")? != 0,
            p1_x: f.f64("p1_x")?,
            p1_y: f.f64("p1_y")?,
            p2_x: f.f64("p2_x")?,
            p2_y: f.f64("p2_y")?,
            command: crate::geodesy::Command::parse(c).ok_or_else(|| f.err("command", "unknown command"))?,
            conflict: f.u64("conflict")? != 0,
        })
    }
}

/// Transforms each row, holding the last bearing across coincident fixes
/// (north before the first valid one).
pub fn transform_rows(rows: &[FixRow], th: CommandThresholds) -> std::result::Result<Vec<LocalRow>, GeoError> {
    let ell = Ellipsoid::WGS84;
    let mut last = Bearing::new(0.0);
    rows.iter()
        .map(|r| {
            let fix = GeoFix::new(r.lat, r.lon)?;
            let prev = GeoFix::new(r.prev_lat, r.prev_lon)?;
            let (beta, held) = match bearing(prev, fix) {
                Ok(b) => (b, false),
                Err(GeoError::CoincidentFixes(_)) => (last, true),
                Err(e) => return Err(e),
            };
            last = beta;
            let p1 = global_to_local(GeoFix::new(r.p1_lat, r.p1_lon)?, fix, beta, &ell);
            let p2 = global_to_local(GeoFix::new(r.p2_lat, r.p2_lon)?, fix, beta, &ell);
            let d = classify_command(p1, p2, th.tau1, th.tau2);
            Ok(LocalRow {
                bearing_deg: beta.radians().to_degrees(),
                held,
                p1_x: p1.x,
                p1_y: p1.y,
                p2_x: p2.x,
                p2_y: p2.y,
                command: d.command,
                conflict: d.conflict,
            })
        })
        .collect()
}

fn transform(a: TransformArgs) -> Result<i32> {
    let rows: Vec<FixRow> = if a.input == Path::new("-") {
        read_records(std::io::stdin().lock())?
    } else {
        load_records(&a.input)?
    };
    let out = transform_rows(&rows, CommandThresholds { tau1: a.tau1, tau2: a.tau2 })?;
    match &a.output {
        Some(p) => save_records(p, &out)?,
        None => write_records(std::io::stdout().lock(), &out)?,
    }
    Ok(0)
}

/// Fused grid at `frame` after EMA over the `history` frames before it.
pub fn route_bev(route: &Route, frame: usize, history: usize) -> Result<BevGrid> {
    if frame >= route.len() {
        return Err(format!("frame {frame} out of range, route has {}", route.len()).into());
    }
    let pre = Preprocessor::new(&ModelConfig::default(), route.spec.camera());
    let mut grid: Option<BevGrid> = None;
    for f in &route.frames[frame.saturating_sub(history)..=frame] {
        grid = Some(pre.oracle_bev(&f.labels, &f.depth, grid.as_ref())?);
    }
    Ok(grid.expect("at least one frame"))
}

fn bev(a: BevArgs) -> Result<i32> {
    let route = load_route(&a.route)?;
    let grid = route_bev(&route, a.frame, a.history)?;
    grid.to_tensorfile()?.save(&a.out)?;
    if let Some(p) = &a.png {
        fs::write(p, encode_png(&render_rgb(&grid)))?;
    }
    println!("{} occupied cells", grid.occupied_cells().count());
    Ok(0)
}

fn split_routes(root: &Path, split: &str) -> Result<Vec<Route>> {
    let dirs = list_routes(root.join(split))?;
    if dirs.is_empty() {
        return Err(format!("no routes under {}", root.join(split).display()).into());
    }
    dirs.iter().map(|d| Ok(load_route(d)?)).collect()
}

fn train_cmd(a: TrainArgs) -> Result<i32> {
    let cfg = TrainConfig {
        k: a.k,
        max_epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        ..Default::default()
    };
    cfg.validate()?;
    let model = PolicyModel::new(ModelConfig::default(), a.seed);
    let train_set = routes_samples(&split_routes(&a.data, Split::Train.as_str())?, a.k, &model.config)?;
    let val_set = routes_samples(&split_routes(&a.data, Split::Val.as_str())?, a.k, &model.config)?;
    log::info!("{} train / {} val samples, K={}", train_set.len(), val_set.len(), a.k);
    let outcome = train(model, &train_set, &val_set, &cfg)?;
    outcome.best.save(&a.out)?;
    if let Some(p) = &a.history {
        save_records(p, &outcome.history)?;
    }
    println!(
        "best epoch {} val {:.5} after {} epochs{}",
        outcome.best_epoch,
        outcome.best_val,
        outcome.last_epoch + 1,
        if outcome.early_stopped { " (early stop)" } else { "" }
    );
    Ok(0)
}

pub fn report_text(r: &EvalReport) -> String {
    let mut s = format!("{:<16} {:>7} {:>8} {:>10} {:>8} {:>9}\n", "route", "samples", "iou", "depth_mae", "wp_mae", "ctrl_mae");
    let mut row = |name: &str, n: usize, m: &crate::metrics::MetricSet| {
        let _ = writeln!(s, "{name:<16} {n:>7} {:>8.4} {:>10.4} {:>8.4} {:>9.4}", m.iou, m.depth_mae, m.wp_mae, m.ctrl_mae);
    };
    for pr in &r.per_route {
        row(&pr.route, pr.samples, &pr.metrics);
    }
    row("overall", r.per_route.iter().map(|p| p.samples).sum(), &r.overall);
    s
}

fn eval(a: EvalArgs) -> Result<i32> {
    let model = PolicyModel::load(&a.checkpoint)?;
    let routes = split_routes(&a.data, &a.split)?;
    let report = evaluate_routes(&model, &routes, a.k)?;
    let text = report_text(&report);
    print!("{text}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), &text)?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(0)
}

fn simulate(a: SimulateArgs) -> Result<i32> {
    let meta = load_meta(&a.route)?;
    let scenario = Scenario::from_spec(&meta.spec, meta.seed)?;
    let mut cfg = SimConfig {
        gnss_sigma: a.noise,
        gnss_rate: meta.spec.gnss_rate,
        seed: a.seed,
        snapshot_every: a.snapshot_every,
        bias_zones: a.bias_zone.iter().map(|z| BiasZone::parse(z)).collect::<std::result::Result<_, _>>()?,
        ..Default::default()
    };
    if let Some(t) = a.max_ticks {
        cfg.max_ticks = t;
    }
    let mut policy: Box<dyn Policy> = match &a.checkpoint {
        Some(p) => Box::new(ModelPolicy::new(PolicyModel::load(p)?, &meta.spec)),
        None => Box::new(RouteFollower::default()),
    };
    let log = run_episode(&scenario, policy.as_mut(), &cfg)?;
    save_episode(&a.out, &log)?;
    let images = write_artifacts(a.out.join("images"), &log)?;
    let s = log.summary;
    println!(
        "{}: {} ticks, {:.1} m travelled, max cross-track {:.3} m, {images} images",
        s.outcome.as_str(),
        s.ticks,
        s.distance,
        s.max_cross_track
    );
    Ok(s.outcome.exit_code())
}
