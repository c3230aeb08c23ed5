use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::{fmt_f64, load_records, save_records, FieldReader, Record, RecordError};
use super::synth::{synth_route, varied_spec, SceneSpec};
use super::tensorfile::{Tensor, TensorFile};
use super::{DatasetError, ObservationSet, Route, Split};
use crate::bevmap::DepthImage;
use crate::controller::ControlAction;
use crate::geodesy::{GeoFix, LocalPoint};
use crate::planner::{WaypointPlan, NUM_WAYPOINTS};
use crate::simulator::RobotState;

pub const META_FILE: &str = "meta";
pub const FRAMES_FILE: &str = "frames.sqnv";
pub const RECORDS_FILE: &str = "records.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteMeta {
    pub name: String,
    pub split: Split,
    pub seed: u64,
    pub frames: usize,
    pub spec: SceneSpec,
}

/// Per-frame scalars written to `records.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
    pub speed: f64,
    pub control: ControlAction,
    pub east: f64,
    pub north: f64,
    pub heading: f64,
}

impl Record for FrameRecord {
    const KIND: &'static str = "frames";

    fn header() -> Vec<String> {
        ["index", "timestamp", "lat", "lon", "speed", "ctrl_x", "ctrl_y", "ctrl_theta", "east", "north", "heading"]
            .map(String::from)
            .to_vec()
    }

    fn to_fields(&self) -> Vec<String> {
        let mut v = vec![self.index.to_string()];
        v.extend(
            [
                self.timestamp,
                self.lat,
                self.lon,
                self.speed,
                self.control.x,
                self.control.y,
                self.control.theta,
                self.east,
                self.north,
                self.heading,
            ]
            .map(fmt_f64),
        );
        v
    }

    fn from_fields(f: &FieldReader<'_>) -> Result<Self, RecordError> {
        Ok(Self {
            index: f.u64("index")? as usize,
            timestamp: f.f64("timestamp")?,
            lat: f.f64("lat")?,
            lon: f.f64("lon")?,
            speed: f.f64("speed")?,
            control: ControlAction {
                x: f.f64("ctrl_x")?,
                y: f.f64("ctrl_y")?,
                theta: f.f64("ctrl_theta")?,
            },
            east: f.f64("east")?,
            north: f.f64("north")?,
            heading: f.f64("heading")?,
        })
    }
}

fn frames_to_tensors(frames: &[ObservationSet]) -> Result<TensorFile, DatasetError> {
    let n = frames.len();
    let (w, h) = (frames[0].width, frames[0].height);
    let route_len = frames[0].route_pts.len();
    if frames.iter().any(|f| f.route_pts.len() != route_len) {
        return Err(DatasetError::InvalidRoute("route point count varies between frames".into()));
    }
    let flat_f64 = |g: &dyn Fn(&ObservationSet) -> Vec<f64>| frames.iter().flat_map(g).collect::<Vec<f64>>();
    let mut t = TensorFile::new();
    t.insert("rgb", Tensor::u8(&[n, h, w, 3], frames.iter().flat_map(|f| f.rgb.iter().copied()).collect()))?;
    t.insert("depth", Tensor::f32(&[n, h, w], frames.iter().flat_map(|f| f.depth.values().iter().copied()).collect()))?;
    t.insert(
        "depth_valid",
        Tensor::u8(&[n, h, w], frames.iter().flat_map(|f| f.depth.mask().iter().map(|&m| m as u8)).collect()),
    )?;
    t.insert("labels", Tensor::u8(&[n, h, w], frames.iter().flat_map(|f| f.labels.iter().copied()).collect()))?;
    t.insert("timestamp", Tensor::f64(&[n], flat_f64(&|f| vec![f.timestamp])))?;
    t.insert("gnss", Tensor::f64(&[n, 2], flat_f64(&|f| vec![f.gnss.lat(), f.gnss.lon()])))?;
    t.insert("gnss_prev", Tensor::f64(&[n, 2], flat_f64(&|f| vec![f.gnss_prev.lat(), f.gnss_prev.lon()])))?;
    t.insert(
        "route_pts",
        Tensor::f64(&[n, route_len, 2], flat_f64(&|f| f.route_pts.iter().flat_map(|p| [p.lat(), p.lon()]).collect())),
    )?;
    t.insert("control", Tensor::f64(&[n, 3], flat_f64(&|f| f.control.to_array().to_vec())))?;
    t.insert(
        "wp_deltas",
        Tensor::f64(&[n, NUM_WAYPOINTS, 2], flat_f64(&|f| f.wp_truth.deltas().iter().flat_map(|d| [d.x, d.y]).collect())),
    )?;
    t.insert("speed", Tensor::f64(&[n], flat_f64(&|f| vec![f.speed])))?;
    t.insert("pose", Tensor::f64(&[n, 4], flat_f64(&|f| vec![f.pose.east, f.pose.north, f.pose.heading, f.pose.speed])))?;
    Ok(t)
}

fn tensors_to_frames(t: &TensorFile) -> Result<Vec<ObservationSet>, DatasetError> {
    let dims = &t.get("rgb")?.dims;
    let [n, h, w, 3] = dims[..] else {
        return Err(DatasetError::InvalidRoute(format!("rgb dims {dims:?}")));
    };
    let (n, h, w) = (n as usize, h as usize, w as usize);
    let route_dims = &t.get("route_pts")?.dims;
    let route_len = *route_dims.get(1).ok_or_else(|| DatasetError::InvalidRoute("route_pts rank".into()))? as usize;
    let need = |name: &str, len: usize, per: usize| -> Result<(), DatasetError> {
        if len != n * per {
            return Err(DatasetError::InvalidRoute(format!("{name}: {len} values for {n} frames")));
        }
        Ok(())
    };
    let rgb = t.u8s("rgb")?;
    let depth = t.f32s("depth")?;
    let valid = t.u8s("depth_valid")?;
    let labels = t.u8s("labels")?;
    let ts = t.f64s("timestamp")?;
    let gnss = t.f64s("gnss")?;
    let gnss_prev = t.f64s("gnss_prev")?;
    let route = t.f64s("route_pts")?;
    let control = t.f64s("control")?;
    let wp = t.f64s("wp_deltas")?;
    let speed = t.f64s("speed")?;
    let pose = t.f64s("pose")?;
    need("depth", depth.len(), h * w)?;
    need("depth_valid", valid.len(), h * w)?;
    need("labels", labels.len(), h * w)?;
    need("timestamp", ts.len(), 1)?;
    need("gnss", gnss.len(), 2)?;
    need("gnss_prev", gnss_prev.len(), 2)?;
    need("route_pts", route.len(), 2 * route_len)?;
    need("control", control.len(), 3)?;
    need("wp_deltas", wp.len(), 2 * NUM_WAYPOINTS)?;
    need("speed", speed.len(), 1)?;
    need("pose", pose.len(), 4)?;
    let px = h * w;
    (0..n)
        .map(|i| {
            let wp_deltas: Vec<LocalPoint> = wp[i * 2 * NUM_WAYPOINTS..(i + 1) * 2 * NUM_WAYPOINTS]
                .chunks_exact(2)
                .map(|c| LocalPoint::new(c[0], c[1]))
                .collect();
            Ok(ObservationSet {
                timestamp: ts[i],
                width: w,
                height: h,
                rgb: rgb[i * 3 * px..(i + 1) * 3 * px].to_vec(),
                depth: DepthImage::with_mask(
                    w,
                    h,
                    depth[i * px..(i + 1) * px].to_vec(),
                    valid[i * px..(i + 1) * px].iter().map(|&v| v != 0).collect(),
                )?,
                labels: labels[i * px..(i + 1) * px].to_vec(),
                gnss: GeoFix::new(gnss[2 * i], gnss[2 * i + 1])?,
                gnss_prev: GeoFix::new(gnss_prev[2 * i], gnss_prev[2 * i + 1])?,
                route_pts: (0..route_len)
                    .map(|k| {
                        let o = (i * route_len + k) * 2;
                        GeoFix::new(route[o], route[o + 1])
                    })
                    .collect::<Result<_, _>>()?,
                control: ControlAction {
                    x: control[3 * i],
                    y: control[3 * i + 1],
                    theta: control[3 * i + 2],
                },
                wp_truth: WaypointPlan::from_deltas(wp_deltas),
                speed: speed[i],
                pose: RobotState {
                    east: pose[4 * i],
                    north: pose[4 * i + 1],
                    heading: pose[4 * i + 2],
                    speed: pose[4 * i + 3],
                },
            })
        })
        .collect()
}

pub fn save_route(dir: impl AsRef<Path>, route: &Route) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let meta = RouteMeta {
        name: route.name.clone(),
        split: route.split,
        seed: route.seed,
        frames: route.frames.len(),
        spec: route.spec.clone(),
    };
    let text = toml::to_string(&meta).map_err(|e| DatasetError::Meta(e.to_string()))?;
    std::fs::write(dir.join(META_FILE), text)?;
    frames_to_tensors(&route.frames)?.save(dir.join(FRAMES_FILE))?;
    let records: Vec<FrameRecord> = route
        .frames
        .iter()
        .enumerate()
        .map(|(index, f)| FrameRecord {
            index,
            timestamp: f.timestamp,
            lat: f.gnss.lat(),
            lon: f.gnss.lon(),
            speed: f.speed,
            control: f.control,
            east: f.pose.east,
            north: f.pose.north,
            heading: f.pose.heading,
        })
        .collect();
    save_records(dir.join(RECORDS_FILE), &records)?;
    Ok(())
}

pub fn load_meta(dir: impl AsRef<Path>) -> Result<RouteMeta, DatasetError> {
    let text = std::fs::read_to_string(dir.as_ref().join(META_FILE))?;
    toml::from_str(&text).map_err(|e| DatasetError::Meta(e.to_string()))
}

pub fn load_route(dir: impl AsRef<Path>) -> Result<Route, DatasetError> {
    let dir = dir.as_ref();
    let meta = load_meta(dir)?;
    let frames = tensors_to_frames(&TensorFile::load(dir.join(FRAMES_FILE))?)?;
    if frames.len() != meta.frames {
        return Err(DatasetError::InvalidRoute(format!(
            "meta lists {} frames, tensor file holds {}",
            meta.frames,
            frames.len()
        )));
    }
    let records: Vec<FrameRecord> = load_records(dir.join(RECORDS_FILE))?;
    if records.len() != frames.len() {
        return Err(DatasetError::InvalidRoute("records and frames differ in length".into()));
    }
    Route::new(&meta.name, meta.split, meta.spec, meta.seed, frames)
}

/// Route directories directly under `root`, sorted by name.
pub fn list_routes(root: impl AsRef<Path>) -> Result<Vec<PathBuf>, DatasetError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self { train: 16, val: 5, test: 5 }
    }
}

/// Writes `root/<split>/<split>_NN` route directories with varied scenes.
pub fn generate_splits(root: impl AsRef<Path>, base: &SceneSpec, counts: SplitCounts, seed: u64) -> Result<Vec<PathBuf>, DatasetError> {
    base.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut written = Vec::new();
    for (split, count) in [(Split::Train, counts.train), (Split::Val, counts.val), (Split::Test, counts.test)] {
        for i in 0..count {
            let spec = varied_spec(base, &mut rng);
            let route_seed = seed.wrapping_mul(1000).wrapping_add(written.len() as u64);
            let name = format!("{}_{i:02}", split.as_str());
            let route = synth_route(&spec, route_seed, &name, split)?;
            let dir = root.as_ref().join(split.as_str()).join(&name);
            save_route(&dir, &route)?;
            log::info!("wrote {} ({} frames)", dir.display(), route.len());
            written.push(dir);
        }
    }
    Ok(written)
}
