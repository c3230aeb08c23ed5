//! Observation sets, routes, K-frame windows, storage and the synthetic
//! generator.

pub mod records;
mod store;
pub mod synth;
pub mod tensorfile;
pub mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bevmap::DepthImage;
use crate::controller::ControlAction;
use crate::geodesy::GeoFix;
use crate::planner::WaypointPlan;
use crate::simulator::RobotState;

pub use store::{generate_splits, list_routes, load_meta, load_route, save_route, FrameRecord, RouteMeta, SplitCounts};
pub use synth::{synth_route, BiasZone, PathShape, SceneSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("route has {len} frames, window needs {k}")]
    RouteTooShort { len: usize, k: usize },
    #[error("window length must be 1, 2 or 3, got {0}")]
    InvalidWindow(usize),
    #[error("invalid route: {0}")]
    InvalidRoute(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    TensorFile(#[from] tensorfile::TensorFileError),
    #[error(transparent)]
    Records(#[from] records::RecordError),
    #[error("meta: {0}")]
    Meta(String),
    #[error(transparent)]
    Geo(#[from] crate::geodesy::GeoError),
    #[error(transparent)]
    Bev(#[from] crate::bevmap::BevError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One synchronized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub timestamp: f64,
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB.
    pub rgb: Vec<u8>,
    pub depth: DepthImage,
    /// Class id per pixel; 255 marks pixels with no surface.
    pub labels: Vec<u8>,
    /// Latest fix and the one before it.
    pub gnss: GeoFix,
    pub gnss_prev: GeoFix,
    /// Upcoming global route points, nearest first.
    pub route_pts: Vec<GeoFix>,
    /// Expert command.
    pub control: ControlAction,
    pub wp_truth: WaypointPlan,
    /// GNSS-derived speed, m/s.
    pub speed: f64,
    /// True pose in the scene frame; evaluation only.
    pub pose: RobotState,
}

impl ObservationSet {
    /// Binary class masks, class-interleaved.
    pub fn seg_masks(&self, classes: usize) -> Vec<bool> {
        crate::metrics::masks_from_labels(&self.labels, classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub name: String,
    pub split: Split,
    pub spec: SceneSpec,
    pub seed: u64,
    pub frames: Vec<ObservationSet>,
}

impl Route {
    pub fn new(name: &str, split: Split, spec: SceneSpec, seed: u64, frames: Vec<ObservationSet>) -> Result<Self, DatasetError> {
        if frames.is_empty() {
            return Err(DatasetError::InvalidRoute("no frames".into()));
        }
        if frames.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(DatasetError::InvalidRoute("timestamps must increase".into()));
        }
        if frames.iter().any(|f| f.route_pts.len() < 2) {
            return Err(DatasetError::InvalidRoute("every frame needs two route points".into()));
        }
        let (w, h) = (frames[0].width, frames[0].height);
        for f in &frames {
            let n = f.width * f.height;
            if f.width != w || f.height != h || f.rgb.len() != 3 * n || f.labels.len() != n || f.depth.width() != w || f.depth.height() != h {
                return Err(DatasetError::InvalidRoute("inconsistent frame shapes".into()));
            }
        }
        Ok(Self {
            name: name.to_string(),
            split,
            spec,
            seed,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Sliding windows of `k` consecutive frames, stride 1; a window's labels
/// are its newest frame's.
pub fn window(route: &Route, k: usize) -> Result<Vec<&[ObservationSet]>, DatasetError> {
    if !(1..=3).contains(&k) {
        return Err(DatasetError::InvalidWindow(k));
    }
    if route.frames.len() < k {
        return Err(DatasetError::RouteTooShort { len: route.frames.len(), k });
    }
    Ok(route.frames.windows(k).collect())
}
