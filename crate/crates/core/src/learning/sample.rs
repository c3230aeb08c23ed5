use serde::{Deserialize, Serialize};

use crate::geodesy::LocalPoint;

/// Per-frame inputs after perception preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameInput {
    /// Downsampled RGB for the trainable encoder.
    pub rgb: Vec<f64>,
    /// Frozen BEV summary.
    pub f_bev: Vec<f64>,
    /// Next two route points in the GNSS-estimated robot frame.
    pub route: [LocalPoint; 2],
    pub speed: f64,
}

/// A window of `K` frames with the newest frame's labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub frames: Vec<FrameInput>,
    /// Binary masks at encoder resolution, class-interleaved.
    pub seg_truth: Vec<f64>,
    /// Depth over max range at encoder resolution.
    pub depth_truth: Vec<f64>,
    /// `[x1, y1, ..., x5, y5]`.
    pub wp_truth: Vec<f64>,
    pub control: [f64; 3],
}
