//! Offline evaluation metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bevmap::DepthImage;
use crate::controller::ControlAction;
use crate::planner::WaypointPlan;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no valid depth pixels")]
    NoValidPixels,
    #[error("waypoint plans differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("nothing to aggregate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IouOptions {
    /// Count classes absent from both masks as IoU 1 instead of skipping them.
    pub empty_as_one: bool,
}

/// One-hot masks (`H·W × classes`, class-interleaved) from a label map.
pub fn masks_from_labels(labels: &[u8], classes: usize) -> Vec<bool> {
    labels
        .iter()
        .flat_map(|&l| (0..classes).map(move |c| l as usize == c))
        .collect()
}

pub fn binarize(probs: &[f64], threshold: f64) -> Vec<bool> {
    probs.iter().map(|&p| p >= threshold).collect()
}

/// Mean per-class intersection over union of class-interleaved masks.
///
/// Returns 1 when every class is absent from both masks.
pub fn iou(pred: &[bool], truth: &[bool], classes: usize, opts: IouOptions) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() || classes == 0 || !pred.len().is_multiple_of(classes) {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} vs {} mask values for {classes} classes",
            pred.len(),
            truth.len()
        )));
    }
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        let c = i % classes;
        inter[c] += (p && t) as usize;
        union[c] += (p || t) as usize;
    }
    let scores: Vec<f64> = (0..classes)
        .filter_map(|c| match union[c] {
            0 if opts.empty_as_one => Some(1.0),
            0 => None,
            u => Some(inter[c] as f64 / u as f64),
        })
        .collect();
    if scores.is_empty() {
        return Ok(1.0);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean absolute error over pixels valid in `truth`.
pub fn depth_mae(pred: &DepthImage, truth: &DepthImage) -> Result<f64, MetricsError> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let (sum, n) = pred
        .values()
        .iter()
        .zip(truth.values())
        .zip(truth.mask())
        .filter(|(_, &ok)| ok)
        .fold((0.0, 0usize), |(s, n), ((&p, &t), _)| (s + (p as f64 - t as f64).abs(), n + 1));
    if n == 0 {
        return Err(MetricsError::NoValidPixels);
    }
    Ok(sum / n as f64)
}

/// Mean per-waypoint L1 distance.
pub fn wp_mae(pred: &WaypointPlan, truth: &WaypointPlan) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    let sum: f64 = pred
        .points()
        .iter()
        .zip(truth.points())
        .map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn ctrl_mae(pred: &ControlAction, truth: &ControlAction) -> f64 {
    ((pred.x - truth.x).abs() + (pred.y - truth.y).abs() + (pred.theta - truth.theta).abs()) / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub iou: f64,
    pub depth_mae: f64,
    pub wp_mae: f64,
    pub ctrl_mae: f64,
}

impl MetricSet {
    fn mean(sets: &[MetricSet]) -> MetricSet {
        let n = sets.len().max(1) as f64;
        let s = |f: fn(&MetricSet) -> f64| sets.iter().map(f).sum::<f64>() / n;
        MetricSet {
            iou: s(|m| m.iou),
            depth_mae: s(|m| m.depth_mae),
            wp_mae: s(|m| m.wp_mae),
            ctrl_mae: s(|m| m.ctrl_mae),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteMetrics {
    pub route: String,
    pub samples: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sample-weighted means over all routes.
    pub overall: MetricSet,
    pub per_route: Vec<RouteMetrics>,
}

impl EvalReport {
    pub fn from_routes(per_route: Vec<RouteMetrics>) -> Self {
        let total: usize = per_route.iter().map(|r| r.samples).sum();
        let w = |f: fn(&MetricSet) -> f64| {
            per_route.iter().map(|r| f(&r.metrics) * r.samples as f64).sum::<f64>() / total.max(1) as f64
        };
        let overall = MetricSet {
            iou: w(|m| m.iou),
            depth_mae: w(|m| m.depth_mae),
            wp_mae: w(|m| m.wp_mae),
            ctrl_mae: w(|m| m.ctrl_mae),
        };
        Self { overall, per_route }
    }
}

/// Accumulates per-sample metrics for one route.
#[derive(Debug, Clone, Default)]
pub struct RouteAccumulator {
    sets: Vec<MetricSet>,
}

impl RouteAccumulator {
    pub fn push(&mut self, m: MetricSet) {
        self.sets.push(m);
    }

    pub fn finish(self, route: impl Into<String>) -> RouteMetrics {
        RouteMetrics {
            route: route.into(),
            samples: self.sets.len(),
            metrics: MetricSet::mean(&self.sets),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Result<MeanStd, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(MeanStd { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub iou: MeanStd,
    pub depth_mae: MeanStd,
    pub wp_mae: MeanStd,
    pub ctrl_mae: MeanStd,
}

pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport, MetricsError> {
    let col = |f: fn(&MetricSet) -> f64| mean_std(&reports.iter().map(|r| f(&r.overall)).collect::<Vec<_>>());
    Ok(AggregateReport {
        runs: reports.len(),
        iou: col(|m| m.iou)?,
        depth_mae: col(|m| m.depth_mae)?,
        wp_mae: col(|m| m.wp_mae)?,
        ctrl_mae: col(|m| m.ctrl_mae)?,
    })
}
