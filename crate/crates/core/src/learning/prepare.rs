//! Turns stored routes into training windows and scores models on them.

use rayon::prelude::*;

use super::{LearningError, PolicyModel, TaskWeights, TrainSample};
use super::sample::FrameInput;
use crate::bevmap::{build_bev, BevConfig, BevGrid, DepthImage, SegScores};
use crate::dataset::world::CameraModel;
use crate::dataset::{window, DatasetError, ObservationSet, Route};
use crate::dataset::synth::fix_update;
use crate::geodesy::{global_to_local, Bearing, Ellipsoid, LocalPoint};
use crate::metrics::{binarize, ctrl_mae, depth_mae, iou, wp_mae, EvalReport, IouOptions, MetricSet, RouteAccumulator};
use crate::planner::features::{encoder_input, normalized_depth, BevProjector};
use crate::planner::{WaypointPlan, NUM_WAYPOINTS};

/// Oracle perception for one camera: ground-truth labels and depth are
/// splatted into a BEV grid and summarised by the frozen projector.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub camera: CameraModel,
    pub bev: BevConfig,
    pub projector: BevProjector,
    pub enc_w: usize,
    pub enc_h: usize,
    pub seg_classes: usize,
}

impl Preprocessor {
    pub fn new(model: &super::ModelConfig, camera: CameraModel) -> Self {
        Self {
            camera,
            bev: BevConfig::default(),
            projector: model.bev_projector(),
            enc_w: model.enc_w,
            enc_h: model.enc_h,
            seg_classes: model.seg_classes,
        }
    }

    /// BEV grid from labels and depth. Pixels without a surface carry no
    /// depth and are dropped by the back-projection.
    pub fn oracle_bev(&self, labels: &[u8], depth: &DepthImage, previous: Option<&BevGrid>) -> Result<BevGrid, DatasetError> {
        let classes = self.bev.grid.classes;
        let clean: Vec<u8> = labels.iter().map(|&l| if (l as usize) < classes { l } else { 0 }).collect();
        let seg = SegScores::from_labels(depth.width(), depth.height(), classes, &clean)?;
        Ok(build_bev(&seg, depth, &self.camera.intrinsics, &self.camera.extrinsics, previous, &self.bev)?)
    }

    pub fn bev_feature(&self, labels: &[u8], depth: &DepthImage) -> Result<Vec<f64>, DatasetError> {
        Ok(self.projector.encode(&self.oracle_bev(labels, depth, None)?))
    }

    pub fn frame_input(&self, obs: &ObservationSet, beta: Bearing) -> Result<FrameInput, DatasetError> {
        Ok(FrameInput {
            rgb: encoder_input(&obs.rgb, obs.width, obs.height, self.enc_w, self.enc_h),
            f_bev: self.bev_feature(&obs.labels, &obs.depth)?,
            route: local_route(obs, beta),
            speed: obs.speed,
        })
    }

    /// Class masks sampled at each encoder cell's centre pixel.
    pub fn seg_truth(&self, obs: &ObservationSet) -> Vec<f64> {
        let mut out = vec![0.0; self.enc_w * self.enc_h * self.seg_classes];
        for cv in 0..self.enc_h {
            let v = (2 * cv + 1) * obs.height / (2 * self.enc_h);
            for cu in 0..self.enc_w {
                let u = (2 * cu + 1) * obs.width / (2 * self.enc_w);
                let l = obs.labels[v * obs.width + u] as usize;
                if l < self.seg_classes {
                    out[(cv * self.enc_w + cu) * self.seg_classes + l] = 1.0;
                }
            }
        }
        out
    }

    pub fn depth_truth(&self, obs: &ObservationSet) -> Vec<f64> {
        normalized_depth(&obs.depth, self.camera.max_depth, self.enc_w, self.enc_h)
    }
}

/// Route points in the frame implied by the GNSS bearing.
pub fn local_route(obs: &ObservationSet, beta: Bearing) -> [LocalPoint; 2] {
    let ell = Ellipsoid::WGS84;
    [
        global_to_local(obs.route_pts[0], obs.gnss, beta, &ell),
        global_to_local(obs.route_pts[1], obs.gnss, beta, &ell),
    ]
}

/// Bearing per frame from its two fixes, with the same holds the robot
/// applies online.
pub fn frame_bearings(route: &Route) -> Vec<Bearing> {
    let fix_dt = 1.0 / route.spec.gnss_rate;
    let mut held = (Bearing::new(route.frames[0].pose.heading), 0.0);
    route
        .frames
        .iter()
        .map(|f| {
            held = fix_update(f.gnss_prev, f.gnss, fix_dt, held);
            held.0
        })
        .collect()
}

/// One sample per `k`-frame window.
pub fn route_samples(route: &Route, k: usize, model: &super::ModelConfig) -> Result<Vec<TrainSample>, LearningError> {
    let windows = window(route, k)?;
    let pre = Preprocessor::new(model, route.spec.camera());
    let bearings = frame_bearings(route);
    let inputs: Vec<FrameInput> = route
        .frames
        .par_iter()
        .zip(bearings.par_iter())
        .map(|(f, b)| pre.frame_input(f, *b))
        .collect::<Result<_, DatasetError>>()?;
    Ok(windows
        .iter()
        .enumerate()
        .map(|(start, w)| {
            let newest = w.last().expect("non-empty window");
            TrainSample {
                frames: inputs[start..start + k].to_vec(),
                seg_truth: pre.seg_truth(newest),
                depth_truth: pre.depth_truth(newest),
                wp_truth: newest.wp_truth.flatten(),
                control: newest.control.to_array(),
            }
        })
        .collect())
}

pub fn routes_samples(routes: &[Route], k: usize, model: &super::ModelConfig) -> Result<Vec<TrainSample>, LearningError> {
    let mut out = Vec::new();
    for r in routes {
        out.extend(route_samples(r, k, model)?);
    }
    Ok(out)
}

/// Metrics for one sample at encoder resolution; depth in meters over cells
/// that see a surface.
pub fn sample_metrics(model: &PolicyModel, s: &TrainSample, max_depth: f64) -> Result<MetricSet, LearningError> {
    let t = model.forward(s)?;
    let c = &model.config;
    let truth_masks: Vec<bool> = s.seg_truth.iter().map(|&v| v > 0.5).collect();
    let seg_iou = iou(&binarize(&t.seg_prob, 0.5), &truth_masks, c.seg_classes, IouOptions::default())
        .map_err(|e| LearningError::ShapeMismatch(e.to_string()))?;
    let to_image = |v: &[f64], mask: Vec<bool>| {
        DepthImage::with_mask(c.enc_w, c.enc_h, v.iter().map(|d| (d * max_depth) as f32).collect(), mask)
            .map_err(|e| LearningError::ShapeMismatch(e.to_string()))
    };
    let valid: Vec<bool> = s.depth_truth.iter().map(|&d| d < 1.0).collect();
    let d_mae = if valid.iter().any(|&v| v) {
        depth_mae(&to_image(&t.depth_pred, vec![true; valid.len()])?, &to_image(&s.depth_truth, valid)?)
            .map_err(|e| LearningError::ShapeMismatch(e.to_string()))?
    } else {
        0.0
    };
    let truth_plan = WaypointPlan::from_points(
        &(0..NUM_WAYPOINTS)
            .map(|l| LocalPoint::new(s.wp_truth[2 * l], s.wp_truth[2 * l + 1]))
            .collect::<Vec<_>>(),
    );
    let w_mae = wp_mae(&t.plan, &truth_plan).map_err(|e| LearningError::ShapeMismatch(e.to_string()))?;
    let truth_ctrl = crate::controller::ControlAction::from_array(s.control);
    Ok(MetricSet {
        iou: seg_iou,
        depth_mae: d_mae,
        wp_mae: w_mae,
        ctrl_mae: ctrl_mae(&t.u_final, &truth_ctrl),
    })
}

/// Per-route and overall metrics of `model` on `k`-frame windows.
pub fn evaluate_routes(model: &PolicyModel, routes: &[Route], k: usize) -> Result<EvalReport, LearningError> {
    let mut per_route = Vec::with_capacity(routes.len());
    for r in routes {
        let samples = route_samples(r, k, &model.config)?;
        let max_depth = r.spec.max_depth;
        let sets: Vec<MetricSet> = samples
            .par_iter()
            .map(|s| sample_metrics(model, s, max_depth))
            .collect::<Result<_, _>>()?;
        let mut acc = RouteAccumulator::default();
        for m in sets {
            acc.push(m);
        }
        per_route.push(acc.finish(&r.name));
    }
    Ok(EvalReport::from_routes(per_route))
}

/// Mean validation loss with unit task weights.
pub fn mean_loss(model: &PolicyModel, samples: &[TrainSample]) -> Result<f64, LearningError> {
    if samples.is_empty() {
        return Err(LearningError::EmptySplit);
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| model.evaluate(s, TaskWeights::default()).map(|r| r.l_total))
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
