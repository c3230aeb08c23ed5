//! Recurrent waypoint planner: fuses per-frame features with the local route,
//! runs a GRU, rolls out future waypoints and derives heading/speed references.

pub mod features;
mod gru;

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{wrap_angle, LocalPoint};
use crate::linalg::Dense;

pub use gru::{gru_step, gru_step_backward, gru_step_traced, GruParams, GruTrace};

/// Number of predicted waypoints.
pub const NUM_WAYPOINTS: usize = 5;

/// Extra inputs appended after the two feature blocks: two route points and speed.
pub const ROUTE_INPUTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("aim point at the origin; heading reference undefined")]
    DegenerateAim,
}

/// Recurrent memory of the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerState {
    pub h: Vec<f64>,
}

impl PlannerState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden] }
    }
}

/// Concatenates `[f_rgb, f_bev, p1.x, p1.y, p2.x, p2.y, speed]`.
pub fn fuse_inputs(f_rgb: &[f64], f_bev: &[f64], route: [LocalPoint; 2], speed: f64) -> Vec<f64> {
    let mut z = Vec::with_capacity(f_rgb.len() + f_bev.len() + ROUTE_INPUTS);
    z.extend_from_slice(f_rgb);
    z.extend_from_slice(f_bev);
    z.extend_from_slice(&[route[0].x, route[0].y, route[1].x, route[1].y, speed]);
    z
}

/// Five local waypoints stored as per-step displacements; positions are
/// always the running sum of the displacements from the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPlan {
    deltas: Vec<LocalPoint>,
    points: Vec<LocalPoint>,
}

impl WaypointPlan {
    pub fn from_deltas(deltas: Vec<LocalPoint>) -> Self {
        let mut acc = LocalPoint::ORIGIN;
        let points = deltas
            .iter()
            .map(|d| {
                acc = LocalPoint::new(acc.x + d.x, acc.y + d.y);
                acc
            })
            .collect();
        Self { deltas, points }
    }

    /// Differences the given positions and re-accumulates them, so the
    /// stored positions satisfy the running-sum identity exactly.
    pub fn from_points(points: &[LocalPoint]) -> Self {
        let mut prev = LocalPoint::ORIGIN;
        let deltas = points
            .iter()
            .map(|p| {
                let d = LocalPoint::new(p.x - prev.x, p.y - prev.y);
                prev = *p;
                d
            })
            .collect();
        Self::from_deltas(deltas)
    }

    pub fn deltas(&self) -> &[LocalPoint] {
        &self.deltas
    }

    pub fn points(&self) -> &[LocalPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `[x1, y1, x2, y2, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }
}

/// Per-step affine maps from the hidden state to a displacement; head `l`
/// owns rows `2l` and `2l + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointHeads {
    pub weights: Dense,
    pub bias: Vec<f64>,
}

impl WaypointHeads {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            weights: Dense::zeros(2 * NUM_WAYPOINTS, hidden),
            bias: vec![0.0; 2 * NUM_WAYPOINTS],
        }
    }

    pub fn random<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        Self {
            weights: Dense::random(2 * NUM_WAYPOINTS, hidden, 1.0 / (hidden as f64).sqrt(), rng),
            bias: vec![0.0; 2 * NUM_WAYPOINTS],
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn slices(&self) -> Vec<(&'static str, &[f64])> {
        vec![("weights", self.weights.data()), ("bias", &self.bias)]
    }

    pub fn slices_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![("weights", self.weights.data_mut()), ("bias", &mut self.bias)]
    }
}

pub fn rollout_waypoints(h: &PlannerState, heads: &WaypointHeads) -> Result<WaypointPlan, PlannerError> {
    if heads.weights.rows() != 2 * NUM_WAYPOINTS || heads.bias.len() != 2 * NUM_WAYPOINTS {
        return Err(PlannerError::DimensionMismatch(format!(
            "expected {} waypoint heads",
            NUM_WAYPOINTS
        )));
    }
    if heads.weights.cols() != h.h.len() {
        return Err(PlannerError::DimensionMismatch(format!(
            "heads take {} hidden units, state has {}",
            heads.weights.cols(),
            h.h.len()
        )));
    }
    let raw = heads.weights.matvec(&h.h);
    let deltas = (0..NUM_WAYPOINTS)
        .map(|l| LocalPoint::new(raw[2 * l] + heads.bias[2 * l], raw[2 * l + 1] + heads.bias[2 * l + 1]))
        .collect();
    Ok(WaypointPlan::from_deltas(deltas))
}

/// Gradient of the rollout. `d_points` is laid out like
/// [`WaypointPlan::flatten`]. Returns `d_h`.
pub fn rollout_backward(h: &[f64], heads: &WaypointHeads, d_points: &[f64], grads: &mut WaypointHeads) -> Vec<f64> {
    // positions are prefix sums, so each displacement sees the suffix sum
    let mut d_deltas = vec![0.0; 2 * NUM_WAYPOINTS];
    let mut acc = [0.0; 2];
    for l in (0..NUM_WAYPOINTS).rev() {
        acc[0] += d_points[2 * l];
        acc[1] += d_points[2 * l + 1];
        d_deltas[2 * l] = acc[0];
        d_deltas[2 * l + 1] = acc[1];
    }
    grads.weights.add_outer(&d_deltas, h);
    crate::linalg::add_assign(&mut grads.bias, &d_deltas);
    heads.weights.matvec_t(&d_deltas)
}

/// Heading and speed references derived from the first two waypoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionReference {
    /// `atan2(aim.y, aim.x)`; straight ahead is `π/2`.
    pub theta_ref: f64,
    pub v_ref: f64,
    pub aim: LocalPoint,
}

impl MotionReference {
    /// Direction of the aim point measured clockwise from straight ahead,
    /// the same sense as a compass bearing. Positive means "to the right".
    pub fn relative_bearing(&self) -> f64 {
        wrap_angle(FRAC_PI_2 - self.theta_ref)
    }
}

pub fn motion_reference(plan: &WaypointPlan, gamma: f64) -> Result<MotionReference, PlannerError> {
    let pts = plan.points();
    if pts.len() < 2 {
        return Err(PlannerError::DimensionMismatch("plan needs two waypoints".into()));
    }
    let aim = LocalPoint::new(0.5 * (pts[0].x + pts[1].x), 0.5 * (pts[0].y + pts[1].y));
    if aim.norm() < 1e-9 {
        return Err(PlannerError::DegenerateAim);
    }
    Ok(MotionReference {
        theta_ref: aim.y.atan2(aim.x),
        v_ref: gamma * (pts[0].x - pts[1].x).hypot(pts[0].y - pts[1].y),
        aim,
    })
}
