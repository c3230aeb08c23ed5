//! Blended PID / command-specific MLP control.

mod blend;
pub mod diagnostics;
mod mlp;
mod pid;
mod policy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::PlannerError;

pub use blend::{blend, BlendBranch, BlendWeights, GateNorm};
pub use mlp::{mlp_control, MlpHead, MlpHeads, MlpTrace};
pub use pid::{pid_control, pid_step, steering_map, PidGains, PidOutput, PidState};
pub use policy::{control_policy, Diagnostics, Measurements, PolicyConfig, PolicyParams, PolicyState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("time step must be positive, got {0}")]
    NonPositiveInterval(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("blend weight {0} outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

/// Normalized base command: `x` sideways (positive right), `y` forward,
/// `theta` yaw rate (positive clockwise). Components live in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlAction {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl ControlAction {
    pub const ZERO: ControlAction = ControlAction {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    /// Clamps each component into `[-1, 1]`; non-finite inputs become 0.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        let c = |v: f64| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
        Self {
            x: c(x),
            y: c(y),
            theta: c(theta),
        }
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    pub fn norm(&self, kind: GateNorm) -> f64 {
        match kind {
            GateNorm::L2 => (self.x * self.x + self.y * self.y + self.theta * self.theta).sqrt(),
            GateNorm::LInf => self.x.abs().max(self.y.abs()).max(self.theta.abs()),
        }
    }
}
