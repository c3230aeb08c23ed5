use serde::{Deserialize, Serialize};

use crate::controller::ControlAction;
use crate::geodesy::wrap_angle;

/// Planar pose in a local east/north frame. `heading` is a compass angle
/// (clockwise from north).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub east: f64,
    pub north: f64,
    pub heading: f64,
    pub speed: f64,
}

impl RobotState {
    pub fn new(east: f64, north: f64, heading: f64) -> Self {
        Self {
            east,
            north,
            heading: wrap_angle(heading),
            speed: 0.0,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.east, self.north]
    }

    /// World offset of a robot-frame vector (`x` right, `y` forward).
    pub fn body_to_world(&self, x: f64, y: f64) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [c * x + s * y, -s * x + c * y]
    }

    /// Robot-frame coordinates (`x` right, `y` forward) of a world point.
    pub fn world_to_body(&self, p: [f64; 2]) -> [f64; 2] {
        let (de, dn) = (p[0] - self.east, p[1] - self.north);
        let (s, c) = self.heading.sin_cos();
        [c * de - s * dn, s * de + c * dn]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kinematics {
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: 1.0,
        }
    }
}

/// Holonomic base update. Translation uses the heading at the start of the
/// tick.
pub fn step(state: &RobotState, action: ControlAction, kin: &Kinematics, dt: f64) -> RobotState {
    let [de, dn] = state.body_to_world(action.x * kin.v_max * dt, action.y * kin.v_max * dt);
    RobotState {
        east: state.east + de,
        north: state.north + dn,
        heading: wrap_angle(state.heading + action.theta * kin.omega_max * dt),
        speed: de.hypot(dn) / dt,
    }
}
