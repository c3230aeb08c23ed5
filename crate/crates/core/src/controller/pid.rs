use serde::{Deserialize, Serialize};

use super::{ControlAction, ControlError};
use crate::geodesy::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Anti-windup bound on the integral accumulator.
    pub integral_limit: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self {
            kp,
            ki,
            kd,
            integral_limit: 1.0,
        }
    }

    pub fn lateral() -> Self {
        Self::new(1.0, 0.05, 0.1)
    }

    pub fn longitudinal() -> Self {
        Self::new(0.8, 0.05, 0.0)
    }
}

/// Gains plus the running integral and last error.
///
/// A fresh state has no previous error, so its first step carries no
/// derivative term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub gains: PidGains,
    pub integral: f64,
    pub prev_error: Option<f64>,
}

impl PidState {
    pub fn new(gains: PidGains) -> Self {
        Self {
            gains,
            integral: 0.0,
            prev_error: None,
        }
    }
}

pub fn pid_step(state: &PidState, error: f64, dt: f64) -> Result<(f64, PidState), ControlError> {
    if !(dt > 0.0) {
        return Err(ControlError::NonPositiveInterval(dt));
    }
    let g = state.gains;
    let limit = g.integral_limit.abs();
    let integral = (state.integral + error * dt).clamp(-limit, limit);
    let derivative = state.prev_error.map_or(0.0, |p| (error - p) / dt);
    let output = g.kp * error + g.ki * integral + g.kd * derivative;
    Ok((
        output,
        PidState {
            gains: g,
            integral,
            prev_error: Some(error),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidOutput {
    pub action: ControlAction,
    pub u_lat: f64,
    pub u_lon: f64,
    pub lat: PidState,
    pub lon: PidState,
}

/// Lateral and longitudinal PID followed by the steering map: the lateral
/// output drives both the sideways step `x` and the yaw rate `theta`, the
/// longitudinal output drives `y`.
///
/// Headings are compass-like (clockwise positive), so a positive heading
/// error commands a move and turn to the right. The heading error is wrapped
/// into `(−π, π]`.
#[allow(clippy::too_many_arguments)]
pub fn pid_control(
    theta_ref: f64,
    v_ref: f64,
    theta_meas: f64,
    v_meas: f64,
    lat: &PidState,
    lon: &PidState,
    dt: f64,
) -> Result<PidOutput, ControlError> {
    let (u_lat, lat) = pid_step(lat, wrap_angle(theta_ref - theta_meas), dt)?;
    let (u_lon, lon) = pid_step(lon, v_ref - v_meas, dt)?;
    Ok(PidOutput {
        action: steering_map(u_lat, u_lon),
        u_lat,
        u_lon,
        lat,
        lon,
    })
}

pub fn steering_map(u_lat: f64, u_lon: f64) -> ControlAction {
    ControlAction::new(u_lat, u_lon, u_lat)
}
