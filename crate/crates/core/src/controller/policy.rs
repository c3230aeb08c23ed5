use serde::{Deserialize, Serialize};

use super::{blend, mlp_control, pid_control, BlendBranch, BlendWeights, ControlAction, ControlError, GateNorm, MlpHeads, PidGains, PidState};
use crate::geodesy::{classify_command, Command, CommandThresholds, LocalPoint};
use crate::planner::{gru_step, motion_reference, rollout_waypoints, GruParams, MotionReference, PlannerError, PlannerState, WaypointHeads, WaypointPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub gru: GruParams,
    pub waypoint_heads: WaypointHeads,
    pub mlp_heads: MlpHeads,
    pub weights: BlendWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Speed gain applied to the spacing of the first two waypoints.
    pub gamma: f64,
    pub epsilon: f64,
    pub gate_norm: GateNorm,
    pub thresholds: CommandThresholds,
    pub lateral: PidGains,
    pub longitudinal: PidGains,
    pub dt: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            epsilon: 0.05,
            gate_norm: GateNorm::L2,
            thresholds: CommandThresholds::default(),
            lateral: PidGains::lateral(),
            longitudinal: PidGains::longitudinal(),
            dt: 1.0 / 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub planner: PlannerState,
    pub lateral: PidState,
    pub longitudinal: PidState,
    /// Last valid motion reference, held when the aim point degenerates.
    pub last_reference: Option<MotionReference>,
    pub command_conflicts: u64,
}

impl PolicyState {
    pub fn new(hidden: usize, cfg: &PolicyConfig) -> Self {
        Self {
            planner: PlannerState::zeros(hidden),
            lateral: PidState::new(cfg.lateral),
            longitudinal: PidState::new(cfg.longitudinal),
            last_reference: None,
            command_conflicts: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurements {
    pub speed: f64,
}

/// Everything computed on the way to one action.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub plan: WaypointPlan,
    pub reference: Option<MotionReference>,
    pub reference_held: bool,
    pub command: Command,
    pub command_conflict: bool,
    pub u_mlp: ControlAction,
    pub u_pid: ControlAction,
    pub u_final: ControlAction,
    pub branch: BlendBranch,
}

/// One control tick: GRU update, waypoint rollout, PID tracking of the
/// derived reference, command-selected MLP, gated blend.
///
/// The planner heading is measured counter-clockwise from the robot's right
/// axis while the PID works in clockwise bearings, so the reference is
/// converted with [`MotionReference::relative_bearing`] and the measured
/// relative heading is zero.
pub fn control_policy(
    z: &[f64],
    state: &PolicyState,
    route: [LocalPoint; 2],
    meas: Measurements,
    params: &PolicyParams,
    cfg: &PolicyConfig,
) -> Result<(ControlAction, PolicyState, Diagnostics), ControlError> {
    let planner = gru_step(z, &state.planner, &params.gru)?;
    let plan = rollout_waypoints(&planner, &params.waypoint_heads)?;
    let (reference, reference_held) = match motion_reference(&plan, cfg.gamma) {
        Ok(r) => (Some(r), false),
        Err(PlannerError::DegenerateAim) => (state.last_reference, state.last_reference.is_some()),
        Err(e) => return Err(e.into()),
    };

    let mut next = PolicyState {
        planner,
        lateral: state.lateral,
        longitudinal: state.longitudinal,
        last_reference: reference,
        command_conflicts: state.command_conflicts,
    };

    let u_pid = match reference {
        Some(r) => {
            let out = pid_control(r.relative_bearing(), r.v_ref, 0.0, meas.speed, &state.lateral, &state.longitudinal, cfg.dt)?;
            next.lateral = out.lat;
            next.longitudinal = out.lon;
            out.action
        }
        None => ControlAction::ZERO,
    };

    let decision = classify_command(route[0], route[1], cfg.thresholds.tau1, cfg.thresholds.tau2);
    if decision.conflict {
        next.command_conflicts += 1;
        log::warn!("route points straddle both turn thresholds; choosing left");
    }
    let u_mlp = mlp_control(&next.planner, decision.command, &params.mlp_heads)?;
    let (u_final, branch) = blend(u_mlp, u_pid, &params.weights, cfg.epsilon, cfg.gate_norm);

    let diag = Diagnostics {
        plan,
        reference,
        reference_held,
        command: decision.command,
        command_conflict: decision.conflict,
        u_mlp,
        u_pid,
        u_final,
        branch,
    };
    Ok((u_final, next, diag))
}
