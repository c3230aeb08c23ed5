use serde::{Deserialize, Serialize};

use super::{ControlAction, ControlError};

/// Norm used by the activity gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GateNorm {
    #[default]
    L2,
    LInf,
}

/// `beta[i][j]`: column 0 mixes the translational components `x, y`,
/// column 1 mixes the yaw rate. Row 0 weights the MLP, row 1 the PID.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendWeights {
    beta: [[f64; 2]; 2],
}

impl BlendWeights {
    pub fn new(beta: [[f64; 2]; 2]) -> Result<Self, ControlError> {
        for v in beta.iter().flatten() {
            if !(0.0..=1.0).contains(v) {
                return Err(ControlError::WeightOutOfRange(*v));
            }
        }
        Ok(Self { beta })
    }

    pub fn fixed() -> Self {
        Self { beta: [[0.5; 2]; 2] }
    }

    pub fn beta(&self) -> [[f64; 2]; 2] {
        self.beta
    }
}

impl Default for BlendWeights {
    fn default() -> Self {
        Self::fixed()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlendBranch {
    Blended,
    MlpOnly,
    PidOnly,
    Stopped,
}

impl BlendBranch {
    pub fn as_str(self) -> &'static str {
        match self {
            BlendBranch::Blended => "blended",
            BlendBranch::MlpOnly => "mlp",
            BlendBranch::PidOnly => "pid",
            BlendBranch::Stopped => "stopped",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Blended, Self::MlpOnly, Self::PidOnly, Self::Stopped]
            .into_iter()
            .find(|b| b.as_str() == s)
    }
}

/// Gated mix of the two controllers. A controller counts as active when
/// its output norm is at least `epsilon`; when only one is active its output
/// passes through untouched.
pub fn blend(
    u_mlp: ControlAction,
    u_pid: ControlAction,
    weights: &BlendWeights,
    epsilon: f64,
    norm: GateNorm,
) -> (ControlAction, BlendBranch) {
    let mlp_on = u_mlp.norm(norm) >= epsilon;
    let pid_on = u_pid.norm(norm) >= epsilon;
    match (mlp_on, pid_on) {
        (true, true) => {
            let b = weights.beta;
            let action = ControlAction::new(
                b[0][0] * u_mlp.x + b[1][0] * u_pid.x,
                b[0][0] * u_mlp.y + b[1][0] * u_pid.y,
                b[0][1] * u_mlp.theta + b[1][1] * u_pid.theta,
            );
            (action, BlendBranch::Blended)
        }
        (true, false) => (u_mlp, BlendBranch::MlpOnly),
        (false, true) => (u_pid, BlendBranch::PidOnly),
        (false, false) => (ControlAction::ZERO, BlendBranch::Stopped),
    }
}
