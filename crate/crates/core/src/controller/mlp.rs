use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ControlAction, ControlError};
use crate::geodesy::Command;
use crate::linalg::Dense;
use crate::planner::PlannerState;

/// `W2 · tanh(W1 · h + b1) + b2`, clamped to `[-1, 1]³` on output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHead {
    pub w1: Dense,
    pub b1: Vec<f64>,
    pub w2: Dense,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    /// Pre-clamp output.
    pub raw: [f64; 3],
}

impl MlpHead {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w1: Dense::zeros(hidden, input),
            b1: vec![0.0; hidden],
            w2: Dense::zeros(3, hidden),
            b2: vec![0.0; 3],
        }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w1: Dense::random(hidden, input, (3.0 / input as f64).sqrt(), rng),
            b1: vec![0.0; hidden],
            w2: Dense::random(3, hidden, (1.0 / hidden as f64).sqrt(), rng),
            b2: vec![0.0; 3],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn forward(&self, h: &[f64]) -> Result<MlpTrace, ControlError> {
        if h.len() != self.w1.cols() || self.w2.rows() != 3 || self.w2.cols() != self.w1.rows() {
            return Err(ControlError::DimensionMismatch(format!(
                "MLP head expects {} inputs, got {}",
                self.w1.cols(),
                h.len()
            )));
        }
        let hidden: Vec<f64> = self
            .w1
            .matvec(h)
            .iter()
            .zip(&self.b1)
            .map(|(a, b)| (a + b).tanh())
            .collect();
        let out = self.w2.matvec(&hidden);
        Ok(MlpTrace {
            input: h.to_vec(),
            hidden,
            raw: [out[0] + self.b2[0], out[1] + self.b2[1], out[2] + self.b2[2]],
        })
    }

    /// `d_action` is w.r.t. the clamped output; components pinned by the
    /// clamp pass no gradient. Returns `d_h`.
    pub fn backward(&self, trace: &MlpTrace, d_action: [f64; 3], grads: &mut MlpHead) -> Vec<f64> {
        let d_raw: Vec<f64> = (0..3)
            .map(|k| if trace.raw[k].abs() < 1.0 { d_action[k] } else { 0.0 })
            .collect();
        grads.w2.add_outer(&d_raw, &trace.hidden);
        crate::linalg::add_assign(&mut grads.b2, &d_raw);
        let d_hidden = self.w2.matvec_t(&d_raw);
        let d_a1: Vec<f64> = d_hidden
            .iter()
            .zip(&trace.hidden)
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();
        grads.w1.add_outer(&d_a1, &trace.input);
        crate::linalg::add_assign(&mut grads.b1, &d_a1);
        self.w1.matvec_t(&d_a1)
    }

    pub fn slices(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w1", self.w1.data()),
            ("b1", &self.b1),
            ("w2", self.w2.data()),
            ("b2", &self.b2),
        ]
    }

    pub fn slices_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w1", self.w1.data_mut()),
            ("b1", &mut self.b1),
            ("w2", self.w2.data_mut()),
            ("b2", &mut self.b2),
        ]
    }
}

/// One head per [`Command`], indexed by [`Command::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHeads {
    pub heads: [MlpHead; 3],
}

impl MlpHeads {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            heads: std::array::from_fn(|_| MlpHead::zeros(input, hidden)),
        }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            heads: std::array::from_fn(|_| MlpHead::random(input, hidden, rng)),
        }
    }

    pub fn head(&self, cmd: Command) -> &MlpHead {
        &self.heads[cmd.index()]
    }

    pub fn head_mut(&mut self, cmd: Command) -> &mut MlpHead {
        &mut self.heads[cmd.index()]
    }
}

pub fn mlp_control(h: &PlannerState, cmd: Command, heads: &MlpHeads) -> Result<ControlAction, ControlError> {
    let trace = heads.head(cmd).forward(&h.h)?;
    Ok(ControlAction::from_array(trace.raw))
}
