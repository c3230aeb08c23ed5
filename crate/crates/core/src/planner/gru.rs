use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PlannerError, PlannerState};
use crate::linalg::{sigmoid, Dense};

/// Gate weights act on the concatenation `[z, h]` (or `[z, r ⊙ h]` for the
/// candidate), so every matrix is `hidden × (input + hidden)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_r: Dense,
    pub w_u: Dense,
    pub w_h: Dense,
    pub b_r: Vec<f64>,
    pub b_u: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_r: Dense::zeros(hidden, input + hidden),
            w_u: Dense::zeros(hidden, input + hidden),
            w_h: Dense::zeros(hidden, input + hidden),
            b_r: vec![0.0; hidden],
            b_u: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    /// Uniform init scaled by `1/sqrt(input + hidden)`.
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let scale = 1.0 / ((input + hidden) as f64).sqrt();
        let mut p = Self::zeros(input, hidden);
        p.w_r = Dense::random(hidden, input + hidden, scale, rng);
        p.w_u = Dense::random(hidden, input + hidden, scale, rng);
        p.w_h = Dense::random(hidden, input + hidden, scale, rng);
        p
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_r.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.cols() - self.hidden_dim()
    }

    pub fn slices(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_r", self.w_r.data()),
            ("w_u", self.w_u.data()),
            ("w_h", self.w_h.data()),
            ("b_r", &self.b_r),
            ("b_u", &self.b_u),
            ("b_h", &self.b_h),
        ]
    }

    pub fn slices_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_r", self.w_r.data_mut()),
            ("w_u", self.w_u.data_mut()),
            ("w_h", self.w_h.data_mut()),
            ("b_r", &mut self.b_r),
            ("b_u", &mut self.b_u),
            ("b_h", &mut self.b_h),
        ]
    }
}

/// Intermediates of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruTrace {
    pub zh: Vec<f64>,
    pub z_rh: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub candidate: Vec<f64>,
}

fn check_dims(z: &[f64], h: &[f64], p: &GruParams) -> Result<(), PlannerError> {
    let hidden = p.hidden_dim();
    let ok = h.len() == hidden
        && z.len() == p.input_dim()
        && [&p.w_r, &p.w_u, &p.w_h]
            .iter()
            .all(|w| w.rows() == hidden && w.cols() == z.len() + hidden)
        && p.b_u.len() == hidden
        && p.b_h.len() == hidden;
    if ok {
        Ok(())
    } else {
        Err(PlannerError::DimensionMismatch(format!(
            "gru step with input {}, hidden state {}, params {}x{}",
            z.len(),
            h.len(),
            p.w_r.rows(),
            p.w_r.cols()
        )))
    }
}

pub fn gru_step_traced(z: &[f64], h_prev: &[f64], p: &GruParams) -> Result<(Vec<f64>, GruTrace), PlannerError> {
    check_dims(z, h_prev, p)?;
    let zh: Vec<f64> = z.iter().chain(h_prev).copied().collect();
    let r: Vec<f64> = p
        .w_r
        .matvec(&zh)
        .iter()
        .zip(&p.b_r)
        .map(|(a, b)| sigmoid(a + b))
        .collect();
    let u: Vec<f64> = p
        .w_u
        .matvec(&zh)
        .iter()
        .zip(&p.b_u)
        .map(|(a, b)| sigmoid(a + b))
        .collect();
    let z_rh: Vec<f64> = z
        .iter()
        .copied()
        .chain(r.iter().zip(h_prev).map(|(r, h)| r * h))
        .collect();
    let candidate: Vec<f64> = p
        .w_h
        .matvec(&z_rh)
        .iter()
        .zip(&p.b_h)
        .map(|(a, b)| (a + b).tanh())
        .collect();
    let h_new = (0..h_prev.len())
        .map(|i| (1.0 - u[i]) * h_prev[i] + u[i] * candidate[i])
        .collect();
    Ok((
        h_new,
        GruTrace {
            zh,
            z_rh,
            h_prev: h_prev.to_vec(),
            r,
            u,
            candidate,
        },
    ))
}

/// One recurrent update of the planner state.
pub fn gru_step(z: &[f64], h_prev: &PlannerState, p: &GruParams) -> Result<PlannerState, PlannerError> {
    gru_step_traced(z, &h_prev.h, p).map(|(h, _)| PlannerState { h })
}

/// Back-propagates `d_h_new` through one step, accumulating parameter
/// gradients into `grads`. Returns `(d_z, d_h_prev)`.
pub fn gru_step_backward(
    trace: &GruTrace,
    p: &GruParams,
    d_h_new: &[f64],
    grads: &mut GruParams,
) -> (Vec<f64>, Vec<f64>) {
    let hidden = trace.h_prev.len();
    let input = trace.zh.len() - hidden;
    let mut d_h_prev: Vec<f64> = (0..hidden).map(|i| d_h_new[i] * (1.0 - trace.u[i])).collect();

    let d_a_h: Vec<f64> = (0..hidden)
        .map(|i| d_h_new[i] * trace.u[i] * (1.0 - trace.candidate[i] * trace.candidate[i]))
        .collect();
    let d_a_u: Vec<f64> = (0..hidden)
        .map(|i| d_h_new[i] * (trace.candidate[i] - trace.h_prev[i]) * trace.u[i] * (1.0 - trace.u[i]))
        .collect();

    grads.w_h.add_outer(&d_a_h, &trace.z_rh);
    crate::linalg::add_assign(&mut grads.b_h, &d_a_h);
    let d_z_rh = p.w_h.matvec_t(&d_a_h);
    let mut d_z = d_z_rh[..input].to_vec();
    let d_rh = &d_z_rh[input..];
    let d_a_r: Vec<f64> = (0..hidden)
        .map(|i| d_rh[i] * trace.h_prev[i] * trace.r[i] * (1.0 - trace.r[i]))
        .collect();
    for i in 0..hidden {
        d_h_prev[i] += d_rh[i] * trace.r[i];
    }

    grads.w_u.add_outer(&d_a_u, &trace.zh);
    crate::linalg::add_assign(&mut grads.b_u, &d_a_u);
    grads.w_r.add_outer(&d_a_r, &trace.zh);
    crate::linalg::add_assign(&mut grads.b_r, &d_a_r);
    let d_zh_u = p.w_u.matvec_t(&d_a_u);
    let d_zh_r = p.w_r.matvec_t(&d_a_r);
    for k in 0..input {
        d_z[k] += d_zh_u[k] + d_zh_r[k];
    }
    for i in 0..hidden {
        d_h_prev[i] += d_zh_u[input + i] + d_zh_r[input + i];
    }
    (d_z, d_h_prev)
}
