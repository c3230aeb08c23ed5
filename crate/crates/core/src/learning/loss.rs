use serde::{Deserialize, Serialize};

use super::LearningError;

/// Probability clamp applied before the BCE log terms.
pub const BCE_FLOOR: f64 = 1e-7;
pub const DICE_EPS: f64 = 1e-6;

fn check(pred: &[f64], truth: &[f64]) -> Result<(), LearningError> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(LearningError::ShapeMismatch(format!(
            "prediction has {} elements, truth {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_FLOOR, 1.0 - BCE_FLOOR)
}

pub fn bce(pred: &[f64], truth: &[f64]) -> Result<f64, LearningError> {
    check(pred, truth)?;
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Soft Dice loss over the whole tensor.
pub fn dice(pred: &[f64], truth: &[f64]) -> Result<f64, LearningError> {
    check(pred, truth)?;
    let (inter, total) = dice_sums(pred, truth);
    Ok(1.0 - (2.0 * inter + DICE_EPS) / (total + DICE_EPS))
}

fn dice_sums(pred: &[f64], truth: &[f64]) -> (f64, f64) {
    // no floor here: an empty mask predicted as empty scores zero
    pred.iter().zip(truth).fold((0.0, 0.0), |(i, s), (&p, &t)| {
        let p = p.clamp(0.0, 1.0);
        (i + p * t, s + p + t)
    })
}

/// BCE + Dice on probabilities against binary masks.
pub fn seg_loss(pred: &[f64], truth: &[f64]) -> Result<f64, LearningError> {
    Ok(bce(pred, truth)? + dice(pred, truth)?)
}

/// Gradient of [`seg_loss`] w.r.t. the probabilities. The BCE part is zero
/// where its clamp is active.
pub fn seg_loss_grad(pred: &[f64], truth: &[f64]) -> Result<Vec<f64>, LearningError> {
    check(pred, truth)?;
    let n = pred.len() as f64;
    let (inter, total) = dice_sums(pred, truth);
    let s = total + DICE_EPS;
    let num = 2.0 * inter + DICE_EPS;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let d_bce = if p <= BCE_FLOOR || p >= 1.0 - BCE_FLOOR {
                0.0
            } else {
                (p - t) / (p * (1.0 - p)) / n
            };
            let d_dice = if (0.0..=1.0).contains(&p) { -(2.0 * t * s - num) / (s * s) } else { 0.0 };
            d_bce + d_dice
        })
        .collect())
}

/// `mean |Δ| + mean Δ²`.
pub fn l1l2(pred: &[f64], truth: &[f64]) -> Result<f64, LearningError> {
    check(pred, truth)?;
    let n = pred.len() as f64;
    let (a, b) = pred.iter().zip(truth).fold((0.0, 0.0), |(a, b), (p, t)| {
        let d = p - t;
        (a + d.abs(), b + d * d)
    });
    Ok(a / n + b / n)
}

/// Gradient of [`l1l2`]; the `|·|` subgradient at zero is zero.
pub fn l1l2_grad(pred: &[f64], truth: &[f64]) -> Result<Vec<f64>, LearningError> {
    check(pred, truth)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let d = p - t;
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            (sign + 2.0 * d) / n
        })
        .collect())
}

/// Task weights for perception, waypoints and control, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights(pub [f64; 3]);

impl Default for TaskWeights {
    fn default() -> Self {
        Self([1.0; 3])
    }
}

impl TaskWeights {
    pub fn sum(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_seg: f64,
    pub l_depth: f64,
    pub l_percep: f64,
    pub l_wp: f64,
    pub l_ctrl: f64,
    pub l_total: f64,
    pub weights: TaskWeights,
}

impl LossReport {
    pub fn compose(l_seg: f64, l_depth: f64, l_wp: f64, l_ctrl: f64, weights: TaskWeights) -> Self {
        let l_percep = l_seg + l_depth;
        let [a, b, c] = weights.0;
        Self {
            l_seg,
            l_depth,
            l_percep,
            l_wp,
            l_ctrl,
            l_total: a * l_percep + b * l_wp + c * l_ctrl,
            weights,
        }
    }

    /// Per-task means over a batch, recombined with `weights`.
    pub fn mean(reports: &[LossReport], weights: TaskWeights) -> Self {
        let n = reports.len().max(1) as f64;
        let s = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Self::compose(s(|r| r.l_seg), s(|r| r.l_depth), s(|r| r.l_wp), s(|r| r.l_ctrl), weights)
    }

    pub fn task_losses(&self) -> [f64; 3] {
        [self.l_percep, self.l_wp, self.l_ctrl]
    }
}
