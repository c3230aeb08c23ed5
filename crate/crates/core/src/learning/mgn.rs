//! Gradient-norm balancing of the three task weights.

use serde::{Deserialize, Serialize};

use super::{LearningError, TaskWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgnConfig {
    pub step: f64,
    /// Update after every optimizer step instead of once per epoch.
    pub per_step: bool,
    pub enabled: bool,
    /// Lower bound applied before renormalization.
    pub min_weight: f64,
}

impl Default for MgnConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            per_step: false,
            enabled: true,
            min_weight: 1e-3,
        }
    }
}

const NORM_FLOOR: f64 = 1e-12;

/// Moves each `α_k` by `(mean(α·g) / (α_k g_k))^step`, then rescales so the
/// weights sum to 3. The last weight absorbs the rounding so that
/// `(w0 + w1) + w2 == 3.0` holds exactly.
pub fn mgn_update(norms: [f64; 3], weights: TaskWeights, cfg: &MgnConfig) -> Result<TaskWeights, LearningError> {
    if norms.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(LearningError::NonFinite("task gradient norm".into()));
    }
    if norms.iter().all(|g| *g == 0.0) {
        return Err(LearningError::AllZeroGradients);
    }
    let alpha = weights.0;
    let g = norms.map(|g| g.max(NORM_FLOOR));
    let target = (0..3).map(|k| alpha[k] * g[k]).sum::<f64>() / 3.0;
    let moved: Vec<f64> = (0..3)
        .map(|k| (alpha[k] * (target / (alpha[k] * g[k])).powf(cfg.step)).max(cfg.min_weight))
        .collect();
    Ok(renormalize([moved[0], moved[1], moved[2]]))
}

pub fn renormalize(w: [f64; 3]) -> TaskWeights {
    let s = w[0] + w[1] + w[2];
    let a = 3.0 * w[0] / s;
    let b = 3.0 * w[1] / s;
    TaskWeights([a, b, 3.0 - (a + b)])
}
