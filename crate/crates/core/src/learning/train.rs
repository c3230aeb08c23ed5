use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{LossReport, TaskWeights};
use super::mgn::{mgn_update, MgnConfig};
use super::model::PolicyModel;
use super::optim::{AdamW, Plateau, PlateauConfig, PlateauSchedule};
use super::sample::TrainSample;
use super::LearningError;
use crate::dataset::records::{fmt_f64, FieldReader, Record, RecordError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub lr_patience: usize,
    pub lr_decay: f64,
    pub lr_min: f64,
    /// Window length; stored for bookkeeping, samples carry their frames.
    pub k: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub mgn: MgnConfig,
    /// Samples used to measure per-task gradient norms.
    pub probe_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 5,
            early_stop_patience: 30,
            lr_patience: 5,
            lr_decay: 0.5,
            lr_min: 1e-6,
            k: 3,
            max_epochs: 500,
            seed: 0,
            mgn: MgnConfig::default(),
            probe_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearningError> {
        let positive = [self.lr, self.weight_decay, self.lr_decay, self.lr_min];
        if positive.iter().any(|v| !(*v > 0.0)) || self.lr_decay >= 1.0 {
            return Err(LearningError::InvalidConfig("rates must be positive, decay below 1".into()));
        }
        if self.batch_size == 0 || self.early_stop_patience == 0 || self.lr_patience == 0 || self.max_epochs == 0 {
            return Err(LearningError::InvalidConfig("counts must be positive".into()));
        }
        if !(1..=3).contains(&self.k) {
            return Err(LearningError::InvalidConfig(format!("K must be 1, 2 or 3, got {}", self.k)));
        }
        Ok(())
    }

    fn plateau(&self) -> PlateauConfig {
        PlateauConfig {
            lr: self.lr,
            decay_patience: self.lr_patience,
            factor: self.lr_decay,
            lr_min: self.lr_min,
            stop_patience: self.early_stop_patience,
        }
    }
}

/// One line of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossReport,
    pub val_total: f64,
}

impl Record for HistoryRow {
    const KIND: &'static str = "history";

    fn header() -> Vec<String> {
        [
            "epoch", "lr", "l_seg", "l_depth", "l_percep", "l_wp", "l_ctrl", "l_total", "alpha_percep", "alpha_wp",
            "alpha_ctrl", "val_total",
        ]
        .map(String::from)
        .to_vec()
    }

    fn to_fields(&self) -> Vec<String> {
        let t = &self.train;
        let mut v = vec![self.epoch.to_string()];
        v.extend(
            [
                self.lr, t.l_seg, t.l_depth, t.l_percep, t.l_wp, t.l_ctrl, t.l_total, t.weights.0[0], t.weights.0[1],
                t.weights.0[2], self.val_total,
            ]
            .map(fmt_f64),
        );
        v
    }

    fn from_fields(f: &FieldReader<'_>) -> Result<Self, RecordError> {
        let weights = TaskWeights([f.f64("alpha_percep")?, f.f64("alpha_wp")?, f.f64("alpha_ctrl")?]);
        Ok(Self {
            epoch: f.u64("epoch")? as usize,
            lr: f.f64("lr")?,
            train: LossReport {
                l_seg: f.f64("l_seg")?,
                l_depth: f.f64("l_depth")?,
                l_percep: f.f64("l_percep")?,
                l_wp: f.f64("l_wp")?,
                l_ctrl: f.f64("l_ctrl")?,
                l_total: f.f64("l_total")?,
                weights,
            },
            val_total: f.f64("val_total")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub best: PolicyModel,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Index of the last epoch run.
    pub last_epoch: usize,
    pub early_stopped: bool,
    pub history: Vec<HistoryRow>,
    /// Batch-mean losses of every optimizer step.
    pub steps: Vec<LossReport>,
    pub weights: TaskWeights,
}

/// Mean validation losses with the given task weights.
pub fn validation_loss(model: &PolicyModel, val: &[TrainSample], weights: TaskWeights) -> Result<LossReport, LearningError> {
    if val.is_empty() {
        return Err(LearningError::EmptySplit);
    }
    let reports: Vec<LossReport> = val
        .par_iter()
        .map(|s| model.evaluate(s, weights))
        .collect::<Result<_, _>>()?;
    Ok(LossReport::mean(&reports, weights))
}

/// L2 norm of each task's unweighted gradient w.r.t. the shared encoder.
pub fn task_gradient_norms(model: &PolicyModel, probe: &[&TrainSample]) -> Result<[f64; 3], LearningError> {
    let mut norms = [0.0; 3];
    for (k, norm) in norms.iter_mut().enumerate() {
        let mut w = [0.0; 3];
        w[k] = 1.0;
        let (_, g) = model.batch_backward(probe, TaskWeights(w))?;
        *norm = g
            .slices()
            .iter()
            .filter(|(n, _)| n.starts_with("encoder."))
            .flat_map(|(_, s)| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
    }
    Ok(norms)
}

fn update_weights(model: &PolicyModel, probe: &[&TrainSample], weights: TaskWeights, cfg: &MgnConfig) -> Result<TaskWeights, LearningError> {
    let norms = task_gradient_norms(model, probe)?;
    match mgn_update(norms, weights, cfg) {
        Ok(w) => Ok(w),
        Err(LearningError::AllZeroGradients) => {
            log::warn!("all task gradients vanished; keeping task weights");
            Ok(weights)
        }
        Err(e) => Err(e),
    }
}

pub fn train(
    mut model: PolicyModel,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, LearningError> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(LearningError::EmptySplit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut schedule = PlateauSchedule::new(cfg.plateau());
    let mut weights = TaskWeights::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut steps = Vec::new();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut early_stopped = false;
    let mut last_epoch = 0;

    for epoch in 0..cfg.max_epochs {
        last_epoch = epoch;
        order.shuffle(&mut rng);
        if cfg.mgn.enabled && !cfg.mgn.per_step {
            let probe: Vec<&TrainSample> = order.iter().take(cfg.probe_size).map(|&i| &train_set[i]).collect();
            weights = update_weights(&model, &probe, weights, &cfg.mgn)?;
        }
        let lr = schedule.lr();
        let mut epoch_reports = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            if cfg.mgn.enabled && cfg.mgn.per_step {
                weights = update_weights(&model, &batch, weights, &cfg.mgn)?;
            }
            let (report, grads) = model.batch_backward(&batch, weights)?;
            let grad_slices: Vec<&[f64]> = grads.slices().into_iter().map(|(_, s)| s).collect();
            let params: Vec<&mut [f64]> = model.slices_mut().into_iter().map(|(_, s)| s).collect();
            opt.step(params, &grad_slices, lr);
            steps.push(report);
            epoch_reports.push(report);
        }
        let val = validation_loss(&model, val_set, weights)?;
        if !val.l_total.is_finite() {
            return Err(LearningError::NonFiniteLoss);
        }
        history.push(HistoryRow {
            epoch,
            lr,
            train: LossReport::mean(&epoch_reports, weights),
            val_total: val.l_total,
        });
        log::debug!("epoch {epoch}: lr {lr:.2e} val {:.5}", val.l_total);
        match schedule.observe(val.l_total) {
            Plateau::Improved => {
                best = model.clone();
                best_epoch = epoch;
            }
            Plateau::Stagnant => {}
            Plateau::Stop => {
                early_stopped = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val: schedule.best(),
        last_epoch,
        early_stopped,
        history,
        steps,
        weights,
    })
}
