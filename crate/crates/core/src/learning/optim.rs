use serde::{Deserialize, Serialize};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `params` and `grads` are matching lists of parameter blocks.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient block count");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (b, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            for i in 0..p.len() {
                p[i] *= 1.0 - lr * self.weight_decay;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub lr: f64,
    pub decay_patience: usize,
    pub factor: f64,
    pub lr_min: f64,
    pub stop_patience: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            decay_patience: 5,
            factor: 0.5,
            lr_min: 1e-6,
            stop_patience: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plateau {
    Improved,
    Stagnant,
    Stop,
}

/// Learning-rate halving and early stopping on a validation metric.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    cfg: PlateauConfig,
    lr: f64,
    best: f64,
    stagnant: usize,
}

impl PlateauSchedule {
    pub fn new(cfg: PlateauConfig) -> Self {
        Self {
            cfg,
            lr: cfg.lr,
            best: f64::INFINITY,
            stagnant: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stagnant_epochs(&self) -> usize {
        self.stagnant
    }

    pub fn observe(&mut self, metric: f64) -> Plateau {
        if metric < self.best {
            self.best = metric;
            self.stagnant = 0;
            return Plateau::Improved;
        }
        self.stagnant += 1;
        if self.stagnant.is_multiple_of(self.cfg.decay_patience) {
            self.lr = (self.lr * self.cfg.factor).max(self.cfg.lr_min);
        }
        if self.stagnant >= self.cfg.stop_patience {
            Plateau::Stop
        } else {
            Plateau::Stagnant
        }
    }
}
