//! Per-frame feature extractors feeding the planner.
//!
//! Two front-ends are provided: [`OraclePerception`], a frozen random
//! projection of downsampled ground-truth labels and depth, and
//! [`TinyEncoder`], a small trainable network over downsampled RGB. BEV grids
//! are summarised by [`BevProjector`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bevmap::{BevGrid, DepthImage};
use crate::linalg::Dense;

/// Block-averages an interleaved `height × width × channels` image.
pub fn downsample_mean<T: Copy + Into<f64>>(
    values: &[T],
    width: usize,
    height: usize,
    channels: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    let mut sums = vec![0.0; out_w * out_h * channels];
    let mut counts = vec![0usize; out_w * out_h];
    for v in 0..height {
        let ov = v * out_h / height;
        for u in 0..width {
            let ou = u * out_w / width;
            let cell = ov * out_w + ou;
            counts[cell] += 1;
            for c in 0..channels {
                sums[cell * channels + c] += values[(v * width + u) * channels + c].into();
            }
        }
    }
    for (cell, &n) in counts.iter().enumerate() {
        let n = n.max(1) as f64;
        for c in 0..channels {
            sums[cell * channels + c] /= n;
        }
    }
    sums
}

/// Downsampled RGB in `[-0.5, 0.5]`, the input of [`TinyEncoder`].
pub fn encoder_input(rgb: &[u8], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    downsample_mean(rgb, width, height, 3, out_w, out_h)
        .into_iter()
        .map(|v| v / 255.0 - 0.5)
        .collect()
}

/// Per-block class fractions for the first `classes` ids.
pub fn label_fractions(labels: &[u8], width: usize, height: usize, classes: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let one_hot: Vec<f64> = labels
        .iter()
        .flat_map(|&l| (0..classes).map(move |c| if l as usize == c { 1.0 } else { 0.0 }))
        .collect();
    downsample_mean(&one_hot, width, height, classes, out_w, out_h)
}

/// Per-block mean depth divided by `max_depth`; invalid pixels count as
/// `max_depth`.
pub fn normalized_depth(depth: &DepthImage, max_depth: f64, out_w: usize, out_h: usize) -> Vec<f64> {
    let vals: Vec<f64> = depth
        .values()
        .iter()
        .zip(depth.mask())
        .map(|(&d, &ok)| if ok { (d as f64 / max_depth).min(1.0) } else { 1.0 })
        .collect();
    downsample_mean(&vals, depth.width(), depth.height(), 1, out_w, out_h)
}

/// Frozen, seeded projection of ground-truth labels and depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePerception {
    pub classes: usize,
    pub out_w: usize,
    pub out_h: usize,
    pub max_depth: f64,
    pub projection: Dense,
}

impl OraclePerception {
    pub fn new(classes: usize, out_w: usize, out_h: usize, max_depth: f64, feature_dim: usize, seed: u64) -> Self {
        let input = out_w * out_h * (classes + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            classes,
            out_w,
            out_h,
            max_depth,
            projection: Dense::random(feature_dim, input, (3.0 / input as f64).sqrt(), &mut rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn encode(&self, labels: &[u8], depth: &DepthImage) -> Vec<f64> {
        let fr = label_fractions(labels, depth.width(), depth.height(), self.classes, self.out_w, self.out_h);
        let dn = normalized_depth(depth, self.max_depth, self.out_w, self.out_h);
        let mut x = Vec::with_capacity(fr.len() + dn.len());
        for (cell, d) in dn.iter().enumerate() {
            x.extend_from_slice(&fr[cell * self.classes..(cell + 1) * self.classes]);
            x.push(*d);
        }
        self.projection.matvec(&x).into_iter().map(f64::tanh).collect()
    }
}

/// Frozen, seeded summary of a BEV grid: block-pooled channel occupancy
/// followed by a random projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevProjector {
    pub pool: usize,
    pub classes: usize,
    pub projection: Dense,
}

impl BevProjector {
    pub fn new(rows: usize, cols: usize, pool: usize, classes: usize, feature_dim: usize, seed: u64) -> Self {
        let input = rows.div_ceil(pool) * cols.div_ceil(pool) * classes;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            pool,
            classes,
            projection: Dense::random(feature_dim, input, (24.0 / input as f64).sqrt(), &mut rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn pooled(&self, grid: &BevGrid) -> Vec<f64> {
        let spec = grid.spec();
        let pc = spec.cols.div_ceil(self.pool);
        let pr = spec.rows.div_ceil(self.pool);
        let mut x = vec![0.0; pr * pc * self.classes];
        let norm = 1.0 / (self.pool * self.pool) as f64;
        for (i, j, cell) in grid.occupied_cells() {
            let base = ((i / self.pool) * pc + j / self.pool) * self.classes;
            for (c, &v) in cell.iter().take(self.classes).enumerate() {
                x[base + c] += v as f64 * norm;
            }
        }
        x
    }

    pub fn encode(&self, grid: &BevGrid) -> Vec<f64> {
        self.projection
            .matvec(&self.pooled(grid))
            .into_iter()
            .map(f64::tanh)
            .collect()
    }
}

/// Two-layer trainable encoder: `tanh(W2 · tanh(W1 · x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyEncoder {
    pub w1: Dense,
    pub b1: Vec<f64>,
    pub w2: Dense,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub feature: Vec<f64>,
}

impl TinyEncoder {
    pub fn zeros(input: usize, hidden: usize, feature: usize) -> Self {
        Self {
            w1: Dense::zeros(hidden, input),
            b1: vec![0.0; hidden],
            w2: Dense::zeros(feature, hidden),
            b2: vec![0.0; feature],
        }
    }

    pub fn random<R: rand::Rng + ?Sized>(input: usize, hidden: usize, feature: usize, rng: &mut R) -> Self {
        Self {
            w1: Dense::random(hidden, input, (3.0 / input as f64).sqrt(), rng),
            b1: vec![0.0; hidden],
            w2: Dense::random(feature, hidden, (3.0 / hidden as f64).sqrt(), rng),
            b2: vec![0.0; feature],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn forward(&self, x: &[f64]) -> EncoderTrace {
        let hidden: Vec<f64> = self
            .w1
            .matvec(x)
            .iter()
            .zip(&self.b1)
            .map(|(a, b)| (a + b).tanh())
            .collect();
        let feature = self
            .w2
            .matvec(&hidden)
            .iter()
            .zip(&self.b2)
            .map(|(a, b)| (a + b).tanh())
            .collect();
        EncoderTrace {
            input: x.to_vec(),
            hidden,
            feature,
        }
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).feature
    }

    pub fn backward(&self, trace: &EncoderTrace, d_feature: &[f64], grads: &mut TinyEncoder) {
        let d_a2: Vec<f64> = d_feature
            .iter()
            .zip(&trace.feature)
            .map(|(d, f)| d * (1.0 - f * f))
            .collect();
        grads.w2.add_outer(&d_a2, &trace.hidden);
        crate::linalg::add_assign(&mut grads.b2, &d_a2);
        let d_hidden = self.w2.matvec_t(&d_a2);
        let d_a1: Vec<f64> = d_hidden
            .iter()
            .zip(&trace.hidden)
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        grads.w1.add_outer(&d_a1, &trace.input);
        crate::linalg::add_assign(&mut grads.b1, &d_a1);
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
