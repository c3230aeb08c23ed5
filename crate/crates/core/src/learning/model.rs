//! Trainable end-to-end policy with an analytic reverse pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{l1l2, l1l2_grad, seg_loss, seg_loss_grad, LossReport, TaskWeights};
use super::sample::TrainSample;
use super::LearningError;
use crate::bevmap::{BEV_COLS, BEV_ROWS};
use crate::controller::{
    blend, pid_control, BlendBranch, BlendWeights, ControlAction, MlpHeads, MlpTrace, PidState, PolicyConfig,
    PolicyParams,
};
use crate::dataset::tensorfile::{Tensor, TensorFile, TensorFileError};
use crate::geodesy::{classify_command, wrap_angle, Command, LocalPoint};
use crate::linalg::{sigmoid, Dense};
use crate::planner::features::{BevProjector, EncoderTrace, TinyEncoder};
use crate::planner::{
    fuse_inputs, gru_step_backward, gru_step_traced, motion_reference, rollout_backward, rollout_waypoints, GruParams,
    GruTrace, MotionReference, PlannerState, WaypointHeads, WaypointPlan, NUM_WAYPOINTS, ROUTE_INPUTS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Encoder input grid (RGB block means).
    pub enc_w: usize,
    pub enc_h: usize,
    pub encoder_hidden: usize,
    pub feature_dim: usize,
    /// Channels predicted by the toy segmentation head.
    pub seg_classes: usize,
    pub bev_pool: usize,
    pub bev_classes: usize,
    pub bev_feature: usize,
    pub bev_seed: u64,
    pub hidden: usize,
    pub mlp_hidden: usize,
    /// Route points and speed are multiplied by this before fusion.
    pub route_scale: f64,
    pub learn_beta: bool,
    pub policy: PolicyConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc_w: 16,
            enc_h: 8,
            encoder_hidden: 32,
            feature_dim: 16,
            seg_classes: 3,
            bev_pool: 8,
            bev_classes: 3,
            bev_feature: 16,
            bev_seed: 0x5eed_b0e5,
            hidden: 16,
            mlp_hidden: 16,
            route_scale: 0.1,
            learn_beta: true,
            policy: PolicyConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn encoder_input(&self) -> usize {
        self.enc_w * self.enc_h * 3
    }

    pub fn fused_dim(&self) -> usize {
        self.feature_dim + self.bev_feature + ROUTE_INPUTS
    }

    pub fn bev_projector(&self) -> BevProjector {
        BevProjector::new(BEV_ROWS, BEV_COLS, self.bev_pool, self.bev_classes, self.bev_feature, self.bev_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub config: ModelConfig,
    pub encoder: TinyEncoder,
    pub seg_head: Dense,
    pub seg_bias: Vec<f64>,
    pub depth_head: Dense,
    pub depth_bias: Vec<f64>,
    pub gru: GruParams,
    pub waypoint_heads: WaypointHeads,
    pub mlp_heads: MlpHeads,
    /// Unconstrained blend weights, `β = sigmoid(beta_raw)`, row-major.
    pub beta_raw: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub encoder: Vec<EncoderTrace>,
    pub gru: Vec<GruTrace>,
    pub h: Vec<f64>,
    pub plan: WaypointPlan,
    pub seg_prob: Vec<f64>,
    pub depth_pred: Vec<f64>,
    pub reference: Option<MotionReference>,
    pub heading_error: f64,
    pub speed_error: f64,
    pub u_lat: f64,
    pub u_lon: f64,
    pub command: Command,
    pub mlp: MlpTrace,
    pub u_mlp: ControlAction,
    pub u_pid: ControlAction,
    pub u_final: ControlAction,
    pub branch: BlendBranch,
    pub beta: [[f64; 2]; 2],
}

fn mismatch(what: &str, expected: usize, got: usize) -> LearningError {
    LearningError::ShapeMismatch(format!("{what}: expected {expected}, got {got}"))
}

fn affine_sigmoid(w: &Dense, b: &[f64], x: &[f64]) -> Vec<f64> {
    w.matvec(x).iter().zip(b).map(|(a, b)| sigmoid(a + b)).collect()
}

impl PolicyModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let cells = c.enc_w * c.enc_h;
        let encoder = TinyEncoder::random(c.encoder_input(), c.encoder_hidden, c.feature_dim, &mut rng);
        let head_scale = 1.0 / (c.feature_dim as f64).sqrt();
        let seg_head = Dense::random(cells * c.seg_classes, c.feature_dim, head_scale, &mut rng);
        let depth_head = Dense::random(cells, c.feature_dim, head_scale, &mut rng);
        let gru = GruParams::random(c.fused_dim(), c.hidden, &mut rng);
        let waypoint_heads = WaypointHeads::random(c.hidden, &mut rng);
        let mlp_heads = MlpHeads::random(c.hidden, c.mlp_hidden, &mut rng);
        Self {
            seg_bias: vec![0.0; cells * c.seg_classes],
            depth_bias: vec![0.0; cells],
            encoder,
            seg_head,
            depth_head,
            gru,
            waypoint_heads,
            mlp_heads,
            beta_raw: vec![0.0; 4],
            config,
        }
    }

    /// Same shapes, every trainable value zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, s) in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }

    pub fn beta(&self) -> [[f64; 2]; 2] {
        if self.config.learn_beta {
            [
                [sigmoid(self.beta_raw[0]), sigmoid(self.beta_raw[1])],
                [sigmoid(self.beta_raw[2]), sigmoid(self.beta_raw[3])],
            ]
        } else {
            BlendWeights::fixed().beta()
        }
    }

    /// Planner and controller parameters for closed-loop use.
    pub fn policy_params(&self) -> PolicyParams {
        PolicyParams {
            gru: self.gru.clone(),
            waypoint_heads: self.waypoint_heads.clone(),
            mlp_heads: self.mlp_heads.clone(),
            weights: BlendWeights::new(self.beta()).expect("sigmoid lies in [0, 1]"),
        }
    }

    /// Fused planner input for one frame.
    pub fn fuse(&self, f_rgb: &[f64], f_bev: &[f64], route: [LocalPoint; 2], speed: f64) -> Vec<f64> {
        let s = self.config.route_scale;
        let scaled = route.map(|p| LocalPoint::new(p.x * s, p.y * s));
        fuse_inputs(f_rgb, f_bev, scaled, speed * s)
    }

    pub fn slices(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (n, s) in self.encoder.slices() {
            out.push((format!("encoder.{n}"), s));
        }
        out.push(("seg_head.w".into(), self.seg_head.data()));
        out.push(("seg_head.b".into(), &self.seg_bias));
        out.push(("depth_head.w".into(), self.depth_head.data()));
        out.push(("depth_head.b".into(), &self.depth_bias));
        for (n, s) in self.gru.slices() {
            out.push((format!("gru.{n}"), s));
        }
        for (n, s) in self.waypoint_heads.slices() {
            out.push((format!("waypoints.{n}"), s));
        }
        for cmd in Command::ALL {
            for (n, s) in self.mlp_heads.head(cmd).slices() {
                out.push((format!("mlp.{}.{n}", cmd.as_str()), s));
            }
        }
        out.push(("beta_raw".into(), &self.beta_raw));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (n, s) in self.encoder.slices_mut() {
            out.push((format!("encoder.{n}"), s));
        }
        out.push(("seg_head.w".into(), self.seg_head.data_mut()));
        out.push(("seg_head.b".into(), &mut self.seg_bias));
        out.push(("depth_head.w".into(), self.depth_head.data_mut()));
        out.push(("depth_head.b".into(), &mut self.depth_bias));
        for (n, s) in self.gru.slices_mut() {
            out.push((format!("gru.{n}"), s));
        }
        for (n, s) in self.waypoint_heads.slices_mut() {
            out.push((format!("waypoints.{n}"), s));
        }
        for (cmd, head) in Command::ALL.into_iter().zip(self.mlp_heads.heads.iter_mut()) {
            for (n, s) in head.slices_mut() {
                out.push((format!("mlp.{}.{n}", cmd.as_str()), s));
            }
        }
        out.push(("beta_raw".into(), &mut self.beta_raw));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|(_, s)| s.len()).sum()
    }

    fn check_sample(&self, s: &TrainSample) -> Result<(), LearningError> {
        let c = &self.config;
        let cells = c.enc_w * c.enc_h;
        if s.frames.is_empty() {
            return Err(LearningError::ShapeMismatch("sample has no frames".into()));
        }
        for f in &s.frames {
            if f.rgb.len() != c.encoder_input() {
                return Err(mismatch("encoder input", c.encoder_input(), f.rgb.len()));
            }
            if f.f_bev.len() != c.bev_feature {
                return Err(mismatch("BEV feature", c.bev_feature, f.f_bev.len()));
            }
        }
        if s.seg_truth.len() != cells * c.seg_classes {
            return Err(mismatch("segmentation target", cells * c.seg_classes, s.seg_truth.len()));
        }
        if s.depth_truth.len() != cells {
            return Err(mismatch("depth target", cells, s.depth_truth.len()));
        }
        if s.wp_truth.len() != 2 * NUM_WAYPOINTS {
            return Err(mismatch("waypoint target", 2 * NUM_WAYPOINTS, s.wp_truth.len()));
        }
        Ok(())
    }

    pub fn forward(&self, s: &TrainSample) -> Result<ForwardTrace, LearningError> {
        self.check_sample(s)?;
        let c = &self.config;
        let pc = &c.policy;

        let mut encoder = Vec::with_capacity(s.frames.len());
        let mut gru = Vec::with_capacity(s.frames.len());
        let mut h = vec![0.0; c.hidden];
        for f in &s.frames {
            let enc = self.encoder.forward(&f.rgb);
            let z = self.fuse(&enc.feature, &f.f_bev, f.route, f.speed);
            let (h_new, trace) = gru_step_traced(&z, &h, &self.gru)?;
            h = h_new;
            encoder.push(enc);
            gru.push(trace);
        }
        let newest = s.frames.last().expect("non-empty");
        let feat = &encoder.last().expect("non-empty").feature;
        let seg_prob = affine_sigmoid(&self.seg_head, &self.seg_bias, feat);
        let depth_pred = affine_sigmoid(&self.depth_head, &self.depth_bias, feat);

        let state = PlannerState { h };
        let plan = rollout_waypoints(&state, &self.waypoint_heads)?;
        let reference = motion_reference(&plan, pc.gamma).ok();

        let (mut heading_error, mut speed_error, mut u_lat, mut u_lon) = (0.0, 0.0, 0.0, 0.0);
        let u_pid = match reference {
            Some(r) => {
                let lat = PidState::new(pc.lateral);
                let lon = PidState::new(pc.longitudinal);
                let out = pid_control(r.relative_bearing(), r.v_ref, 0.0, newest.speed, &lat, &lon, pc.dt)?;
                heading_error = wrap_angle(r.relative_bearing());
                speed_error = r.v_ref - newest.speed;
                u_lat = out.u_lat;
                u_lon = out.u_lon;
                out.action
            }
            None => ControlAction::ZERO,
        };

        let command = classify_command(newest.route[0], newest.route[1], pc.thresholds.tau1, pc.thresholds.tau2).command;
        let mlp = self.mlp_heads.head(command).forward(&state.h)?;
        let u_mlp = ControlAction::from_array(mlp.raw);
        let beta = self.beta();
        let weights = BlendWeights::new(beta).expect("sigmoid lies in [0, 1]");
        let (u_final, branch) = blend(u_mlp, u_pid, &weights, pc.epsilon, pc.gate_norm);

        Ok(ForwardTrace {
            encoder,
            gru,
            h: state.h,
            plan,
            seg_prob,
            depth_pred,
            reference,
            heading_error,
            speed_error,
            u_lat,
            u_lon,
            command,
            mlp,
            u_mlp,
            u_pid,
            u_final,
            branch,
            beta,
        })
    }

    pub fn losses(&self, t: &ForwardTrace, s: &TrainSample, weights: TaskWeights) -> Result<LossReport, LearningError> {
        let report = LossReport::compose(
            seg_loss(&t.seg_prob, &s.seg_truth)?,
            l1l2(&t.depth_pred, &s.depth_truth)?,
            l1l2(&t.plan.flatten(), &s.wp_truth)?,
            l1l2(&t.u_final.to_array(), &s.control)?,
            weights,
        );
        if !report.l_total.is_finite() {
            return Err(LearningError::NonFiniteLoss);
        }
        Ok(report)
    }

    pub fn evaluate(&self, s: &TrainSample, weights: TaskWeights) -> Result<LossReport, LearningError> {
        let t = self.forward(s)?;
        self.losses(&t, s, weights)
    }

    /// Loss and gradient of `l_total` for one sample.
    pub fn backward(&self, s: &TrainSample, weights: TaskWeights) -> Result<(LossReport, PolicyModel), LearningError> {
        let t = self.forward(s)?;
        let report = self.losses(&t, s, weights)?;
        let [a_p, a_wp, a_c] = weights.0;
        let c = &self.config;
        let pc = &c.policy;
        let mut g = self.zeros_like();
        let k = s.frames.len();
        let feat = &t.encoder[k - 1].feature;

        // perception heads on the newest frame
        let mut d_feat_newest = vec![0.0; c.feature_dim];
        let d_seg: Vec<f64> = seg_loss_grad(&t.seg_prob, &s.seg_truth)?
            .iter()
            .zip(&t.seg_prob)
            .map(|(d, p)| a_p * d * p * (1.0 - p))
            .collect();
        g.seg_head.add_outer(&d_seg, feat);
        crate::linalg::add_assign(&mut g.seg_bias, &d_seg);
        crate::linalg::add_assign(&mut d_feat_newest, &self.seg_head.matvec_t(&d_seg));
        let d_depth: Vec<f64> = l1l2_grad(&t.depth_pred, &s.depth_truth)?
            .iter()
            .zip(&t.depth_pred)
            .map(|(d, p)| a_p * d * p * (1.0 - p))
            .collect();
        g.depth_head.add_outer(&d_depth, feat);
        crate::linalg::add_assign(&mut g.depth_bias, &d_depth);
        crate::linalg::add_assign(&mut d_feat_newest, &self.depth_head.matvec_t(&d_depth));

        // waypoints
        let mut d_points: Vec<f64> = l1l2_grad(&t.plan.flatten(), &s.wp_truth)?
            .into_iter()
            .map(|d| a_wp * d)
            .collect();

        // control through the blend
        let d_u: Vec<f64> = l1l2_grad(&t.u_final.to_array(), &s.control)?
            .into_iter()
            .map(|d| a_c * d)
            .collect();
        let mut d_mlp = [0.0; 3];
        let mut d_pid = [0.0; 3];
        let mut d_beta = [[0.0; 2]; 2];
        match t.branch {
            BlendBranch::Blended => {
                let m = t.u_mlp.to_array();
                let p = t.u_pid.to_array();
                for i in 0..3 {
                    let col = if i == 2 { 1 } else { 0 };
                    let pre = t.beta[0][col] * m[i] + t.beta[1][col] * p[i];
                    if pre.abs() >= 1.0 {
                        continue;
                    }
                    d_mlp[i] = d_u[i] * t.beta[0][col];
                    d_pid[i] = d_u[i] * t.beta[1][col];
                    d_beta[0][col] += d_u[i] * m[i];
                    d_beta[1][col] += d_u[i] * p[i];
                }
            }
            BlendBranch::MlpOnly => d_mlp.copy_from_slice(&d_u),
            BlendBranch::PidOnly => d_pid.copy_from_slice(&d_u),
            BlendBranch::Stopped => {}
        }
        if c.learn_beta {
            for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let b = t.beta[i][j];
                g.beta_raw[2 * i + j] = d_beta[i][j] * b * (1.0 - b);
            }
        }

        let mut d_h = self
            .mlp_heads
            .head(t.command)
            .backward(&t.mlp, d_mlp, g.mlp_heads.head_mut(t.command));

        if let Some(r) = t.reference {
            let pass = |u: f64| if u.abs() < 1.0 { 1.0 } else { 0.0 };
            let d_ulat = (d_pid[0] + d_pid[2]) * pass(t.u_lat);
            let d_ulon = d_pid[1] * pass(t.u_lon);
            let integral_pass = |gains: &crate::controller::PidGains, e: f64| {
                if (e * pc.dt).abs() < gains.integral_limit.abs() {
                    gains.ki * pc.dt
                } else {
                    0.0
                }
            };
            let d_e = d_ulat * (pc.lateral.kp + integral_pass(&pc.lateral, t.heading_error));
            let d_v = d_ulon * (pc.longitudinal.kp + integral_pass(&pc.longitudinal, t.speed_error));

            // heading error = π/2 − atan2(aim.y, aim.x), wrapped
            let aim = r.aim;
            let r2 = aim.x * aim.x + aim.y * aim.y;
            let d_aim = [d_e * aim.y / r2, -d_e * aim.x / r2];
            let pts = t.plan.points();
            let (p1, p2) = (pts[0], pts[1]);
            for (axis, d) in d_aim.iter().enumerate() {
                d_points[axis] += 0.5 * d;
                d_points[2 + axis] += 0.5 * d;
            }
            let gap = (p2.x - p1.x).hypot(p2.y - p1.y);
            if gap > 0.0 {
                let gx = d_v * pc.gamma * (p2.x - p1.x) / gap;
                let gy = d_v * pc.gamma * (p2.y - p1.y) / gap;
                d_points[0] -= gx;
                d_points[1] -= gy;
                d_points[2] += gx;
                d_points[3] += gy;
            }
        }

        let d_h_plan = rollout_backward(&t.h, &self.waypoint_heads, &d_points, &mut g.waypoint_heads);
        crate::linalg::add_assign(&mut d_h, &d_h_plan);

        for step in (0..k).rev() {
            let (d_z, d_prev) = gru_step_backward(&t.gru[step], &self.gru, &d_h, &mut g.gru);
            d_h = d_prev;
            let mut d_feat = d_z[..c.feature_dim].to_vec();
            if step == k - 1 {
                crate::linalg::add_assign(&mut d_feat, &d_feat_newest);
            }
            self.encoder.backward(&t.encoder[step], &d_feat, &mut g.encoder);
        }
        Ok((report, g))
    }

    /// Mean loss and gradient over a batch. Per-sample work runs in
    /// parallel; the reduction is sequential in sample order.
    pub fn batch_backward(&self, batch: &[&TrainSample], weights: TaskWeights) -> Result<(LossReport, PolicyModel), LearningError> {
        if batch.is_empty() {
            return Err(LearningError::EmptySplit);
        }
        let parts: Vec<(LossReport, PolicyModel)> = batch
            .par_iter()
            .map(|s| self.backward(s, weights))
            .collect::<Result<_, _>>()?;
        let n = batch.len() as f64;
        let mut total = self.zeros_like();
        let reports: Vec<LossReport> = parts.iter().map(|(r, _)| *r).collect();
        for (_, g) in &parts {
            for ((_, acc), (_, gs)) in total.slices_mut().into_iter().zip(g.slices()) {
                for (a, v) in acc.iter_mut().zip(gs) {
                    *a += v;
                }
            }
        }
        for (_, acc) in total.slices_mut() {
            acc.iter_mut().for_each(|v| *v /= n);
        }
        Ok((LossReport::mean(&reports, weights), total))
    }

    pub fn to_tensorfile(&self) -> Result<TensorFile, TensorFileError> {
        let mut f = TensorFile::new();
        let cfg = toml::to_string(&self.config).expect("config serializes");
        f.insert("config", Tensor::u8(&[cfg.len()], cfg.into_bytes()))?;
        for (name, s) in self.slices() {
            f.insert(name, Tensor::f64(&[s.len()], s.to_vec()))?;
        }
        Ok(f)
    }

    pub fn from_tensorfile(f: &TensorFile) -> Result<Self, LearningError> {
        let cfg = std::str::from_utf8(f.u8s("config")?)
            .map_err(|_| LearningError::Checkpoint("config is not UTF-8".into()))?;
        let config: ModelConfig =
            toml::from_str(cfg).map_err(|e| LearningError::Checkpoint(format!("config: {e}")))?;
        let mut model = PolicyModel::new(config, 0);
        for (name, slot) in model.slices_mut() {
            let data = f.f64s(&name)?;
            if data.len() != slot.len() {
                return Err(LearningError::Checkpoint(format!(
                    "{name}: {} values, expected {}",
                    data.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(data);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), LearningError> {
        self.to_tensorfile()?.save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, LearningError> {
        Self::from_tensorfile(&TensorFile::load(path)?)
    }
}
