//! Closed-loop simulation of the holonomic base in the synthetic world.

mod episode;
mod kinematics;
pub mod replay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BiasZone, DatasetError};

pub use episode::{
    run_episode, BevSnapshot, EpisodeLog, EpisodeSummary, ModelPolicy, Outcome, Policy, RouteFollower, Scenario, TickInput,
    TrajectoryRow, ZeroPolicy,
};
pub use kinematics::{step, Kinematics, RobotState};
pub use replay::{load_episode, replay, save_episode, write_artifacts};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("bad log: {0}")]
    BadLog(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geo(#[from] crate::geodesy::GeoError),
    #[error(transparent)]
    Control(#[from] crate::controller::ControlError),
    #[error(transparent)]
    Bev(#[from] crate::bevmap::BevError),
    #[error(transparent)]
    Records(#[from] crate::dataset::records::RecordError),
    #[error(transparent)]
    TensorFile(#[from] crate::dataset::tensorfile::TensorFileError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub kinematics: Kinematics,
    pub gnss_sigma: f64,
    pub gnss_rate: f64,
    pub bias_zones: Vec<BiasZone>,
    pub goal_radius: f64,
    pub max_ticks: u64,
    pub max_cross_track: f64,
    /// Keep the policy's BEV grid every this many ticks; 0 keeps none.
    pub snapshot_every: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 30.0,
            kinematics: Kinematics::default(),
            gnss_sigma: 0.0,
            gnss_rate: 1.0,
            bias_zones: Vec::new(),
            goal_radius: 1.5,
            max_ticks: 30 * 300,
            max_cross_track: 8.0,
            snapshot_every: 0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::ConfigMismatch(m.to_string()));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if !(self.goal_radius > 0.0) || !(self.max_cross_track > 0.0) {
            return bad("radii must be positive");
        }
        if !(self.gnss_rate > 0.0) || self.gnss_rate > 1.0 / self.dt + 1e-9 {
            return bad("GNSS rate must be positive and at most the tick rate");
        }
        if !(self.gnss_sigma >= 0.0) {
            return bad("GNSS sigma must be non-negative");
        }
        if !(self.kinematics.v_max > 0.0) || !(self.kinematics.omega_max > 0.0) {
            return bad("speed limits must be positive");
        }
        Ok(())
    }
}
