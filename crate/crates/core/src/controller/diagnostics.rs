//! Per-tick diagnostics rows.

use super::{BlendBranch, ControlAction, Diagnostics};
use crate::dataset::records::{fmt_f64, fmt_opt_f64, FieldReader, Record, RecordError};
use crate::geodesy::{Command, LocalPoint};
use crate::planner::NUM_WAYPOINTS;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub timestamp: f64,
    pub command: Command,
    pub waypoints: Vec<LocalPoint>,
    pub theta_ref: Option<f64>,
    pub v_ref: Option<f64>,
    pub u_mlp: ControlAction,
    pub u_pid: ControlAction,
    pub u_final: ControlAction,
    pub branch: BlendBranch,
}

impl DiagnosticsRecord {
    pub fn from_diagnostics(timestamp: f64, d: &Diagnostics) -> Self {
        Self {
            timestamp,
            command: d.command,
            waypoints: d.plan.points().to_vec(),
            theta_ref: d.reference.map(|r| r.theta_ref),
            v_ref: d.reference.map(|r| r.v_ref),
            u_mlp: d.u_mlp,
            u_pid: d.u_pid,
            u_final: d.u_final,
            branch: d.branch,
        }
    }
}

const ACTIONS: [&str; 3] = ["u_mlp", "u_pid", "u_final"];
const AXES: [&str; 3] = ["x", "y", "theta"];

fn raw_action(f: &FieldReader<'_>, prefix: &str) -> Result<ControlAction, RecordError> {
    // fields were clamped when written; read them back verbatim
    Ok(ControlAction {
        x: f.f64(&format!("{prefix}_x"))?,
        y: f.f64(&format!("{prefix}_y"))?,
        theta: f.f64(&format!("{prefix}_theta"))?,
    })
}

impl Record for DiagnosticsRecord {
    const KIND: &'static str = "diagnostics";

    fn header() -> Vec<String> {
        let mut h = vec!["timestamp".to_string(), "command".to_string()];
        for l in 1..=NUM_WAYPOINTS {
            h.push(format!("wp{l}_x"));
            h.push(format!("wp{l}_y"));
        }
        h.push("theta_ref".into());
        h.push("v_ref".into());
        for a in ACTIONS {
            for ax in AXES {
                h.push(format!("{a}_{ax}"));
            }
        }
        h.push("branch".into());
        h
    }

    fn to_fields(&self) -> Vec<String> {
        let mut v = vec![fmt_f64(self.timestamp), self.command.as_str().to_string()];
        for l in 0..NUM_WAYPOINTS {
            let p = self.waypoints.get(l).copied().unwrap_or(LocalPoint::ORIGIN);
            v.push(fmt_f64(p.x));
            v.push(fmt_f64(p.y));
        }
        v.push(fmt_opt_f64(self.theta_ref));
        v.push(fmt_opt_f64(self.v_ref));
        for a in [self.u_mlp, self.u_pid, self.u_final] {
            v.extend(a.to_array().map(fmt_f64));
        }
        v.push(self.branch.as_str().to_string());
        v
    }

    fn from_fields(f: &FieldReader<'_>) -> Result<Self, RecordError> {
        let command = f.str("command")?;
        let command = Command::parse(command).ok_or_else(|| f.err("command", "unknown command"))?;
        let waypoints = (1..=NUM_WAYPOINTS)
            .map(|l| Ok(LocalPoint::new(f.f64(&format!("wp{l}_x"))?, f.f64(&format!("wp{l}_y"))?)))
            .collect::<Result<Vec<_>, RecordError>>()?;
        let branch = BlendBranch::parse(f.str("branch")?).ok_or_else(|| f.err("branch", "unknown branch"))?;
        Ok(Self {
            timestamp: f.f64("timestamp")?,
            command,
            waypoints,
            theta_ref: f.opt_f64("theta_ref")?,
            v_ref: f.opt_f64("v_ref")?,
            u_mlp: raw_action(f, "u_mlp")?,
            u_pid: raw_action(f, "u_pid")?,
            u_final: raw_action(f, "u_final")?,
            branch,
        })
    }
}
