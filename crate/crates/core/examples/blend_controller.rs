//! The PID tracker, the command-specific MLP and the gated blend on a
//! handful of hand-picked cases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqnav::controller::*;
use seqnav::geodesy::Command;
use seqnav::planner::PlannerState;

fn main() -> Result<(), ControlError> {
    let lat = PidState::new(PidGains::lateral());
    let lon = PidState::new(PidGains::longitudinal());
    // aim 0.2 rad to the right, want 0.8 m/s, currently at 0.5 m/s
    let pid = pid_control(0.2, 0.8, 0.0, 0.5, &lat, &lon, 1.0 / 30.0)?;
    println!("pid  {:?}", pid.action);

    let heads = MlpHeads::random(6, 8, &mut ChaCha8Rng::seed_from_u64(3));
    let h = PlannerState { h: vec![0.4, -0.1, 0.3, 0.0, 0.7, -0.5] };
    let mlp = mlp_control(&h, Command::Straight, &heads)?;
    println!("mlp  {:?}", mlp);

    let w = BlendWeights::new([[0.7, 0.3], [0.3, 0.7]])?;
    for eps in [0.01, 0.4, 0.5] {
        let (u, branch) = blend(mlp, pid.action, &w, eps, GateNorm::L2);
        println!("eps {eps:<4} -> {:<8} {:?}", branch.as_str(), u);
    }
    Ok(())
}
