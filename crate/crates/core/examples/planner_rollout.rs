//! Feed a short sequence of fused inputs through the GRU planner and roll
//! out waypoints plus heading/speed references.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqnav::geodesy::LocalPoint;
use seqnav::planner::*;

fn main() -> Result<(), PlannerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (f_dim, hidden) = (4, 8);
    let input = 2 * f_dim + ROUTE_INPUTS;
    let gru = GruParams::random(input, hidden, &mut rng);
    let heads = WaypointHeads::random(hidden, &mut rng);

    let mut h = PlannerState::zeros(hidden);
    for t in 0..3 {
        let f_rgb = vec![0.1 * t as f64; f_dim];
        let f_bev = vec![-0.2; f_dim];
        let route = [LocalPoint::new(0.3, 5.0), LocalPoint::new(0.8, 10.0)];
        let z = fuse_inputs(&f_rgb, &f_bev, route, 0.6);
        h = gru_step(&z, &h, &gru)?;
    }
    println!("h = {:.3?}", h.h);

    let plan = rollout_waypoints(&h, &heads)?;
    for (i, p) in plan.points().iter().enumerate() {
        println!("w{} = ({:+.3}, {:+.3})", i + 1, p.x, p.y);
    }
    match motion_reference(&plan, 1.0) {
        Ok(r) => println!("theta_ref {:.3} rad, v_ref {:.3}", r.theta_ref, r.v_ref),
        Err(e) => println!("no reference: {e}"),
    }
    Ok(())
}
