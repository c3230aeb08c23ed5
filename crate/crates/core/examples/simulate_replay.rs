//! Closed-loop run through a GNSS bias zone, saved to disk and replayed as
//! SVG/PNG artifacts.
//!
//! cargo run --release --example simulate_replay -- /tmp/episode

use seqnav::dataset::{BiasZone, PathShape, SceneSpec};
use seqnav::simulator::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "episode".into());
    let spec = SceneSpec {
        path: PathShape::SCurve { length: 60.0, amplitude: 2.0, wavelength: 40.0 },
        obstacles: 0,
        ..Default::default()
    };
    let scenario = Scenario::from_spec(&spec, 1)?;
    let cfg = SimConfig {
        bias_zones: vec![BiasZone::along_path(scenario.path(), 20.0, 30.0, 8.0, 5.0)],
        ..Default::default()
    };
    let log = run_episode(&scenario, &mut RouteFollower::default(), &cfg)?;
    let s = log.summary;
    println!("{} after {} ticks, max cross-track {:.2} m", s.outcome.as_str(), s.ticks, s.max_cross_track);

    for (lo, hi) in [(0.0, 20.0), (20.0, 30.0), (30.0, 40.0), (40.0, f64::INFINITY)] {
        if let Some(e) = log.max_cross_track_between(lo, hi) {
            println!("  progress [{lo:>4}, {hi:>4}) m: max {e:.2} m");
        }
    }

    save_episode(&out, &log)?;
    let reloaded = load_episode(&out)?;
    assert_eq!(reloaded, log);
    let n = write_artifacts(std::path::Path::new(&out).join("images"), &reloaded)?;
    println!("saved to {out}, {n} replay files");
    Ok(())
}
