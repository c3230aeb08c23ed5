//! Write train/val/test splits of synthetic routes and inspect one of them.
//!
//! cargo run --example generate_dataset -- /tmp/seqnav-data

use seqnav::dataset::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "seqnav-data".into());
    let base = SceneSpec {
        path: PathShape::Straight { length: 20.0 },
        fps: 5.0,
        gnss_sigma: 0.5,
        ..Default::default()
    };
    let dirs = generate_splits(&root, &base, SplitCounts { train: 3, val: 1, test: 1 }, 42)?;
    for d in &dirs {
        let meta = load_meta(d)?;
        println!("{:<40} {:>4} frames  {:?}", d.display(), meta.frames, meta.spec.path);
    }

    let route = load_route(&dirs[0])?;
    let f = &route.frames[route.len() / 2];
    println!(
        "frame t={:.1}s speed {:.2} m/s control {:?} last waypoint {:?}",
        f.timestamp,
        f.speed,
        f.control,
        f.wp_truth.points().last().unwrap()
    );
    println!("{} windows of 3 frames", window(&route, 3)?.len());
    Ok(())
}
