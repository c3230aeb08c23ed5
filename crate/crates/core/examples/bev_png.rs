//! Render one synthetic frame, lift it into a bird's-eye grid, fuse a few
//! frames and write the result as a PNG.
//!
//! cargo run --example bev_png -- out.png

use seqnav::bevmap::{build_bev, encode_png, render_rgb, BevConfig, SegScores};
use seqnav::dataset::{synth_route, PathShape, SceneSpec, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "bev.png".into());
    let spec = SceneSpec {
        path: PathShape::SCurve { length: 20.0, amplitude: 2.0, wavelength: 20.0 },
        image_width: 128,
        image_height: 64,
        fps: 5.0,
        ..Default::default()
    };
    let route = synth_route(&spec, 1, "demo", Split::Test)?;
    let cam = spec.camera();
    let cfg = BevConfig::default();

    let mut grid = None;
    for f in route.frames.iter().take(4) {
        // sky pixels (255) have no depth, so any class will do
        let labels: Vec<u8> = f.labels.iter().map(|&l| if l == 255 { 0 } else { l }).collect();
        let seg = SegScores::from_labels(f.width, f.height, seqnav::bevmap::NUM_CLASSES, &labels)?;
        grid = Some(build_bev(&seg, &f.depth, &cam.intrinsics, &cam.extrinsics, grid.as_ref(), &cfg)?);
    }
    let grid = grid.unwrap();
    println!("{} occupied cells", grid.occupied_cells().count());
    std::fs::write(&out, encode_png(&render_rgb(&grid)))?;
    println!("wrote {out}");
    Ok(())
}
