mod common;

use proptest::prelude::*;
use seqnav::bevmap::*;

#[test]
fn pipeline_matches_brute_force_reference() {
    common::criterion_bev().assert();
}

#[test]
fn fixture_depth_back_projects_per_pixel() {
    // 4×4 image, fx = fy = 2, principal point (2, 2), camera 1 m up looking forward
    let intr = CameraIntrinsics::new(2.0, 2.0, 2.0, 2.0, 4, 4).unwrap();
    let ext = CameraToRobot::forward_mounted(1.0, 0.0);
    let depth: Vec<f32> = (0..16).map(|k| 1.0 + k as f32 * 0.5).collect();
    let pts = back_project(&DepthImage::new(4, 4, depth.clone()).unwrap(), &intr, &ext).unwrap();
    assert_eq!(pts.len(), 16);
    for p in &pts {
        let (u, v) = p.pixel;
        let d = depth[v * 4 + u] as f64;
        // camera (x right, y down, z forward) → robot (x forward, y left, z up)
        let cam = [(u as f64 - 2.0) * d / 2.0, (v as f64 - 2.0) * d / 2.0, d];
        assert_eq!(p.point, [cam[2], -cam[0], 1.0 - cam[1]]);
    }
}

#[test]
fn principal_point_lies_on_the_axis() {
    let intr = CameraIntrinsics::new(5.0, 5.0, 1.0, 1.0, 3, 3).unwrap();
    let mut depth = vec![f32::NAN; 9];
    depth[4] = 2.0;
    let pts = back_project(&DepthImage::new(3, 3, depth).unwrap(), &intr, &CameraToRobot::identity()).unwrap();
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0].point, [0.0, 0.0, 2.0]);
    let none = back_project(&DepthImage::new(3, 3, vec![0.0; 9]).unwrap(), &intr, &CameraToRobot::identity()).unwrap();
    assert!(none.is_empty());
}

#[test]
fn grid_index_corners() {
    let g = GridSpec::default();
    assert_eq!(grid_index(0.01, -16.0, &g), Some((0, 0)));
    assert_eq!(grid_index(15.99, 15.99, &g), Some((127, 255)));
    assert_eq!(grid_index(-1.0, 0.0, &g), None);
    assert_eq!(grid_index(0.0, 0.0, &g), None);
    assert_eq!(grid_index(16.0, 0.0, &g), None);
    assert_eq!(grid_index(1.0, 16.0, &g), None);
}

#[test]
fn splat_examples() {
    let g = GridSpec::default();
    let cfg = SplatConfig::default();
    assert!(splat(&[], &g, &cfg).unwrap().data().iter().all(|v| *v == 0.0));
    let (x, y) = g.cell_center(10, 128);
    let one = splat(&[LabeledPoint { point: [x, y, 0.0], class: 3 }], &g, &cfg).unwrap();
    let cells: Vec<_> = one.occupied_cells().map(|(i, j, c)| (i, j, c.to_vec())).collect();
    assert_eq!(cells.len(), 1);
    assert_eq!((cells[0].0, cells[0].1), (10, 128));
    assert_eq!(cells[0].2.iter().position(|v| *v == 1.0), Some(3));
    assert_eq!(cells[0].2.iter().filter(|v| **v != 0.0).count(), 1);
    let three: Vec<_> = [2, 2, 7].iter().map(|&class| LabeledPoint { point: [x, y, 0.0], class }).collect();
    assert_eq!(splat(&three, &g, &cfg).unwrap().get(10, 128, 2), 1.0);
}

#[test]
fn ema_examples() {
    let g = GridSpec { rows: 2, cols: 2, classes: 2, ..Default::default() };
    let cur = BevGrid::from_data(g, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    let prev = BevGrid::zeros(g);
    let half = ema_fuse(&cur, &prev, 0.5).unwrap();
    assert_eq!(half.data(), &[0.5, 0.0, 0.5, 0.0, 0.5, 0.0, 0.5, 0.0]);
    assert_eq!(ema_fuse(&cur, &prev, 1.0).unwrap(), cur);
    assert_eq!(ema_fuse(&cur, &cur, 0.3).unwrap(), cur);
    assert!(matches!(ema_fuse(&cur, &prev, 0.0), Err(BevError::AlphaOutOfRange(_))));
}

#[test]
fn flat_floor_gives_a_contiguous_band() {
    // a fronto-parallel wall of one class at depth 6 m splats into one row
    let (w, h) = (256, 32);
    let intr = CameraIntrinsics::from_fov(w, h, 90f64.to_radians()).unwrap();
    let ext = CameraToRobot::forward_mounted(0.5, 0.0);
    let depth = DepthImage::new(w, h, vec![6.0; w * h]).unwrap();
    let seg = SegScores::from_labels(w, h, NUM_CLASSES, &vec![4; w * h]).unwrap();
    let grid = build_bev(&seg, &depth, &intr, &ext, None, &BevConfig::default()).unwrap();
    let cells: Vec<(usize, usize)> = grid.occupied_cells().map(|(i, j, _)| (i, j)).collect();
    assert!(cells.iter().all(|&(i, _)| i == 48));
    let mut cols: Vec<usize> = cells.iter().map(|c| c.1).collect();
    cols.sort();
    assert!(cols.windows(2).all(|w| w[1] == w[0] + 1));
    // 90° field of view at 6 m spans about ±6 m laterally
    let pts = back_project(&depth, &intr, &ext).unwrap();
    let ys = pts.iter().map(|p| p.point[1]);
    let lo = grid_index(6.0, ys.clone().fold(f64::INFINITY, f64::min), &GridSpec::default()).unwrap().1;
    let hi = grid_index(6.0, ys.fold(f64::NEG_INFINITY, f64::max), &GridSpec::default()).unwrap().1;
    assert_eq!((cols[0], *cols.last().unwrap()), (lo, hi));
    assert!((95..=97).contains(&cols.len()));
    assert!(grid.occupied_cells().all(|(_, _, c)| c[4] == 1.0));
    // fusing the same frame twice is a fixed point
    let again = build_bev(&seg, &depth, &intr, &ext, Some(&grid), &BevConfig::default()).unwrap();
    assert_eq!(again, grid);
}

#[test]
fn invalid_cameras_are_rejected() {
    assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
    assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
    let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    assert!(CameraToRobot::new(skew, [0.0; 3]).is_err());
    let mirror = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    assert!(CameraToRobot::new(mirror, [0.0; 3]).is_err());
}

fn small_spec() -> impl Strategy<Value = GridSpec> {
    (1usize..20, 1usize..20, 1usize..6, 0.1..1.0f64, 0.1..1.0f64, 0.5..5.0f64).prop_map(|(rows, cols, classes, cx, cy, hw)| GridSpec {
        rows,
        cols,
        classes,
        cell_x: cx,
        cell_y: cy,
        lateral_half_width: hw,
    })
}

fn points(classes: usize) -> impl Strategy<Value = Vec<LabeledPoint>> {
    prop::collection::vec(
        (-1.0..12.0f64, -6.0..6.0f64, 0usize..classes).prop_map(|(x, y, class)| LabeledPoint { point: [x, y, 0.0], class }),
        0..200,
    )
}

proptest! {
    #[test]
    fn splats_are_channel_sparse((spec, pts) in small_spec().prop_flat_map(|s| (Just(s), points(s.classes)))) {
        let grid = splat(&pts, &spec, &SplatConfig::default()).unwrap();
        for i in 0..spec.rows {
            for j in 0..spec.cols {
                let cell = grid.cell(i, j);
                let nz: Vec<f32> = cell.iter().copied().filter(|v| *v != 0.0).collect();
                prop_assert!(nz.is_empty() || nz == vec![1.0]);
            }
        }
    }

    #[test]
    fn fused_channel_sums_stay_in_unit_interval(
        (spec, clouds) in small_spec().prop_flat_map(|s| (Just(s), prop::collection::vec(points(s.classes), 1..6))),
        alphas in prop::collection::vec(0.01..=1.0f64, 6)
    ) {
        let mut fused: Option<BevGrid> = None;
        for (pts, a) in clouds.iter().zip(&alphas) {
            let cur = splat(pts, &spec, &SplatConfig::default()).unwrap();
            fused = Some(match fused {
                Some(prev) => ema_fuse(&cur, &prev, *a).unwrap(),
                None => cur,
            });
        }
        let g = fused.unwrap();
        for i in 0..spec.rows {
            for j in 0..spec.cols {
                let s: f32 = g.cell(i, j).iter().sum();
                prop_assert!((0.0..=1.0 + 1e-6).contains(&s), "{s}");
            }
        }
    }

    #[test]
    fn alpha_one_returns_current(spec in small_spec(), seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = spec.rows * spec.cols * spec.classes;
        let a = BevGrid::from_data(spec, (0..n).map(|_| rng.gen_range(0.0f32..=1.0)).collect()).unwrap();
        let b = BevGrid::from_data(spec, (0..n).map(|_| rng.gen_range(0.0f32..=1.0)).collect()).unwrap();
        let out = ema_fuse(&a, &b, 1.0).unwrap();
        prop_assert!(out.data().iter().zip(a.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn cell_centres_index_themselves(spec in small_spec()) {
        for i in 0..spec.rows {
            for j in 0..spec.cols {
                let (x, y) = spec.cell_center(i, j);
                prop_assert_eq!(grid_index(x, y, &spec), Some((i, j)));
            }
        }
    }

    #[test]
    fn unique_majorities_ignore_point_order(
        (spec, pts) in small_spec().prop_flat_map(|s| (Just(s), points(s.classes))),
        perm_seed in 0u64..1000
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        // keep only cells whose majority is unique
        let mut tallies = std::collections::HashMap::<(usize, usize), Vec<usize>>::new();
        for p in &pts {
            if let Some(c) = grid_index(p.point[0], p.point[1], &spec) {
                tallies.entry(c).or_insert_with(|| vec![0; spec.classes])[p.class] += 1;
            }
        }
        let unique = |t: &Vec<usize>| {
            let top = *t.iter().max().unwrap();
            t.iter().filter(|n| **n == top).count() == 1
        };
        let kept: Vec<LabeledPoint> = pts
            .iter()
            .copied()
            .filter(|p| grid_index(p.point[0], p.point[1], &spec).is_none_or(|c| unique(&tallies[&c])))
            .collect();
        let mut shuffled = kept.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let cfg = SplatConfig::default();
        prop_assert_eq!(splat(&kept, &spec, &cfg).unwrap(), splat(&shuffled, &spec, &cfg).unwrap());
    }

    #[test]
    fn reprojection_recovers_pixels(seed in 0u64..10_000) {
        let f = common::random_bev_frame(seed);
        for p in back_project(&f.depth, &f.intr, &f.ext).unwrap() {
            let (u, v) = reproject(p.point, &f.intr, &f.ext);
            prop_assert!((u - p.pixel.0 as f64).abs() < 1e-6 && (v - p.pixel.1 as f64).abs() < 1e-6);
        }
    }
}

#[test]
fn rendering_is_deterministic_png() {
    let f = common::random_bev_frame(11);
    let grid = build_bev(&f.seg, &f.depth, &f.intr, &f.ext, None, &f.cfg).unwrap();
    let a = encode_png(&render_rgb(&grid));
    assert_eq!(a, encode_png(&render_rgb(&grid)));
    assert_eq!(&a[1..4], b"PNG");
}
