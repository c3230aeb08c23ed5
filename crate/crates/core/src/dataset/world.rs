//! Ground-plane world with a road polyline and cylindrical obstacles, and a
//! ray-casting camera renderer over it.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bevmap::{CameraIntrinsics, CameraToRobot, DepthImage};
use crate::simulator::RobotState;

pub const CLASS_ROAD: u8 = 0;
pub const CLASS_GRASS: u8 = 1;
pub const CLASS_OBSTACLE: u8 = 2;
/// Label for pixels with no surface within range.
pub const CLASS_SKY: u8 = 255;
/// Classes the synthetic world actually produces.
pub const WORLD_CLASSES: usize = 3;

/// Piecewise-linear path in the local east/north frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
}

/// Closest point on a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    pub distance: f64,
    /// Positive when the query lies to the right of the travel direction.
    pub signed_offset: f64,
}

impl Polyline {
    /// Drops consecutive duplicates; `None` if fewer than two distinct points remain.
    pub fn new(points: Vec<[f64; 2]>) -> Option<Self> {
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(points.len());
        for p in points {
            if !p[0].is_finite() || !p[1].is_finite() {
                return None;
            }
            if pts.last().is_none_or(|q| q[0] != p[0] || q[1] != p[1]) {
                pts.push(p);
            }
        }
        if pts.len() < 2 {
            return None;
        }
        let mut cumulative = vec![0.0];
        for w in pts.windows(2) {
            let last = *cumulative.last().expect("non-empty");
            cumulative.push(last + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
        }
        Some(Self {
            points: pts,
            cumulative,
        })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().expect("non-empty")
    }

    fn segment_at(&self, s: f64) -> usize {
        let idx = self.cumulative.partition_point(|&c| c <= s);
        idx.clamp(1, self.points.len() - 1) - 1
    }

    /// Point at arc length `s`; beyond either end the end segments are
    /// extended linearly.
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let len = self.cumulative[i + 1] - self.cumulative[i];
        let t = (s - self.cumulative[i]) / len;
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    /// Compass heading of the travel direction at arc length `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        (b[0] - a[0]).atan2(b[1] - a[1])
    }

    pub fn project(&self, p: [f64; 2]) -> Projection {
        let mut best = Projection {
            s: 0.0,
            distance: f64::INFINITY,
            signed_offset: 0.0,
        };
        for i in 0..self.points.len() - 1 {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
            let d = (p[0] - qx).hypot(p[1] - qy);
            if d < best.distance {
                // right of travel when the cross product (dir × offset) is negative
                let cross = dx * (p[1] - a[1]) - dy * (p[0] - a[0]);
                best = Projection {
                    s: self.cumulative[i] + t * len2.sqrt(),
                    distance: d,
                    signed_offset: if cross < 0.0 { d } else { -d },
                };
            }
        }
        best
    }

    pub fn distance(&self, p: [f64; 2]) -> f64 {
        self.project(p).distance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraToRobot,
    pub max_depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB.
    pub rgb: Vec<u8>,
    pub depth: DepthImage,
    /// Class id per pixel, [`CLASS_SKY`] where nothing was hit.
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub path: Polyline,
    pub road_half_width: f64,
    pub obstacles: Vec<Obstacle>,
    pub camera: CameraModel,
}

fn base_color(class: u8) -> [f64; 3] {
    match class {
        CLASS_ROAD => [112.0, 112.0, 118.0],
        CLASS_GRASS => [58.0, 142.0, 62.0],
        CLASS_OBSTACLE => [156.0, 82.0, 44.0],
        _ => [150.0, 190.0, 235.0],
    }
}

impl World {
    pub fn ground_class(&self, p: [f64; 2]) -> u8 {
        if self.path.distance(p) <= self.road_half_width {
            CLASS_ROAD
        } else {
            CLASS_GRASS
        }
    }

    /// Nearest surface along a ray from `origin` with direction `dir`, both
    /// in world coordinates (east, north, up). Returns `(t, class)`.
    fn cast(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, u8)> {
        let mut hit: Option<(f64, u8)> = None;
        if dir[2] < 0.0 {
            let t = -origin[2] / dir[2];
            let p = [origin[0] + t * dir[0], origin[1] + t * dir[1]];
            hit = Some((t, self.ground_class(p)));
        }
        for ob in &self.obstacles {
            let (ox, oy) = (origin[0] - ob.center[0], origin[1] - ob.center[1]);
            let a = dir[0] * dir[0] + dir[1] * dir[1];
            if a == 0.0 {
                continue;
            }
            let b = 2.0 * (ox * dir[0] + oy * dir[1]);
            let c = ox * ox + oy * oy - ob.radius * ob.radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                continue;
            }
            let t = (-b - disc.sqrt()) / (2.0 * a);
            if t <= 0.0 {
                continue;
            }
            let z = origin[2] + t * dir[2];
            if (0.0..=ob.height).contains(&z) && hit.is_none_or(|(th, _)| t < th) {
                hit = Some((t, CLASS_OBSTACLE));
            }
        }
        hit
    }

    /// Renders the camera view at `pose`. Depth is z-depth; pixels with no
    /// hit within `max_depth` are invalid. `pixel_noise` is the standard
    /// deviation of additive RGB noise, drawn from `rng`.
    pub fn render<R: Rng + ?Sized>(&self, pose: &RobotState, pixel_noise: f64, rng: &mut R) -> RenderedFrame {
        let cam = &self.camera;
        let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
        let rot = cam.extrinsics.rotation();
        let tr = cam.extrinsics.translation();
        let (s, c) = pose.heading.sin_cos();
        // robot FLU → world ENU
        let to_world = |v: [f64; 3]| -> [f64; 3] {
            let (fwd, left) = (v[0], v[1]);
            [fwd * s - left * c, fwd * c + left * s, v[2]]
        };
        let cam_origin = to_world(*tr);
        let origin = [pose.east + cam_origin[0], pose.north + cam_origin[1], cam_origin[2]];
        let noise = Normal::new(0.0, pixel_noise.max(0.0)).expect("finite sigma");

        let mut rgb = Vec::with_capacity(w * h * 3);
        let mut depth = Vec::with_capacity(w * h);
        let mut valid = Vec::with_capacity(w * h);
        let mut labels = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let d_cam = cam.intrinsics.unproject(u as f64, v as f64, 1.0);
                let d_robot = [
                    rot[0][0] * d_cam[0] + rot[0][1] * d_cam[1] + rot[0][2] * d_cam[2],
                    rot[1][0] * d_cam[0] + rot[1][1] * d_cam[1] + rot[1][2] * d_cam[2],
                    rot[2][0] * d_cam[0] + rot[2][1] * d_cam[1] + rot[2][2] * d_cam[2],
                ];
                let dir = to_world(d_robot);
                let hit = self.cast(origin, dir).filter(|(t, _)| *t <= cam.max_depth);
                let (class, shade) = match hit {
                    Some((t, class)) => {
                        depth.push(t as f32);
                        valid.push(true);
                        (class, 1.0 - 0.45 * t / cam.max_depth)
                    }
                    None => {
                        depth.push(0.0);
                        valid.push(false);
                        (CLASS_SKY, 1.0)
                    }
                };
                labels.push(class);
                for ch in base_color(class) {
                    let jitter = if pixel_noise > 0.0 { noise.sample(rng) } else { 0.0 };
                    rgb.push((ch * shade + jitter).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        RenderedFrame {
            width: w,
            height: h,
            rgb,
            depth: DepthImage::with_mask(w, h, depth, valid).expect("sizes match"),
            labels,
        }
    }
}
