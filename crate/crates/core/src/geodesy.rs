//! Latitude/longitude mathematics used to bring global route points into the
//! robot's local frame.
//!
//! Conventions:
//! - [`GeoFix`] stores degrees; everything else works in radians.
//! - [`Bearing`] is a compass angle: 0 is north, positive is clockwise (east
//!   is `+π/2`), normalized to `(−π, π]`.
//! - [`LocalPoint`] is `x` to the robot's right and `y` forward.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separation below which two fixes are treated as the same position.
pub const COINCIDENCE_TOLERANCE_M: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90] or not finite")]
    InvalidLatitude(f64),
    #[error("longitude {0} is not finite")]
    InvalidLongitude(f64),
    #[error("fixes are {0:.4} m apart, below the coincidence tolerance")]
    CoincidentFixes(f64),
    #[error("time interval must be positive, got {0}")]
    NonPositiveInterval(f64),
    #[error("ellipsoid parameters out of range (a = {a}, e2 = {e2})")]
    InvalidEllipsoid { a: f64, e2: f64 },
}

/// Wrap an angle into `(−π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// A GNSS position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoFix {
    lat: f64,
    lon: f64,
}

impl GeoFix {
    /// Builds a fix, normalizing the longitude into `(−180, 180]`.
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::InvalidLatitude(lat));
        }
        if !lon.is_finite() {
            return Err(GeoError::InvalidLongitude(lon));
        }
        let lon = if lon > -180.0 && lon <= 180.0 {
            lon
        } else {
            let l = lon.rem_euclid(360.0);
            if l > 180.0 {
                l - 360.0
            } else {
                l
            }
        };
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat_rad(&self) -> f64 {
        self.lat.to_radians()
    }

    pub fn lon_rad(&self) -> f64 {
        self.lon.to_radians()
    }
}

/// Reference ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    semi_major: f64,
    ecc_sq: f64,
}

impl Ellipsoid {
    pub const WGS84: Ellipsoid = Ellipsoid {
        semi_major: 6_378_137.0,
        ecc_sq: 0.006_694_379_990_14,
    };

    pub fn new(semi_major: f64, ecc_sq: f64) -> Result<Self, GeoError> {
        if !(semi_major > 0.0) || !semi_major.is_finite() || !(0.0..1.0).contains(&ecc_sq) {
            return Err(GeoError::InvalidEllipsoid {
                a: semi_major,
                e2: ecc_sq,
            });
        }
        Ok(Self { semi_major, ecc_sq })
    }

    pub fn semi_major(&self) -> f64 {
        self.semi_major
    }

    pub fn ecc_sq(&self) -> f64 {
        self.ecc_sq
    }
}

impl Default for Ellipsoid {
    fn default() -> Self {
        Self::WGS84
    }
}

/// A point in the robot frame: `x` rightward, `y` forward, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalPoint {
    pub x: f64,
    pub y: f64,
}

impl LocalPoint {
    pub const ORIGIN: LocalPoint = LocalPoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Compass bearing in radians, always within `(−π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct Bearing(f64);

impl Bearing {
    pub fn new(radians: f64) -> Self {
        Bearing(wrap_angle(radians))
    }

    pub fn radians(&self) -> f64 {
        self.0
    }
}

/// Discrete route command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    Left,
    Straight,
    Right,
}

impl Command {
    pub const ALL: [Command; 3] = [Command::Left, Command::Straight, Command::Right];

    pub fn index(self) -> usize {
        match self {
            Command::Left => 0,
            Command::Straight => 1,
            Command::Right => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Left => "left",
            Command::Straight => "straight",
            Command::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        match s {
            "left" => Some(Command::Left),
            "straight" => Some(Command::Straight),
            "right" => Some(Command::Right),
            _ => None,
        }
    }
}

/// Bearing formula without the coincidence check.
pub fn bearing_formula(prev: GeoFix, curr: GeoFix) -> Bearing {
    let (phi1, phi2) = (prev.lat_rad(), curr.lat_rad());
    // differences taken in degrees are exact for nearby fixes
    let dphi = (curr.lat() - prev.lat()).to_radians();
    let dlambda = (curr.lon() - prev.lon()).to_radians();
    let y = dlambda.sin() * phi2.cos();
    // cos φ1 sin φ2 − sin φ1 cos φ2 cos Δλ, rearranged to avoid cancellation
    let x = dphi.sin() + 2.0 * phi1.sin() * phi2.cos() * (0.5 * dlambda).sin().powi(2);
    Bearing::new(y.atan2(x))
}

/// Direction of travel from `prev` to `curr`.
///
/// Fixes closer than [`COINCIDENCE_TOLERANCE_M`] (WGS84 distance) yield
/// [`GeoError::CoincidentFixes`]; the caller should hold its last bearing.
pub fn bearing(prev: GeoFix, curr: GeoFix) -> Result<Bearing, GeoError> {
    let d = great_circle_distance(prev, curr, &Ellipsoid::WGS84);
    if d < COINCIDENCE_TOLERANCE_M {
        return Err(GeoError::CoincidentFixes(d));
    }
    Ok(bearing_formula(prev, curr))
}

/// Meridional (`meridional`) and prime-vertical (`prime_vertical`) radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureRadii {
    pub meridional: f64,
    pub prime_vertical: f64,
}

pub fn curvature_radii(phi: f64, ell: &Ellipsoid) -> CurvatureRadii {
    debug_assert!(phi.abs() <= PI / 2.0 + 1e-12);
    let s = phi.sin();
    let w = 1.0 - ell.ecc_sq * s * s;
    let sw = w.sqrt();
    CurvatureRadii {
        meridional: ell.semi_major * (1.0 - ell.ecc_sq) / (w * sw),
        prime_vertical: ell.semi_major / sw,
    }
}

/// East/north offsets (meters) of `target` relative to `origin` under the
/// equirectangular approximation at the origin latitude.
pub fn equirectangular_offset(target: GeoFix, origin: GeoFix, ell: &Ellipsoid) -> (f64, f64) {
    let phi_c = origin.lat_rad();
    let radii = curvature_radii(phi_c, ell);
    let dlambda = wrap_angle((target.lon() - origin.lon()).to_radians());
    let dphi = (target.lat() - origin.lat()).to_radians();
    (
        radii.prime_vertical * phi_c.cos() * dlambda,
        radii.meridional * dphi,
    )
}

/// Projects a route point into the robot frame given the robot fix and its
/// bearing.
pub fn global_to_local(
    route_pt: GeoFix,
    robot: GeoFix,
    beta: Bearing,
    ell: &Ellipsoid,
) -> LocalPoint {
    let (dx, dy) = equirectangular_offset(route_pt, robot, ell);
    let (s, c) = beta.radians().sin_cos();
    LocalPoint {
        x: c * dx - s * dy,
        y: s * dx + c * dy,
    }
}

/// Inverse of [`global_to_local`] under the same approximation.
pub fn local_to_global(
    point: LocalPoint,
    robot: GeoFix,
    beta: Bearing,
    ell: &Ellipsoid,
) -> Result<GeoFix, GeoError> {
    let (s, c) = beta.radians().sin_cos();
    let east = c * point.x + s * point.y;
    let north = -s * point.x + c * point.y;
    offset_fix(robot, east, north, ell)
}

/// Moves a fix by east/north meters (equirectangular at the fix latitude).
pub fn offset_fix(origin: GeoFix, east: f64, north: f64, ell: &Ellipsoid) -> Result<GeoFix, GeoError> {
    let phi_c = origin.lat_rad();
    let radii = curvature_radii(phi_c, ell);
    let dphi = north / radii.meridional;
    let dlambda = east / (radii.prime_vertical * phi_c.cos());
    GeoFix::new(
        origin.lat() + dphi.to_degrees(),
        origin.lon() + dlambda.to_degrees(),
    )
}

/// Haversine distance on a sphere whose radius is the prime-vertical radius
/// at the mid latitude.
pub fn great_circle_distance(a: GeoFix, b: GeoFix, ell: &Ellipsoid) -> f64 {
    let (phi1, phi2) = (a.lat_rad(), b.lat_rad());
    let radius = curvature_radii(0.5 * (phi1 + phi2), ell).prime_vertical;
    let dphi = (b.lat() - a.lat()).to_radians();
    let dlambda = (b.lon() - a.lon()).to_radians();
    let h = (0.5 * dphi).sin().powi(2) + phi1.cos() * phi2.cos() * (0.5 * dlambda).sin().powi(2);
    2.0 * radius * h.sqrt().min(1.0).asin()
}

pub fn velocity_from_fixes(
    prev: GeoFix,
    curr: GeoFix,
    dt: f64,
    ell: &Ellipsoid,
) -> Result<f64, GeoError> {
    if !(dt > 0.0) {
        return Err(GeoError::NonPositiveInterval(dt));
    }
    Ok(great_circle_distance(prev, curr, ell) / dt)
}

/// Thresholds on the lateral offset of the next two route points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandThresholds {
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for CommandThresholds {
    fn default() -> Self {
        Self {
            tau1: 1.0,
            tau2: 2.5,
        }
    }
}

/// A command together with whether the left and right tests both fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommandDecision {
    pub command: Command,
    pub conflict: bool,
}

/// Left/straight/right from the lateral offsets of the next two route
/// points. Left is tested first.
pub fn classify_command(p1: LocalPoint, p2: LocalPoint, tau1: f64, tau2: f64) -> CommandDecision {
    let left = p1.x <= -tau1 || p2.x <= -tau2;
    let right = p1.x >= tau1 || p2.x >= tau2;
    let command = if left {
        Command::Left
    } else if right {
        Command::Right
    } else {
        Command::Straight
    };
    CommandDecision {
        command,
        conflict: left && right,
    }
}

pub fn infer_command(p1: LocalPoint, p2: LocalPoint, tau1: f64, tau2: f64) -> Command {
    classify_command(p1, p2, tau1, tau2).command
}

/// Keeps the robot bearing from a stream of fixes.
///
/// The bearing is taken between the newest fix and the one `stride` fixes
/// before it; when those coincide the previous bearing is held.
#[derive(Debug, Clone)]
pub struct BearingTracker {
    stride: usize,
    history: std::collections::VecDeque<GeoFix>,
    current: Bearing,
}

impl BearingTracker {
    pub fn new(initial: Bearing, stride: usize) -> Self {
        Self {
            stride: stride.max(1),
            history: std::collections::VecDeque::new(),
            current: initial,
        }
    }

    /// Feeds a new fix and returns the bearing in effect afterwards.
    pub fn update(&mut self, fix: GeoFix) -> Bearing {
        self.history.push_back(fix);
        while self.history.len() > self.stride + 1 {
            self.history.pop_front();
        }
        if self.history.len() == self.stride + 1 {
            if let Ok(b) = bearing(self.history[0], fix) {
                self.current = b;
            }
        }
        self.current
    }

    pub fn current(&self) -> Bearing {
        self.current
    }
}

/// Local east/north tangent plane anchored at a fix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentPlane {
    pub origin: GeoFix,
    pub ellipsoid: Ellipsoid,
}

impl TangentPlane {
    pub fn new(origin: GeoFix) -> Self {
        Self {
            origin,
            ellipsoid: Ellipsoid::WGS84,
        }
    }

    pub fn to_geo(&self, east: f64, north: f64) -> Result<GeoFix, GeoError> {
        offset_fix(self.origin, east, north, &self.ellipsoid)
    }

    pub fn to_enu(&self, fix: GeoFix) -> (f64, f64) {
        equirectangular_offset(fix, self.origin, &self.ellipsoid)
    }
}
