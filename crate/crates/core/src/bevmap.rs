//! Semantic bird's-eye-view grids built from depth and per-pixel class scores.
//!
//! Robot frame here is forward/left/up: `x` forward, `y` to the left, `z` up.
//! The grid's row index grows with forward distance and its column index grows
//! from the right edge (`y = −16 m`) to the left edge (`y = +16 m`), so the
//! robot sits at the bottom-centre of the map.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::tensorfile::{Tensor, TensorFile};

pub const BEV_ROWS: usize = 128;
pub const BEV_COLS: usize = 256;
pub const NUM_CLASSES: usize = 20;
pub const CELL_SIZE_M: f64 = 0.125;
pub const LATERAL_HALF_WIDTH_M: f64 = 16.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BevError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("class id {class} outside 0..{classes}")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("EMA factor {0} outside (0, 1]")]
    AlphaOutOfRange(f64),
    #[error("invalid camera parameters: {0}")]
    InvalidCamera(String),
    #[error("grid storage: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, BevError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(BevError::InvalidCamera(format!("focal lengths {fx}, {fy}")));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(BevError::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Pinhole camera with the given horizontal field of view and the
    /// principal point at the image centre.
    pub fn from_fov(width: usize, height: usize, hfov_rad: f64) -> Result<Self, BevError> {
        let f = 0.5 * width as f64 / (0.5 * hfov_rad).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    /// Pixel → camera-frame point at z-depth `d` (x right, y down, z forward).
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        [(u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d]
    }

    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }
}

/// Rigid transform from the optical camera frame to the robot frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraToRobot {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl CameraToRobot {
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self, BevError> {
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (rtr - expect).abs() > 1e-9 {
                    return Err(BevError::InvalidCamera("rotation is not orthonormal".into()));
                }
            }
        }
        let r = &rotation;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-9 {
            return Err(BevError::InvalidCamera(format!("rotation determinant {det}")));
        }
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(BevError::InvalidCamera("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Forward-looking camera mounted `height` meters above the ground,
    /// pitched down by `pitch` radians.
    pub fn forward_mounted(height: f64, pitch: f64) -> Self {
        let (s, c) = pitch.sin_cos();
        // camera x (right) → robot −y, camera y (down) → robot −z, camera z → robot x,
        // then tilt the optical axis down about the robot's left axis.
        let rotation = [[0.0, -s, c], [-1.0, 0.0, 0.0], [0.0, -c, -s]];
        Self {
            rotation,
            translation: [0.0, 0.0, height],
        }
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> &[f64; 3] {
        &self.translation
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    pub fn apply_inverse(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let d = [
            p[0] - self.translation[0],
            p[1] - self.translation[1],
            p[2] - self.translation[2],
        ];
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }
}

/// Depth in meters along the optical axis, with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    depth: Vec<f32>,
    valid: Vec<bool>,
}

impl DepthImage {
    /// Pixels with non-finite or non-positive depth are marked invalid.
    pub fn new(width: usize, height: usize, depth: Vec<f32>) -> Result<Self, BevError> {
        if depth.len() != width * height {
            return Err(BevError::DimensionMismatch(format!(
                "depth has {} values for {width}x{height}",
                depth.len()
            )));
        }
        let valid = depth.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Ok(Self {
            width,
            height,
            depth,
            valid,
        })
    }

    pub fn with_mask(width: usize, height: usize, depth: Vec<f32>, mask: Vec<bool>) -> Result<Self, BevError> {
        let mut img = Self::new(width, height, depth)?;
        if mask.len() != img.valid.len() {
            return Err(BevError::DimensionMismatch("mask size".into()));
        }
        for (v, m) in img.valid.iter_mut().zip(mask) {
            *v = *v && m;
        }
        Ok(img)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.depth
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn at(&self, u: usize, v: usize) -> Option<f32> {
        let k = v * self.width + u;
        self.valid[k].then_some(self.depth[k])
    }
}

/// Per-pixel class scores, `height × width × classes`, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegScores {
    width: usize,
    height: usize,
    classes: usize,
    data: Vec<f32>,
}

impl SegScores {
    pub fn new(width: usize, height: usize, classes: usize, data: Vec<f32>) -> Result<Self, BevError> {
        if data.len() != width * height * classes {
            return Err(BevError::DimensionMismatch(format!(
                "scores have {} values for {width}x{height}x{classes}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            classes,
            data: data.into_iter().map(|s| s.clamp(0.0, 1.0)).collect(),
        })
    }

    /// One-hot scores from a class-id image.
    pub fn from_labels(width: usize, height: usize, classes: usize, labels: &[u8]) -> Result<Self, BevError> {
        if labels.len() != width * height {
            return Err(BevError::DimensionMismatch("label image size".into()));
        }
        let mut data = vec![0.0f32; width * height * classes];
        for (k, &c) in labels.iter().enumerate() {
            let c = c as usize;
            if c >= classes {
                return Err(BevError::ClassOutOfRange { class: c, classes });
            }
            data[k * classes + c] = 1.0;
        }
        Ok(Self {
            width,
            height,
            classes,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Highest-scoring class at a pixel; ties go to the lower id.
    pub fn argmax(&self, u: usize, v: usize) -> usize {
        let base = (v * self.width + u) * self.classes;
        let scores = &self.data[base..base + self.classes];
        let mut best = 0;
        for (c, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub classes: usize,
    pub cell_x: f64,
    pub cell_y: f64,
    pub lateral_half_width: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rows: BEV_ROWS,
            cols: BEV_COLS,
            classes: NUM_CLASSES,
            cell_x: CELL_SIZE_M,
            cell_y: CELL_SIZE_M,
            lateral_half_width: LATERAL_HALF_WIDTH_M,
        }
    }
}

impl GridSpec {
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 + 0.5) * self.cell_x,
            (j as f64 + 0.5) * self.cell_y - self.lateral_half_width,
        )
    }

    fn len(&self) -> usize {
        self.rows * self.cols * self.classes
    }
}

/// `rows × cols × classes` map, robot at the bottom-centre.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    spec: GridSpec,
    data: Vec<f32>,
}

impl From<crate::dataset::tensorfile::TensorFileError> for BevError {
    fn from(e: crate::dataset::tensorfile::TensorFileError) -> Self {
        BevError::Storage(e.to_string())
    }
}

impl BevGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            data: vec![0.0; spec.len()],
        }
    }

    pub fn from_data(spec: GridSpec, data: Vec<f32>) -> Result<Self, BevError> {
        if data.len() != spec.len() {
            return Err(BevError::DimensionMismatch(format!(
                "grid data has {} values, expected {}",
                data.len(),
                spec.len()
            )));
        }
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f32] {
        let base = (i * self.spec.cols + j) * self.spec.classes;
        &self.data[base..base + self.spec.classes]
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f32 {
        self.cell(i, j)[c]
    }

    fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f32] {
        let base = (i * self.spec.cols + j) * self.spec.classes;
        &mut self.data[base..base + self.spec.classes]
    }

    /// `bev` as `[rows, cols, classes]` f32 and `geometry` as
    /// `[cell_x, cell_y, lateral_half_width]`.
    pub fn to_tensorfile(&self) -> Result<TensorFile, BevError> {
        let s = self.spec;
        let mut f = TensorFile::new();
        f.insert("bev", Tensor::f32(&[s.rows, s.cols, s.classes], self.data.clone()))?;
        f.insert("geometry", Tensor::f64(&[3], vec![s.cell_x, s.cell_y, s.lateral_half_width]))?;
        Ok(f)
    }

    pub fn from_tensorfile(f: &TensorFile) -> Result<Self, BevError> {
        let t = f.get("bev")?;
        let [rows, cols, classes] = t.dims[..] else {
            return Err(BevError::DimensionMismatch(format!("bev tensor has dims {:?}", t.dims)));
        };
        let g = f.f64s("geometry")?;
        let [cell_x, cell_y, lateral_half_width] = g[..] else {
            return Err(BevError::DimensionMismatch("geometry needs 3 values".into()));
        };
        let spec = GridSpec {
            rows: rows as usize,
            cols: cols as usize,
            classes: classes as usize,
            cell_x,
            cell_y,
            lateral_half_width,
        };
        Self::from_data(spec, f.f32s("bev")?.to_vec())
    }

    /// Cells with at least one nonzero channel, in row-major order.
    pub fn occupied_cells(&self) -> impl Iterator<Item = (usize, usize, &[f32])> + '_ {
        let cols = self.spec.cols;
        self.data
            .chunks_exact(self.spec.classes)
            .enumerate()
            .filter(|(_, cell)| cell.iter().any(|v| *v != 0.0))
            .map(move |(k, cell)| (k / cols, k % cols, cell))
    }
}

/// Robot-frame `(x, y)` → `(row, col)`, or `None` outside the map.
pub fn grid_index(x: f64, y: f64, spec: &GridSpec) -> Option<(usize, usize)> {
    if !(x > 0.0) || !y.is_finite() {
        return None;
    }
    let i = (x / spec.cell_x).floor();
    let j = ((y + spec.lateral_half_width) / spec.cell_y).floor();
    if i < 0.0 || j < 0.0 || i >= spec.rows as f64 || j >= spec.cols as f64 {
        return None;
    }
    Some((i as usize, j as usize))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reducer {
    /// One-hot of the most frequent class in the cell.
    Majority,
    /// Any class present in the cell is set.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreak {
    LowerClass,
    HigherClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplatConfig {
    pub reducer: Reducer,
    pub tie_break: TieBreak,
}

impl Default for SplatConfig {
    fn default() -> Self {
        Self {
            reducer: Reducer::Majority,
            tie_break: TieBreak::LowerClass,
        }
    }
}

/// A robot-frame point tagged with its class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub point: [f64; 3],
    pub class: usize,
}

/// A back-projected point and the pixel it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub point: [f64; 3],
    pub pixel: (usize, usize),
}

/// Lifts every valid depth pixel into the robot frame, in row-major order.
pub fn back_project(
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    ext: &CameraToRobot,
) -> Result<Vec<PixelPoint>, BevError> {
    if depth.width != intr.width || depth.height != intr.height {
        return Err(BevError::DimensionMismatch(format!(
            "depth {}x{} vs intrinsics {}x{}",
            depth.width, depth.height, intr.width, intr.height
        )));
    }
    let mut out = Vec::with_capacity(depth.valid.iter().filter(|v| **v).count());
    for v in 0..depth.height {
        for u in 0..depth.width {
            if let Some(d) = depth.at(u, v) {
                let pc = intr.unproject(u as f64, v as f64, d as f64);
                out.push(PixelPoint {
                    point: ext.apply(pc),
                    pixel: (u, v),
                });
            }
        }
    }
    Ok(out)
}

/// Robot-frame point → sub-pixel image coordinates.
pub fn reproject(point: [f64; 3], intr: &CameraIntrinsics, ext: &CameraToRobot) -> (f64, f64) {
    intr.project(ext.apply_inverse(point))
}

pub fn splat(points: &[LabeledPoint], spec: &GridSpec, cfg: &SplatConfig) -> Result<BevGrid, BevError> {
    let mut counts: BTreeMap<(usize, usize), Vec<u32>> = BTreeMap::new();
    for p in points {
        if p.class >= spec.classes {
            return Err(BevError::ClassOutOfRange {
                class: p.class,
                classes: spec.classes,
            });
        }
        if let Some(cell) = grid_index(p.point[0], p.point[1], spec) {
            counts.entry(cell).or_insert_with(|| vec![0; spec.classes])[p.class] += 1;
        }
    }
    let mut grid = BevGrid::zeros(*spec);
    for ((i, j), tally) in counts {
        let cell = grid.cell_mut(i, j);
        match cfg.reducer {
            Reducer::Max => {
                for (v, &n) in cell.iter_mut().zip(&tally) {
                    if n > 0 {
                        *v = 1.0;
                    }
                }
            }
            Reducer::Majority => {
                let winner = majority(&tally, cfg.tie_break);
                cell[winner] = 1.0;
            }
        }
    }
    Ok(grid)
}

fn majority(tally: &[u32], tie: TieBreak) -> usize {
    let mut best = 0;
    for (c, &n) in tally.iter().enumerate() {
        let better = match tie {
            TieBreak::LowerClass => n > tally[best],
            TieBreak::HigherClass => n >= tally[best],
        };
        if better {
            best = c;
        }
    }
    best
}

/// `alpha · current + (1 − alpha) · previous`, elementwise.
pub fn ema_fuse(current: &BevGrid, previous: &BevGrid, alpha: f64) -> Result<BevGrid, BevError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(BevError::AlphaOutOfRange(alpha));
    }
    if current.spec != previous.spec {
        return Err(BevError::DimensionMismatch("grid specs differ".into()));
    }
    let a = alpha as f32;
    let b = 1.0 - a;
    let data = current
        .data
        .iter()
        .zip(&previous.data)
        .map(|(&c, &p)| (a * c + b * p).clamp(0.0, 1.0))
        .collect();
    Ok(BevGrid {
        spec: current.spec,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevConfig {
    pub grid: GridSpec,
    pub splat: SplatConfig,
    /// Points higher than this (robot frame, meters) are dropped.
    pub height_ceiling: f64,
    pub alpha: f64,
}

impl Default for BevConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            splat: SplatConfig::default(),
            height_ceiling: 2.5,
            alpha: 0.5,
        }
    }
}

/// Back-projects, labels each point with the arg-max class at its pixel,
/// splats, and fuses with `previous` when given.
pub fn build_bev(
    seg: &SegScores,
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    ext: &CameraToRobot,
    previous: Option<&BevGrid>,
    cfg: &BevConfig,
) -> Result<BevGrid, BevError> {
    if seg.width != depth.width || seg.height != depth.height {
        return Err(BevError::DimensionMismatch("segmentation and depth sizes differ".into()));
    }
    if seg.classes != cfg.grid.classes {
        return Err(BevError::DimensionMismatch(format!(
            "{} score channels for a {}-class grid",
            seg.classes, cfg.grid.classes
        )));
    }
    let labeled: Vec<LabeledPoint> = back_project(depth, intr, ext)?
        .into_iter()
        .filter(|p| p.point[2] <= cfg.height_ceiling)
        .map(|p| LabeledPoint {
            point: p.point,
            class: seg.argmax(p.pixel.0, p.pixel.1),
        })
        .collect();
    let current = splat(&labeled, &cfg.grid, &cfg.splat)?;
    match previous {
        Some(prev) => ema_fuse(&current, prev, cfg.alpha),
        None => Ok(current),
    }
}

/// Fixed display colour per class.
pub fn class_color(class: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; NUM_CLASSES] = [
        [128, 64, 128],
        [107, 142, 35],
        [220, 20, 60],
        [244, 35, 232],
        [70, 70, 70],
        [102, 102, 156],
        [190, 153, 153],
        [153, 153, 153],
        [250, 170, 30],
        [220, 220, 0],
        [152, 251, 152],
        [70, 130, 180],
        [255, 0, 0],
        [0, 0, 142],
        [0, 0, 70],
        [0, 60, 100],
        [0, 80, 100],
        [0, 0, 230],
        [119, 11, 32],
        [255, 255, 255],
    ];
    PALETTE[class % NUM_CLASSES]
}

/// Colour-mapped RGB rendering: forward is up, left is left.
pub fn render_rgb(grid: &BevGrid) -> image::RgbImage {
    let spec = grid.spec;
    let mut img = image::RgbImage::new(spec.cols as u32, spec.rows as u32);
    for i in 0..spec.rows {
        for j in 0..spec.cols {
            let mut rgb = [0.0f32; 3];
            for (c, &w) in grid.cell(i, j).iter().enumerate() {
                if w != 0.0 {
                    let col = class_color(c);
                    for k in 0..3 {
                        rgb[k] += w * col[k] as f32;
                    }
                }
            }
            let px = image::Rgb(rgb.map(|v| v.round().clamp(0.0, 255.0) as u8));
            img.put_pixel((spec.cols - 1 - j) as u32, (spec.rows - 1 - i) as u32, px);
        }
    }
    img
}

pub fn encode_png(img: &image::RgbImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    buf.into_inner()
}
