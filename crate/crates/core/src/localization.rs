//! Simulated planar range scanner and SDF-residual position estimation.
//!
//! Continuous coordinates are in cell units: `x` runs along columns, `y`
//! along rows, and cell `(r, c)` covers `[c, c+1] x [r, r+1]`. The region
//! outside the map is treated as obstacle, so the map border is a surface
//! the scanner can hit and the SDF is zero on it.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, GridMap};

pub const DEFAULT_SDF_RESOLUTION: usize = 4;
/// Initial step of the local pattern search, in cells.
pub const REFINE_INITIAL_STEP: f64 = 0.5;
pub const REFINE_ITERATIONS: usize = 10;
/// Mean squared endpoint distance below which an estimate is marked confident.
pub const CONFIDENT_MEAN_SQ_RESIDUAL: f64 = 0.0625;

#[derive(Debug, Error, PartialEq)]
pub enum LocalizationError {
    #[error("sdf resolution must be at least 1")]
    ZeroResolution,
    #[error("signed distance field is degenerate (map has no obstacle cells); position is ambiguous")]
    Ambiguous,
    #[error("scan has no beams")]
    EmptyScan,
    #[error("every beam is clamped at max range; nothing to match")]
    NoValidBeams,
    #[error("search region is empty")]
    EmptyRegion,
    #[error("pose ({x:.3}, {y:.3}) is not inside the free region of the map")]
    PoseNotFree { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians in `[-pi, pi)`.
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: normalize_angle(heading) }
    }

    /// Centre of a cell.
    pub fn at_cell(cell: Cell, heading: f64) -> Self {
        Self::new(cell.col as f64 + 0.5, cell.row as f64 + 0.5, heading)
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

pub fn normalize_angle(a: f64) -> f64 {
    let t = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2pi for tiny negative inputs
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Range readings; beam `i` points along `heading + 2*pi*i/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamScan {
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

impl BeamScan {
    pub fn beam_angle(&self, i: usize, heading: f64) -> f64 {
        heading + 2.0 * PI * i as f64 / self.ranges.len() as f64
    }

    /// Beams that hit something before the range cutoff.
    pub fn is_valid_beam(&self, i: usize) -> bool {
        self.ranges[i] < self.max_range
    }

    /// Adds zero-mean Gaussian noise of standard deviation `sigma` to every
    /// beam below the cutoff, keeping readings within `[0, max_range]`.
    pub fn with_noise(&self, sigma: f64, seed: u64) -> BeamScan {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
        let ranges = self
            .ranges
            .iter()
            .map(|&r| if r >= self.max_range { r } else { (r + noise.sample(&mut rng)).clamp(0.0, self.max_range) })
            .collect();
        BeamScan { ranges, max_range: self.max_range }
    }
}

/// Signed distance to the obstacle boundary sampled on a lattice with
/// `resolution` samples per cell edge (both map borders included).
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    resolution: usize,
    width: usize,
    height: usize,
    values: Vec<f64>,
    degenerate: bool,
}

impl SdfGrid {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Map extent in cells, `(width, height)`.
    pub fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn cols(&self) -> usize {
        self.width * self.resolution + 1
    }

    fn rows(&self) -> usize {
        self.height * self.resolution + 1
    }

    /// Value at lattice sample `(i, j)`, i.e. at `(i / res, j / res)`.
    pub fn sample(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.cols() + i]
    }

    /// Bilinear interpolation inside the map. Outside it the value at the
    /// nearest border point is continued with the distance to the border,
    /// negative because the outside counts as obstacle.
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        let (w, h) = (self.width as f64, self.height as f64);
        let cx = x.clamp(0.0, w);
        let cy = y.clamp(0.0, h);
        let outside = (x - cx).hypot(y - cy);
        let gx = cx * self.resolution as f64;
        let gy = cy * self.resolution as f64;
        let i0 = (gx.floor() as usize).min(self.cols() - 2);
        let j0 = (gy.floor() as usize).min(self.rows() - 2);
        let fx = gx - i0 as f64;
        let fy = gy - j0 as f64;
        let v00 = self.sample(i0, j0);
        let v10 = self.sample(i0 + 1, j0);
        let v01 = self.sample(i0, j0 + 1);
        let v11 = self.sample(i0 + 1, j0 + 1);
        let v = v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy;
        v - outside
    }
}

fn dist_to_cell(x: f64, y: f64, cell: Cell) -> f64 {
    let (c0, r0) = (cell.col as f64, cell.row as f64);
    let dx = (c0 - x).max(0.0).max(x - (c0 + 1.0));
    let dy = (r0 - y).max(0.0).max(y - (r0 + 1.0));
    dx.hypot(dy)
}

/// Distance from `(x, y)` (inside the map) to the nearest cell matching
/// `target`, searched in growing Chebyshev rings around the containing cell.
fn nearest_cell_distance(map: &GridMap, x: f64, y: f64, target: impl Fn(Cell) -> bool, cap: f64) -> f64 {
    let pr = (y.floor() as i32).clamp(0, map.height() as i32 - 1);
    let pc = (x.floor() as i32).clamp(0, map.width() as i32 - 1);
    let max_ring = map.width().max(map.height()) as i32;
    let mut best = cap;
    for k in 0..=max_ring {
        // Any cell in ring k is at least k-1 away.
        if (k - 1) as f64 >= best {
            break;
        }
        for r in (pr - k)..=(pr + k) {
            for c in (pc - k)..=(pc + k) {
                if (r - pr).abs() != k && (c - pc).abs() != k {
                    continue;
                }
                let cell = Cell::new(r, c);
                if map.in_bounds(cell) && target(cell) {
                    best = best.min(dist_to_cell(x, y, cell));
                }
            }
        }
    }
    best
}

/// Exact signed distance at a point inside the map.
fn signed_distance(map: &GridMap, x: f64, y: f64) -> f64 {
    let border = x.min(map.width() as f64 - x).min(y).min(map.height() as f64 - y);
    let to_obstacle = nearest_cell_distance(map, x, y, |c| map.is_obstacle(c), border);
    if to_obstacle > 0.0 {
        to_obstacle
    } else {
        -nearest_cell_distance(map, x, y, |c| map.is_free(c), f64::INFINITY)
    }
}

pub fn compute_sdf(map: &GridMap, resolution: usize) -> Result<SdfGrid, LocalizationError> {
    if resolution == 0 {
        return Err(LocalizationError::ZeroResolution);
    }
    let cols = map.width() * resolution + 1;
    let rows = map.height() * resolution + 1;
    let degenerate = map.obstacle_count() == 0;
    let values = if degenerate {
        vec![f64::INFINITY; cols * rows]
    } else {
        let step = 1.0 / resolution as f64;
        (0..rows)
            .flat_map(|j| (0..cols).map(move |i| (i, j)))
            .map(|(i, j)| signed_distance(map, i as f64 * step, j as f64 * step))
            .collect()
    };
    Ok(SdfGrid { resolution, width: map.width(), height: map.height(), values, degenerate })
}

/// Ray length from `pose` along `angle` to the first obstacle cell or the
/// map border, by exact grid traversal.
fn ray_length(map: &GridMap, x: f64, y: f64, angle: f64, max_range: f64) -> f64 {
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut cx = x.floor() as i32;
    let mut cy = y.floor() as i32;
    let step_x = if dx > 0.0 { 1 } else { -1 };
    let step_y = if dy > 0.0 { 1 } else { -1 };
    let next_boundary = |p: f64, cell: i32, d: f64| -> f64 {
        if d > 0.0 {
            (cell as f64 + 1.0 - p) / d
        } else if d < 0.0 {
            (cell as f64 - p) / d
        } else {
            f64::INFINITY
        }
    };
    let mut t_max_x = next_boundary(x, cx, dx);
    let mut t_max_y = next_boundary(y, cy, dy);
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    loop {
        let t = if t_max_x < t_max_y {
            cx += step_x;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            cy += step_y;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        if t >= max_range {
            return max_range;
        }
        if !map.is_free(Cell::new(cy, cx)) {
            return t;
        }
    }
}

fn cell_containing(x: f64, y: f64) -> Cell {
    Cell::new(y.floor() as i32, x.floor() as i32)
}

/// Noiseless scan from `pose`; ranges are clamped at `max_range`.
pub fn cast_beams(map: &GridMap, pose: &Pose, n_beams: usize, max_range: f64) -> Result<BeamScan, LocalizationError> {
    if !pose.x.is_finite() || !pose.y.is_finite() || !map.is_free(cell_containing(pose.x, pose.y)) {
        return Err(LocalizationError::PoseNotFree { x: pose.x, y: pose.y });
    }
    let ranges = (0..n_beams)
        .map(|i| {
            let angle = pose.heading + 2.0 * PI * i as f64 / n_beams as f64;
            ray_length(map, pose.x, pose.y, angle, max_range)
        })
        .collect();
    Ok(BeamScan { ranges, max_range })
}

/// Axis-aligned bounds on the candidate position, in cells (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl SearchRegion {
    /// The whole map.
    pub fn whole(sdf: &SdfGrid) -> Self {
        let (w, h) = sdf.extent();
        Self { x_min: 0.0, x_max: w as f64, y_min: 0.0, y_max: h as f64 }
    }

    /// A square window of half-width `radius` around `(x, y)`.
    pub fn around(x: f64, y: f64, radius: f64) -> Self {
        Self { x_min: x - radius, x_max: x + radius, y_min: y - radius, y_max: y + radius }
    }

    pub fn is_empty(&self) -> bool {
        !(self.x_min <= self.x_max && self.y_min <= self.y_max)
    }

    fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.x_min, self.x_max), y.clamp(self.y_min, self.y_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose,
    /// Sum of squared SDF values at the valid beam endpoints.
    pub residual: f64,
    pub confident: bool,
}

/// Beam endpoint offsets relative to the vehicle for a known heading.
/// Beams clamped at max range are dropped.
pub fn endpoint_offsets(scan: &BeamScan, heading: f64) -> Vec<(f64, f64)> {
    (0..scan.ranges.len())
        .filter(|&i| scan.is_valid_beam(i))
        .map(|i| {
            let a = scan.beam_angle(i, heading);
            (scan.ranges[i] * a.cos(), scan.ranges[i] * a.sin())
        })
        .collect()
}

/// Sum of squared SDF values at the endpoints placed at `(x, y)`.
pub fn scan_residual(sdf: &SdfGrid, offsets: &[(f64, f64)], x: f64, y: f64) -> f64 {
    offsets
        .iter()
        .map(|&(ox, oy)| {
            let v = sdf.value_at(x + ox, y + oy);
            v * v
        })
        .sum()
}

/// Position minimizing the endpoint residual with the heading held fixed:
/// coarse lattice search at SDF spacing, then a halving pattern search.
pub fn estimate_position(
    sdf: &SdfGrid,
    scan: &BeamScan,
    heading: f64,
    region: SearchRegion,
) -> Result<PoseEstimate, LocalizationError> {
    if sdf.is_degenerate() {
        return Err(LocalizationError::Ambiguous);
    }
    if scan.ranges.is_empty() {
        return Err(LocalizationError::EmptyScan);
    }
    if region.is_empty() {
        return Err(LocalizationError::EmptyRegion);
    }
    let offsets = endpoint_offsets(scan, heading);
    if offsets.is_empty() {
        return Err(LocalizationError::NoValidBeams);
    }

    let step = sdf.spacing();
    let nx = ((region.x_max - region.x_min) / step + 1e-9).floor() as usize + 1;
    let ny = ((region.y_max - region.y_min) / step + 1e-9).floor() as usize + 1;
    let mut best = (region.x_min, region.y_min, f64::INFINITY);
    for j in 0..ny {
        let y = region.y_min + j as f64 * step;
        for i in 0..nx {
            let x = region.x_min + i as f64 * step;
            let r = scan_residual(sdf, &offsets, x, y);
            if r < best.2 {
                best = (x, y, r);
            }
        }
    }

    let (mut x, mut y, mut residual) = best;
    let mut delta = REFINE_INITIAL_STEP;
    for _ in 0..REFINE_ITERATIONS {
        // Move while some compass/diagonal neighbour improves, then halve.
        for _ in 0..8 {
            let mut improved = None;
            for (sx, sy) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let (cx, cy) = region.clamp(x + sx * delta, y + sy * delta);
                let r = scan_residual(sdf, &offsets, cx, cy);
                if r < improved.map_or(residual, |(_, _, br)| br) {
                    improved = Some((cx, cy, r));
                }
            }
            match improved {
                Some((cx, cy, r)) => (x, y, residual) = (cx, cy, r),
                None => break,
            }
        }
        delta *= 0.5;
    }

    Ok(PoseEstimate {
        pose: Pose::new(x, y, heading),
        residual,
        confident: residual / offsets.len() as f64 <= CONFIDENT_MEAN_SQ_RESIDUAL,
    })
}
