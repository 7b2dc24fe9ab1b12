//! Static workspace, per-cell coverage bookkeeping and path validity.
//!
//! Cells are addressed as `(row, col)` with row 0 at the top of the map.
//! Coordinates are signed so that out-of-map waypoints coming back from a
//! proposer can be represented and reported instead of rejected at parse time.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attempts `generate_map` makes before giving up on a connected layout.
pub const MAX_GENERATION_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("map dimensions must be at least 1x1, got {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("start cell {0} lies outside the map")]
    StartOutOfBounds(Cell),
    #[error("start cell {0} is an obstacle")]
    StartBlocked(Cell),
    #[error("obstacle {0} lies outside the map")]
    ObstacleOutOfBounds(Cell),
    #[error("obstacle density {0} is outside [0, 1)")]
    DensityOutOfRange(f64),
    #[error("density {density} leaves no free cell besides the start on a {width}x{height} map")]
    TooDense { width: usize, height: usize, density: f64 },
    #[error("no connected obstacle layout found after {attempts} attempts")]
    GenerationFailed { attempts: usize },
    #[error("free region is not four-connected; unreachable from start: {}", format_cells(.unreachable))]
    Disconnected { unreachable: Vec<Cell> },
    #[error("coverage map is {got_w}x{got_h} but the grid map is {want_w}x{want_h}")]
    DimensionMismatch { got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("cell {0} is not a free cell of the map")]
    NotFree(Cell),
    #[error("invalid path: {}", .0.summary())]
    InvalidPath(ValidityReport),
    #[error("map file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("map file format: {0}")]
    Format(#[from] serde_json::Error),
}

fn format_cells(cells: &[Cell]) -> String {
    const SHOWN: usize = 8;
    let mut s: Vec<String> = cells.iter().take(SHOWN).map(|c| c.to_string()).collect();
    if cells.len() > SHOWN {
        s.push(format!("... ({} cells total)", cells.len()));
    }
    s.join(", ")
}

/// A grid position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub row: i32,
    pub col: i32,
}

impl Cell {
    pub const fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// Up, down, left, right.
    pub fn neighbors(self) -> [Cell; 4] {
        [
            Cell::new(self.row - 1, self.col),
            Cell::new(self.row + 1, self.col),
            Cell::new(self.row, self.col - 1),
            Cell::new(self.row, self.col + 1),
        ]
    }
}

impl From<[i32; 2]> for Cell {
    fn from([row, col]: [i32; 2]) -> Self {
        Cell::new(row, col)
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Ordered waypoint sequence. Four-connectivity is checked by
/// [`validate_path`], not enforced on construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory(Vec<Cell>);

impl Trajectory {
    pub fn new(waypoints: Vec<Cell>) -> Self {
        Self(waypoints)
    }

    pub fn waypoints(&self) -> &[Cell] {
        &self.0
    }

    pub fn into_waypoints(self) -> Vec<Cell> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<Cell> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<Cell> {
        self.0.last().copied()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Cell> {
        self.0.iter()
    }
}

impl From<Vec<Cell>> for Trajectory {
    fn from(v: Vec<Cell>) -> Self {
        Self(v)
    }
}

impl FromIterator<Cell> for Trajectory {
    fn from_iter<I: IntoIterator<Item = Cell>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Obstacle density tiers used by the benchmark and the data collector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityTier {
    Sparse,
    Medium,
    Dense,
}

impl DensityTier {
    pub const ALL: [DensityTier; 3] = [DensityTier::Sparse, DensityTier::Medium, DensityTier::Dense];

    pub fn fraction(self) -> f64 {
        match self {
            DensityTier::Sparse => 0.05,
            DensityTier::Medium => 0.15,
            DensityTier::Dense => 0.25,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DensityTier::Sparse => "sparse",
            DensityTier::Medium => "medium",
            DensityTier::Dense => "dense",
        }
    }
}

impl std::str::FromStr for DensityTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sparse" => Ok(DensityTier::Sparse),
            "medium" => Ok(DensityTier::Medium),
            "dense" => Ok(DensityTier::Dense),
            other => Err(format!("unknown density tier `{other}` (expected sparse, medium or dense)")),
        }
    }
}

/// On-disk shape of a map: everything not listed in `obstacles` is free.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub obstacles: Vec<Cell>,
}

/// The static workspace: a total free/obstacle partition plus a start cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridMap {
    width: usize,
    height: usize,
    obstacle: Vec<bool>,
    start: Cell,
}

impl GridMap {
    pub fn new(
        width: usize,
        height: usize,
        obstacles: impl IntoIterator<Item = Cell>,
        start: Cell,
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::InvalidDimensions { width, height });
        }
        let mut map = GridMap { width, height, obstacle: vec![false; width * height], start };
        let start_idx = map.index(start).ok_or(GridError::StartOutOfBounds(start))?;
        for cell in obstacles {
            let idx = map.index(cell).ok_or(GridError::ObstacleOutOfBounds(cell))?;
            map.obstacle[idx] = true;
        }
        if map.obstacle[start_idx] {
            return Err(GridError::StartBlocked(start));
        }
        Ok(map)
    }

    /// An obstacle-free map.
    pub fn open(width: usize, height: usize, start: Cell) -> Result<Self, GridError> {
        Self::new(width, height, std::iter::empty(), start)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.row >= 0 && cell.col >= 0 && (cell.row as usize) < self.height && (cell.col as usize) < self.width
    }

    /// Row-major index of an in-bounds cell.
    pub fn index(&self, cell: Cell) -> Option<usize> {
        self.in_bounds(cell).then(|| cell.row as usize * self.width + cell.col as usize)
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index / self.width) as i32, (index % self.width) as i32)
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.index(cell).is_some_and(|i| !self.obstacle[i])
    }

    pub fn is_obstacle(&self, cell: Cell) -> bool {
        self.index(cell).is_some_and(|i| self.obstacle[i])
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.cell_count()).map(|i| self.cell_at(i))
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(|&c| self.is_free(c))
    }

    pub fn obstacle_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(|&c| self.is_obstacle(c))
    }

    pub fn free_count(&self) -> usize {
        self.obstacle.iter().filter(|&&o| !o).count()
    }

    pub fn obstacle_count(&self) -> usize {
        self.cell_count() - self.free_count()
    }

    /// Free four-neighbours in up/down/left/right order.
    pub fn free_neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        cell.neighbors().into_iter().filter(|&n| self.is_free(n))
    }

    /// BFS hop distances over free cells from `from`; `None` for unreachable
    /// or obstacle cells.
    pub fn distances_from(&self, from: Cell) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.cell_count()];
        let Some(src) = self.index(from).filter(|_| self.is_free(from)) else {
            return dist;
        };
        dist[src] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(cur) = queue.pop_front() {
            let d = dist[self.index(cur).unwrap()].unwrap();
            for n in self.free_neighbors(cur) {
                let ni = self.index(n).unwrap();
                if dist[ni].is_none() {
                    dist[ni] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Shortest four-connected free path from `from` to `to`, both included.
    pub fn shortest_path(&self, from: Cell, to: Cell) -> Option<Vec<Cell>> {
        if !self.is_free(from) || !self.is_free(to) {
            return None;
        }
        // BFS from the goal so the walk back from `from` reads forwards.
        let dist = self.distances_from(to);
        let mut d = dist[self.index(from)?]?;
        let mut path = vec![from];
        let mut cur = from;
        while d > 0 {
            cur = self
                .free_neighbors(cur)
                .find(|&n| dist[self.index(n).unwrap()] == Some(d - 1))
                .expect("bfs distances are consistent");
            path.push(cur);
            d -= 1;
        }
        Some(path)
    }

    /// Free cells not reachable from the start cell.
    pub fn unreachable_free_cells(&self) -> Vec<Cell> {
        let dist = self.distances_from(self.start);
        self.free_cells().filter(|&c| dist[self.index(c).unwrap()].is_none()).collect()
    }

    pub fn is_connected(&self) -> bool {
        self.unreachable_free_cells().is_empty()
    }

    /// Fails with the unreachable cells listed when the free region is split.
    pub fn ensure_connected(&self) -> Result<(), GridError> {
        let unreachable = self.unreachable_free_cells();
        if unreachable.is_empty() {
            Ok(())
        } else {
            Err(GridError::Disconnected { unreachable })
        }
    }

    pub fn to_file(&self) -> MapFile {
        MapFile {
            width: self.width,
            height: self.height,
            start: self.start,
            obstacles: self.obstacle_cells().collect(),
        }
    }

    pub fn from_file(file: &MapFile) -> Result<Self, GridError> {
        Self::new(file.width, file.height, file.obstacles.iter().copied(), file.start)
    }

    /// Canonical text form: fixed field order, obstacles in row-major order.
    pub fn to_text(&self) -> String {
        let obstacles: Vec<String> = self.obstacle_cells().map(|c| format!("[{}, {}]", c.row, c.col)).collect();
        format!(
            "{{\n  \"width\": {},\n  \"height\": {},\n  \"start\": [{}, {}],\n  \"obstacles\": [{}]\n}}\n",
            self.width,
            self.height,
            self.start.row,
            self.start.col,
            obstacles.join(", ")
        )
    }

    pub fn from_text(text: &str) -> Result<Self, GridError> {
        let file: MapFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GridError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// ASCII rendering: `#` obstacle, `.` free, `S` start.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height as i32 {
            for c in 0..self.width as i32 {
                let cell = Cell::new(r, c);
                out.push(if cell == self.start {
                    'S'
                } else if self.is_obstacle(cell) {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

impl Serialize for GridMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GridMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = MapFile::deserialize(d)?;
        GridMap::from_file(&file).map_err(serde::de::Error::custom)
    }
}

/// Random obstacle map whose free region is four-connected. The start is the
/// bottom-left cell. Layouts that split the free region are redrawn.
pub fn generate_map(width: usize, height: usize, obstacle_density: f64, seed: u64) -> Result<GridMap, GridError> {
    if width == 0 || height == 0 {
        return Err(GridError::InvalidDimensions { width, height });
    }
    if !(0.0..1.0).contains(&obstacle_density) {
        return Err(GridError::DensityOutOfRange(obstacle_density));
    }
    let total = width * height;
    let n_obstacles = (obstacle_density * total as f64).round() as usize;
    if n_obstacles >= total {
        return Err(GridError::TooDense { width, height, density: obstacle_density });
    }
    let start = Cell::new(height as i32 - 1, 0);
    let start_idx = start.row as usize * width;
    let mut candidates: Vec<usize> = (0..total).filter(|&i| i != start_idx).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let (chosen, _) = candidates.partial_shuffle(&mut rng, n_obstacles);
        let obstacles: Vec<Cell> = chosen.iter().map(|&i| Cell::new((i / width) as i32, (i % width) as i32)).collect();
        let map = GridMap::new(width, height, obstacles, start)?;
        if map.is_connected() {
            return Ok(map);
        }
    }
    Err(GridError::GenerationFailed { attempts: MAX_GENERATION_ATTEMPTS })
}

/// Outcome of checking a path against the hard constraints.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    /// Waypoints that sit on an obstacle cell.
    pub collisions: Vec<(usize, Cell)>,
    /// Indices `i` where waypoint `i-1` → `i` is not a single four-connected step.
    pub breaks: Vec<usize>,
    pub out_of_bounds: Vec<(usize, Cell)>,
}

impl ValidityReport {
    pub fn violation_count(&self) -> usize {
        self.collisions.len() + self.breaks.len() + self.out_of_bounds.len()
    }

    pub fn summary(&self) -> String {
        format!(
            "{} collision(s), {} connectivity break(s), {} out-of-bounds waypoint(s)",
            self.collisions.len(),
            self.breaks.len(),
            self.out_of_bounds.len()
        )
    }

    /// Human-readable violation text handed back to the proposer on
    /// regeneration; `None` for a valid path.
    pub fn feedback(&self, path: &Trajectory) -> Option<String> {
        if self.valid {
            return None;
        }
        let mut lines = Vec::new();
        for (_, cell) in &self.collisions {
            lines.push(format!("Error: path enters no-fly zone at coordinates {cell}"));
        }
        for (_, cell) in &self.out_of_bounds {
            lines.push(format!("Error: path leaves the map at coordinates {cell}"));
        }
        for &i in &self.breaks {
            let w = path.waypoints();
            lines.push(format!(
                "Error: path is not four-connected between {} and {} (step {i})",
                w[i - 1],
                w[i]
            ));
        }
        Some(lines.join("\n"))
    }
}

pub fn validate_path(map: &GridMap, path: &Trajectory) -> ValidityReport {
    let mut report = ValidityReport::default();
    for (i, &cell) in path.iter().enumerate() {
        if !map.in_bounds(cell) {
            report.out_of_bounds.push((i, cell));
        } else if map.is_obstacle(cell) {
            report.collisions.push((i, cell));
        }
        if i > 0 && path.waypoints()[i - 1].manhattan(cell) != 1 {
            report.breaks.push(i);
        }
    }
    report.valid = report.violation_count() == 0;
    report
}

/// `(|C_free|, |C_visited|, |C_revisited|)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageSets {
    pub free: usize,
    pub visited: usize,
    pub revisited: usize,
}

/// Per-cell visit counts. Obstacle cells always stay at zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoverageMap {
    width: usize,
    height: usize,
    counts: Vec<u32>,
}

impl CoverageMap {
    /// All cells unvisited.
    pub fn new(map: &GridMap) -> Self {
        Self::with_dimensions(map.width(), map.height())
    }

    pub fn with_dimensions(width: usize, height: usize) -> Self {
        Self { width, height, counts: vec![0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn check_dimensions(&self, map: &GridMap) -> Result<(), GridError> {
        if self.width != map.width() || self.height != map.height() {
            return Err(GridError::DimensionMismatch {
                got_w: self.width,
                got_h: self.height,
                want_w: map.width(),
                want_h: map.height(),
            });
        }
        Ok(())
    }

    pub fn count(&self, cell: Cell) -> u32 {
        if cell.row < 0 || cell.col < 0 || cell.row as usize >= self.height || cell.col as usize >= self.width {
            return 0;
        }
        self.counts[cell.row as usize * self.width + cell.col as usize]
    }

    /// Record one visit to a free cell.
    pub fn visit(&mut self, map: &GridMap, cell: Cell) -> Result<(), GridError> {
        self.check_dimensions(map)?;
        if !map.is_free(cell) {
            return Err(GridError::NotFree(cell));
        }
        self.counts[map.index(cell).unwrap()] += 1;
        Ok(())
    }

    /// New coverage with every waypoint counted once per occurrence.
    pub fn apply_path(&self, map: &GridMap, path: &Trajectory) -> Result<CoverageMap, GridError> {
        self.check_dimensions(map)?;
        let report = validate_path(map, path);
        if !report.valid {
            return Err(GridError::InvalidPath(report));
        }
        let mut next = self.clone();
        for &cell in path.iter() {
            next.counts[map.index(cell).unwrap()] += 1;
        }
        Ok(next)
    }

    /// Coverage after the vehicle flies `path` from its first waypoint.
    ///
    /// The first waypoint is where the vehicle already is; it is counted
    /// only if this coverage has not registered it yet. Every later waypoint
    /// is a move and is counted.
    pub fn simulate_plan(&self, map: &GridMap, path: &Trajectory) -> Result<CoverageMap, GridError> {
        match path.first() {
            Some(first) if self.count(first) > 0 => {
                let rest = Trajectory::new(path.waypoints()[1..].to_vec());
                self.check_dimensions(map)?;
                let report = validate_path(map, path);
                if !report.valid {
                    return Err(GridError::InvalidPath(report));
                }
                let mut next = self.clone();
                for &cell in rest.iter() {
                    next.counts[map.index(cell).unwrap()] += 1;
                }
                Ok(next)
            }
            _ => self.apply_path(map, path),
        }
    }

    pub fn visited_count(&self) -> usize {
        self.counts.iter().filter(|&&c| c >= 1).count()
    }

    pub fn revisited_count(&self) -> usize {
        self.counts.iter().filter(|&&c| c >= 2).count()
    }

    pub fn coverage_sets(&self, map: &GridMap) -> Result<CoverageSets, GridError> {
        self.check_dimensions(map)?;
        Ok(CoverageSets { free: map.free_count(), visited: self.visited_count(), revisited: self.revisited_count() })
    }

    /// Nonzero entries as `(cell, count)` in row-major order.
    pub fn nonzero(&self) -> impl Iterator<Item = (Cell, u32)> + '_ {
        self.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(move |(i, &c)| {
            (Cell::new((i / self.width) as i32, (i % self.width) as i32), c)
        })
    }
}

pub fn coverage_sets(coverage: &CoverageMap, map: &GridMap) -> Result<CoverageSets, GridError> {
    coverage.coverage_sets(map)
}
