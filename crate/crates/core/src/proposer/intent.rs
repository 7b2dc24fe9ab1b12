//! Keyword reading of operator instructions for the rule-based backend.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::grid::{Cell, CoverageMap, GridMap, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrant {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Quadrant {
    /// Top half is `2*row < height`, left half is `2*col < width`.
    pub fn contains(self, map: &GridMap, cell: Cell) -> bool {
        let top = 2 * (cell.row as i64) < map.height() as i64;
        let left = 2 * (cell.col as i64) < map.width() as i64;
        match self {
            Quadrant::TopLeft => top && left,
            Quadrant::TopRight => top && !left,
            Quadrant::BottomLeft => !top && left,
            Quadrant::BottomRight => !top && !left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Cover everything.
    Complete,
    /// Cover the named area first and fully.
    Focused,
    /// Cross the named area with minimal dwell.
    Rapid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Intent {
    pub mode: Mode,
    pub region: Option<Quadrant>,
}

static QUADRANT_NUMERAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bquadrant\s+(iv|iii|ii|i|1|2|3|4)\b").unwrap());
static RAPID: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(quick|quickly|rapid|rapidly|fast|pass through|transit|hurry)\b").unwrap());
static FOCUSED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(careful|carefully|focus|focused|thorough|thoroughly|search|dense|fine-grained|detailed)\b").unwrap()
});

fn parse_quadrant(text: &str) -> Option<Quadrant> {
    let norm = text.replace(['-', '_'], " ");
    let words = [
        (["top left", "upper left", "north west", "northwest"], Quadrant::TopLeft),
        (["top right", "upper right", "north east", "northeast"], Quadrant::TopRight),
        (["bottom left", "lower left", "south west", "southwest"], Quadrant::BottomLeft),
        (["bottom right", "lower right", "south east", "southeast"], Quadrant::BottomRight),
    ];
    let mut best: Option<(usize, Quadrant)> = None;
    for (names, q) in words {
        for name in names {
            if let Some(pos) = norm.find(name) {
                if best.is_none_or(|(p, _)| pos < p) {
                    best = Some((pos, q));
                }
            }
        }
    }
    if let Some(cap) = QUADRANT_NUMERAL.captures(&norm) {
        let pos = cap.get(0).unwrap().start();
        // Cartesian numbering: I top-right, II top-left, III bottom-left, IV bottom-right.
        let q = match &cap[1] {
            "i" | "1" => Quadrant::TopRight,
            "ii" | "2" => Quadrant::TopLeft,
            "iii" | "3" => Quadrant::BottomLeft,
            _ => Quadrant::BottomRight,
        };
        if best.is_none_or(|(p, _)| pos < p) {
            best = Some((pos, q));
        }
    }
    best.map(|(_, q)| q)
}

impl Intent {
    pub fn from_text(text: &str) -> Self {
        let lower = text.to_lowercase();
        let region = parse_quadrant(&lower);
        let mode = match region {
            None => Mode::Complete,
            Some(_) if RAPID.is_match(&lower) => Mode::Rapid,
            Some(_) if FOCUSED.is_match(&lower) => Mode::Focused,
            Some(_) => Mode::Focused,
        };
        Intent { mode, region }
    }

    pub fn in_region(&self, map: &GridMap, cell: Cell) -> bool {
        self.region.is_some_and(|q| q.contains(map, cell))
    }

    /// Rule-based compliance in `[0, 1]` for a path flown from `coverage`.
    ///
    /// Complete: fraction of free cells covered afterwards. Focused: fraction
    /// of the region's free cells covered. Rapid: one minus the fraction of
    /// waypoints spent inside the region.
    pub fn compliance(&self, map: &GridMap, coverage_after: &CoverageMap, path: &Trajectory) -> f64 {
        match (self.mode, self.region) {
            (Mode::Rapid, Some(_)) => {
                if path.is_empty() {
                    return 1.0;
                }
                let dwell = path.iter().filter(|&&c| self.in_region(map, c)).count();
                1.0 - dwell as f64 / path.len() as f64
            }
            (Mode::Focused, Some(_)) => {
                let (total, covered) = map
                    .free_cells()
                    .filter(|&c| self.in_region(map, c))
                    .fold((0usize, 0usize), |(t, v), c| (t + 1, v + (coverage_after.count(c) > 0) as usize));
                if total == 0 {
                    1.0
                } else {
                    covered as f64 / total as f64
                }
            }
            _ => {
                let free = map.free_count();
                let covered = map.free_cells().filter(|&c| coverage_after.count(c) > 0).count();
                covered as f64 / free as f64
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instruction_archetypes() {
        assert_eq!(Intent::from_text("complete coverage"), Intent { mode: Mode::Complete, region: None });
        assert_eq!(
            Intent::from_text("Search the top-left quadrant carefully"),
            Intent { mode: Mode::Focused, region: Some(Quadrant::TopLeft) }
        );
        assert_eq!(
            Intent::from_text("pass through the top-left quickly"),
            Intent { mode: Mode::Rapid, region: Some(Quadrant::TopLeft) }
        );
        assert_eq!(
            Intent::from_text("Search the quadrant II carefully"),
            Intent { mode: Mode::Focused, region: Some(Quadrant::TopLeft) }
        );
        assert_eq!(Intent::from_text("focused area exploration of quadrant iv").region, Some(Quadrant::BottomRight));
        assert_eq!(Intent::from_text("rapid traversal").mode, Mode::Complete);
        assert_eq!(Intent::from_text("Explore the bottom right").mode, Mode::Focused);
    }

    #[test]
    fn quadrants_partition_the_map() {
        let map = GridMap::open(5, 3, Cell::new(0, 0)).unwrap();
        for cell in map.cells() {
            let n = [Quadrant::TopLeft, Quadrant::TopRight, Quadrant::BottomLeft, Quadrant::BottomRight]
                .iter()
                .filter(|q| q.contains(&map, cell))
                .count();
            assert_eq!(n, 1);
        }
    }
}
