//! Shared fixtures for the criterion benchmarks.

use coverage_pilot::grid::{generate_map, DensityTier, GridMap};

/// The 10x10 benchmark map of a density tier.
pub fn tier_map(tier: DensityTier, seed: u64) -> GridMap {
    generate_map(10, 10, tier.fraction(), seed).expect("benchmark map")
}

pub const TIERS: [DensityTier; 3] = [DensityTier::Sparse, DensityTier::Medium, DensityTier::Dense];
