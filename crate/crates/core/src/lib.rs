pub mod benchmark;
pub mod dataset;
pub mod grid;
pub mod localization;
pub mod mcts;
pub mod metrics;
pub mod mission;
pub mod proposer;
