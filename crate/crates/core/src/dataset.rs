//! (map, instruction, best trajectory) records for instruction tuning.
//!
//! Each record is self-contained: it embeds the full map, the search
//! configuration and the compliance used for its score, so the score can be
//! recomputed from the record alone. Episodes start from a fresh mission: only
//! the start cell is visited.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{generate_map, CoverageMap, GridError, GridMap, MapFile, Trajectory};
use crate::mcts::{check_candidate, mix_seed, run_search, score_node, MctsConfig};
use crate::proposer::{build_prompt, serialize_trajectory, Instruction, PlanningContext, Proposer, ProposerAction};

/// Mixture of the operator instruction archetypes episodes draw from.
pub const DEFAULT_INSTRUCTIONS: &[&str] = &[
    "complete coverage",
    "cover the whole area without revisiting cells",
    "search the top-left quadrant carefully",
    "search the top-right quadrant carefully",
    "explore the bottom-left area thoroughly",
    "focus on the bottom-right quadrant",
    "pass through the top-left quickly",
    "pass through the bottom-right quickly",
    "rapid traversal of the top-right area",
    "search the quadrant II carefully",
];

const SCORE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed line {line} of {path}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("invalid collection setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    pub seed: u64,
    pub config: MctsConfig,
    pub config_digest: String,
    pub backend: String,
    pub rollouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub episode: usize,
    pub map: MapFile,
    pub instruction: String,
    pub trajectory: Trajectory,
    pub score: f64,
    /// Instruction compliance that entered `score`.
    pub compliance: f64,
    pub meta: RecordMeta,
    /// Planner prompt: map, coverage and instruction.
    pub input: String,
    /// Target text: the trajectory in wire format.
    pub output: String,
}

pub fn config_digest(config: &MctsConfig) -> String {
    let text = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Coverage an episode starts from: the start cell visited once.
pub fn episode_coverage(map: &GridMap) -> CoverageMap {
    let mut c = CoverageMap::new(map);
    c.visit(map, map.start()).expect("start is free");
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub episodes: usize,
    pub width: usize,
    pub height: usize,
    /// Obstacle densities episodes draw from uniformly.
    pub densities: Vec<f64>,
    pub instructions: Vec<String>,
    pub search: MctsConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            width: 10,
            height: 10,
            densities: vec![0.05, 0.15, 0.25],
            instructions: DEFAULT_INSTRUCTIONS.iter().map(|s| s.to_string()).collect(),
            search: MctsConfig::default(),
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.episodes == 0 {
            return Err(DatasetError::Setup("episodes must be >= 1".into()));
        }
        if self.instructions.iter().all(|s| s.trim().is_empty()) {
            return Err(DatasetError::Setup("instruction pool is empty".into()));
        }
        if self.densities.is_empty() {
            return Err(DatasetError::Setup("density list is empty".into()));
        }
        self.search.validate().map_err(|e| DatasetError::Setup(e.to_string()))
    }
}

/// Runs one episode: a fresh map, a sampled instruction and a full search.
pub fn run_episode<P: Proposer + ?Sized>(
    config: &CollectConfig,
    proposer: &P,
    base_seed: u64,
    episode: usize,
) -> Result<DatasetRecord, String> {
    let seed = mix_seed(base_seed, episode as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density = config.densities[rng.random_range(0..config.densities.len())];
    let pool: Vec<&String> = config.instructions.iter().filter(|s| !s.trim().is_empty()).collect();
    let text = pool[rng.random_range(0..pool.len())].clone();
    let map = generate_map(config.width, config.height, density, seed).map_err(|e| e.to_string())?;
    let coverage = episode_coverage(&map);
    let instruction = Instruction::new(text.clone(), 0).map_err(|e| e.to_string())?;
    let ctx = PlanningContext { map: &map, coverage: &coverage, instruction: &instruction, start: map.start() };
    let result = run_search(&ctx, proposer, &config.search, seed).map_err(|e| e.to_string())?;
    if let Some(cause) = result.aborted {
        return Err(format!("search aborted: {cause}"));
    }
    let node = result.tree.node(result.best_node);
    if !node.valid {
        return Err("no valid candidate".into());
    }
    Ok(DatasetRecord {
        episode,
        map: map.to_file(),
        instruction: text,
        output: serialize_trajectory(&result.best),
        trajectory: result.best,
        score: result.best_q,
        compliance: node.compliance,
        meta: RecordMeta {
            seed,
            config: config.search,
            config_digest: config_digest(&config.search),
            backend: proposer.id(),
            rollouts: result.rollouts_completed,
        },
        input: build_prompt(&ProposerAction::generate(), &ctx),
    })
}

/// Runs every episode, `jobs` at a time, handing records to `sink` in episode
/// order. Failed episodes are logged and skipped.
pub fn collect<P: Proposer + ?Sized>(
    config: &CollectConfig,
    proposer: &P,
    base_seed: u64,
    jobs: usize,
    sink: &mut dyn FnMut(&DatasetRecord) -> Result<(), DatasetError>,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    config.validate()?;
    let jobs = jobs.max(1);
    let mut out = Vec::with_capacity(config.episodes);
    let episodes: Vec<usize> = (0..config.episodes).collect();
    for chunk in episodes.chunks(jobs) {
        let results: Vec<(usize, Result<DatasetRecord, String>)> =
            chunk.par_iter().map(|&i| (i, run_episode(config, proposer, base_seed, i))).collect();
        for (i, r) in results {
            match r {
                Ok(rec) => {
                    sink(&rec)?;
                    out.push(rec);
                }
                Err(e) => log::warn!("episode {i} skipped: {e}"),
            }
        }
    }
    Ok(out)
}

/// Appends records one line at a time, flushing after each, so an
/// interrupted run leaves a readable file.
pub struct RecordWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RecordWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok(Self { out: BufWriter::new(file), path })
    }

    pub fn write(&mut self, record: &DatasetRecord) -> Result<(), DatasetError> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.out, "{line}").and_then(|_| self.out.flush()).map_err(io_err(&self.path))
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| DatasetError::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn suffix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardEntry {
    pub file: String,
    pub split: Split,
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub stem: String,
    pub total: usize,
    pub train: usize,
    pub val: usize,
    pub split_ratio: f64,
    pub shard_size: usize,
    pub seed: u64,
    pub shards: Vec<ShardEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExportOptions {
    /// Fraction of records that go to the training split.
    pub split_ratio: f64,
    /// Maximum records per shard file.
    pub shard_size: usize,
    pub seed: u64,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self { split_ratio: 0.9, shard_size: 1000, seed: 0 }
    }
}

pub fn manifest_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.manifest.json"))
}

/// Seeded shuffle into train/validation, sharding and manifest. Returns the
/// manifest, also written to `{stem}.manifest.json` in `dir`.
pub fn export(records: &[DatasetRecord], dir: &Path, stem: &str, opts: &ExportOptions) -> Result<Manifest, DatasetError> {
    if !(0.0..=1.0).contains(&opts.split_ratio) {
        return Err(DatasetError::Setup(format!("split ratio {} outside [0, 1]", opts.split_ratio)));
    }
    if opts.shard_size == 0 {
        return Err(DatasetError::Setup("shard size must be >= 1".into()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let n_train = (opts.split_ratio * records.len() as f64).round() as usize;
    let (train, val) = order.split_at(n_train);
    let mut shards = Vec::new();
    for (split, idx) in [(Split::Train, train), (Split::Val, val)] {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        for (k, chunk) in idx.chunks(opts.shard_size).enumerate() {
            let file = format!("{stem}.{k:04}.{}", split.suffix());
            let mut text = String::new();
            for &i in chunk {
                text.push_str(&serde_json::to_string(&records[i]).expect("record serializes"));
                text.push('\n');
            }
            let path = dir.join(&file);
            fs::write(&path, &text).map_err(io_err(&path))?;
            shards.push(ShardEntry { file, split, records: chunk.len(), sha256: hex::encode(Sha256::digest(text.as_bytes())) });
        }
    }
    let manifest = Manifest {
        stem: stem.to_string(),
        total: records.len(),
        train: train.len(),
        val: val.len(),
        split_ratio: opts.split_ratio,
        shard_size: opts.shard_size,
        seed: opts.seed,
        shards,
    };
    let path = manifest_path(dir, stem);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Format { path: path.to_path_buf(), line: e.line(), message: e.to_string() })
}

/// Reads every shard listed by a manifest, by split, in shard order.
pub fn import(manifest_file: impl AsRef<Path>) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>), DatasetError> {
    let manifest_file = manifest_file.as_ref();
    let dir = manifest_file.parent().unwrap_or(Path::new("."));
    let manifest = read_manifest(manifest_file)?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for shard in &manifest.shards {
        let recs = read_records(dir.join(&shard.file))?;
        match shard.split {
            Split::Train => train.extend(recs),
            Split::Val => val.extend(recs),
        }
    }
    Ok((train, val))
}

/// Re-checks one record; returns the reasons it fails.
pub fn check_record(rec: &DatasetRecord) -> Vec<String> {
    let mut reasons = Vec::new();
    let map = match GridMap::from_file(&rec.map) {
        Ok(m) => m,
        Err(e) => return vec![format!("map: {e}")],
    };
    if rec.instruction.trim().is_empty() {
        reasons.push("instruction: empty".into());
    }
    if let Err(feedback) = check_candidate(&map, map.start(), &rec.trajectory) {
        let kind = if feedback.contains("no-fly zone") {
            "collision"
        } else if feedback.contains("four-connected") {
            "connectivity"
        } else {
            "trajectory"
        };
        reasons.push(format!("{kind}: {}", feedback.replace('\n', "; ")));
    }
    if rec.output != serialize_trajectory(&rec.trajectory) {
        reasons.push("output: does not match trajectory".into());
    }
    if rec.meta.config_digest != config_digest(&rec.meta.config) {
        reasons.push("meta: config digest mismatch".into());
    }
    if !(0.0..=1.0).contains(&rec.compliance) {
        reasons.push(format!("compliance: {} outside [0, 1]", rec.compliance));
    }
    let rescored = score_node(&map, &episode_coverage(&map), map.start(), &rec.trajectory, &rec.meta.config.weights, rec.compliance);
    if (rescored - rec.score).abs() > SCORE_TOLERANCE {
        reasons.push(format!("score: stored {} but rescoring gives {rescored}", rec.score));
    }
    reasons
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub file: String,
    pub line: usize,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checked: usize,
    pub passed: usize,
    pub failures: Vec<Failure>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn check_lines(report: &mut ValidationReport, path: &Path, label: &str, text: &str) {
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.checked += 1;
        let reasons = match serde_json::from_str::<DatasetRecord>(line) {
            Ok(rec) => check_record(&rec),
            Err(e) => vec![format!("schema: {e}")],
        };
        if reasons.is_empty() {
            report.passed += 1;
        } else {
            log::debug!("{}:{} failed: {reasons:?}", path.display(), i + 1);
            report.failures.push(Failure { file: label.to_string(), line: i + 1, reasons });
        }
    }
}

/// Validates a manifest (every shard, digests and split bookkeeping) or a
/// single line-delimited record file.
pub fn validate_dataset(path: impl AsRef<Path>) -> Result<ValidationReport, DatasetError> {
    let path = path.as_ref();
    let mut report = ValidationReport::default();
    if !path.to_string_lossy().ends_with(".manifest.json") {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        check_lines(&mut report, path, &path.display().to_string(), &text);
        return Ok(report);
    }
    let manifest = read_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut episodes: [BTreeSet<usize>; 2] = Default::default();
    let mut counts = [0usize; 2];
    for shard in &manifest.shards {
        let shard_path = dir.join(&shard.file);
        let text = fs::read_to_string(&shard_path).map_err(io_err(&shard_path))?;
        if hex::encode(Sha256::digest(text.as_bytes())) != shard.sha256 {
            report.failures.push(Failure { file: shard.file.clone(), line: 0, reasons: vec!["digest: shard does not match manifest".into()] });
        }
        check_lines(&mut report, &shard_path, &shard.file, &text);
        let k = (shard.split == Split::Val) as usize;
        for rec in text.lines().filter_map(|l| serde_json::from_str::<DatasetRecord>(l).ok()) {
            episodes[k].insert(rec.episode);
            counts[k] += 1;
        }
    }
    if counts != [manifest.train, manifest.val] || counts[0] + counts[1] != manifest.total {
        report.failures.push(Failure {
            file: manifest.stem.clone(),
            line: 0,
            reasons: vec![format!("split: manifest lists {}/{} but shards hold {}/{}", manifest.train, manifest.val, counts[0], counts[1])],
        });
    }
    if episodes[0].intersection(&episodes[1]).next().is_some() {
        report.failures.push(Failure { file: manifest.stem.clone(), line: 0, reasons: vec!["split: train and val share episodes".into()] });
    }
    Ok(report)
}
