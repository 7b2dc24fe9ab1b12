//! `coverage-pilot`: simulate missions, run searches, collect datasets, run
//! benchmarks, serve the ground station and validate datasets.
//!
//! Exit codes: 0 success, 1 mission or search failure, 2 configuration error.

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use coverage_pilot::benchmark::{run_benchmark, BenchConfig};
use coverage_pilot::dataset::{
    collect, export, manifest_path, validate_dataset, CollectConfig, DatasetError, ExportOptions, RecordWriter,
    ValidationReport,
};
use coverage_pilot::grid::{generate_map, CoverageMap, GridMap};
use coverage_pilot::mcts::{run_search_with, write_rollout_log, RandomChooser, mix_seed};
use coverage_pilot::mission::{default_max_steps, write_replay, Mission, MissionConfig, MissionError, MissionStatus, PlannerKind};
use coverage_pilot::proposer::{
    HeuristicProposer, Instruction, PlanningContext, Proposer, RemoteConfig, RemoteProposer, ENV_API_BASE, ENV_API_KEY,
    ENV_MODEL,
};
use coverage_pilot_service::{AppState, ServiceConfig, ADDR_ENV, DEFAULT_ADDR};
use serde_json::json;

use config::{pick, BackendKind, Density, FileConfig, Format};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Failure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "coverage-pilot", version, about = "Tree-search coverage planning for a single aerial vehicle")]
struct Cli {
    /// TOML configuration file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads for bench and collect.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Proposer backend. The remote backend reads COVERAGE_PILOT_API_BASE,
    /// COVERAGE_PILOT_API_KEY and COVERAGE_PILOT_MODEL.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fly one mission and write its replay file.
    Simulate(SimulateArgs),
    /// Run one search from the map start and print the best trajectory.
    Search(SearchArgs),
    /// Collect search episodes into a sharded dataset.
    Collect(CollectArgs),
    /// Benchmark planners over obstacle densities.
    Bench(BenchArgs),
    /// Serve the ground-station API.
    Serve(ServeArgs),
    /// Check a dataset manifest or record file.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct MapArgs {
    /// Map file; a random map is generated when absent.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Obstacle density: sparse, medium, dense or a fraction.
    #[arg(long)]
    density: Option<Density>,
    /// Seed of the generated map; defaults to --seed.
    #[arg(long)]
    map_seed: Option<u64>,
}

#[derive(Args)]
struct PlannerArgs {
    #[arg(long)]
    planner: Option<PlannerKind>,
    /// Rollouts per search.
    #[arg(long)]
    rollouts: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    map: MapArgs,
    #[command(flatten)]
    planner: PlannerArgs,
    #[arg(long)]
    instruction: Option<String>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Replay output (one JSON line per step).
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    map: MapArgs,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    instruction: Option<String>,
    /// Write one JSON line per expansion.
    #[arg(long)]
    rollout_log: Option<PathBuf>,
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    episodes: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// File name stem of records, shards and manifest.
    #[arg(long)]
    stem: Option<String>,
    #[arg(long)]
    split_ratio: Option<f64>,
    #[arg(long)]
    shard_size: Option<usize>,
    #[arg(long)]
    rollouts: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated densities: sparse, medium, dense or fractions.
    #[arg(long, value_delimiter = ',')]
    densities: Option<Vec<Density>>,
    /// Comma-separated planners: mcts, single-shot.
    #[arg(long, value_delimiter = ',')]
    planners: Option<Vec<PlannerKind>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    rollouts: Option<usize>,
    /// Directory for bench.txt, bench.csv and bench.trials.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record planning latency. Off makes the output reproducible.
    #[arg(long, value_parser = parse_switch)]
    latency: Option<bool>,
}

#[derive(Args)]
struct ServeArgs {
    /// Listen address.
    #[arg(long, env = ADDR_ENV)]
    addr: Option<String>,
    #[arg(long)]
    step_interval_ms: Option<u64>,
    /// Where in-flight missions are checkpointed on shutdown.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Manifest (`*.manifest.json`) or record file.
    path: PathBuf,
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(format!("expected on or off, got `{s}`")),
    }
}

struct Ctx {
    file: FileConfig,
    seed: u64,
    format: Format,
    jobs: usize,
    backend: BackendKind,
}

impl Ctx {
    fn mission_config(&self, planner: &PlannerArgs) -> Result<MissionConfig, CliError> {
        let mut cfg = self.file.mission.unwrap_or_default();
        if let Some(p) = planner.planner {
            cfg.planner = p;
        }
        if let Some(n) = planner.rollouts {
            cfg.search.n_rollouts = n;
        }
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn proposer(&self, terminal_cr: f64) -> Result<Arc<dyn Proposer>, CliError> {
        match self.backend {
            BackendKind::Heuristic => Ok(Arc::new(HeuristicProposer::new(terminal_cr))),
            BackendKind::Remote => {
                let b = &self.file.backend;
                let env = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
                let missing = |name: &str| CliError::Config(format!("remote backend: {name} is not set"));
                let base = b.base_url.clone().or_else(|| env(ENV_API_BASE)).ok_or_else(|| missing(ENV_API_BASE))?;
                let key = env(ENV_API_KEY).ok_or_else(|| missing(ENV_API_KEY))?;
                let model = b.model.clone().or_else(|| env(ENV_MODEL)).ok_or_else(|| missing(ENV_MODEL))?;
                let mut rc = RemoteConfig::new(base, key, model);
                if let Some(t) = b.temperature {
                    rc.temperature = t;
                }
                if let Some(t) = b.timeout_secs {
                    rc.timeout = Duration::from_secs_f64(t);
                }
                if let Some(r) = b.max_retries {
                    rc.max_retries = r;
                }
                let p = RemoteProposer::new(rc).map_err(|e| CliError::Config(e.to_string()))?;
                Ok(Arc::new(p))
            }
        }
    }

    fn map(&self, args: &MapArgs) -> Result<GridMap, CliError> {
        let m = &self.file.map;
        if let Some(path) = args.map.as_ref().or(m.file.as_ref()) {
            return GridMap::load(path).map_err(|e| CliError::Config(format!("map {}: {e}", path.display())));
        }
        let density = pick(args.density.map(|d| d.0), m.density, 0.15);
        if !(0.0..1.0).contains(&density) {
            return Err(CliError::Config(format!("density {density} outside [0, 1)")));
        }
        generate_map(
            pick(args.width, m.width, 10),
            pick(args.height, m.height, 10),
            density,
            pick(args.map_seed, m.seed, self.seed),
        )
        .map_err(|e| CliError::Config(format!("map: {e}")))
    }

    /// Prints the plain text or the JSON value, depending on `--format`.
    fn emit(&self, plain: &str, value: serde_json::Value) {
        let mut out = std::io::stdout().lock();
        let _ = match self.format {
            Format::Plain => write!(out, "{plain}"),
            Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("json")),
        };
        let _ = out.flush();
    }
}

fn launch_error(e: MissionError) -> CliError {
    match e {
        MissionError::Disconnected(cells) => {
            let list: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
            CliError::Config(format!(
                "map: {} free cell(s) are unreachable from the start: {}",
                cells.len(),
                list.join(" ")
            ))
        }
        e => CliError::Config(e.to_string()),
    }
}

fn simulate(ctx: &Ctx, args: &SimulateArgs) -> Result<(), CliError> {
    let s = &ctx.file.simulate;
    let map = ctx.map(&args.map)?;
    let cfg = ctx.mission_config(&args.planner)?;
    let instruction = pick(args.instruction.clone(), s.instruction.clone(), "complete coverage".into());
    let max_steps = pick(args.max_steps, s.max_steps, default_max_steps(&map));
    let replay = pick(args.replay.clone(), s.replay.clone(), PathBuf::from("replay.jsonl"));
    let proposer = ctx.proposer(cfg.search.terminal_cr)?;
    let mut mission = Mission::launch(map, &instruction, proposer, cfg, ctx.seed).map_err(launch_error)?;
    mission.run(max_steps);
    write_replay(mission.replay(), &replay)
        .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", replay.display())))?;
    let st = mission.state();
    let status = serde_json::to_value(st.status).unwrap();
    let plain = format!(
        "status {}\nCR {:.1}\nDR {:.1}\nsteps {}\nplans {}\nreplay {}\n",
        status.as_str().unwrap(),
        st.cr(),
        st.dr(),
        st.step,
        st.plans_made,
        replay.display()
    );
    ctx.emit(
        &plain,
        json!({
            "status": st.status, "cr": st.cr(), "dr": st.dr(), "steps": st.step, "plans": st.plans_made,
            "collided": st.collided, "failure": st.failure, "replay": replay,
        }),
    );
    match st.status {
        MissionStatus::Complete => Ok(()),
        MissionStatus::Failed => Err(CliError::Failure(format!("mission failed: {}", st.failure.as_deref().unwrap_or("unknown")))),
        _ => Err(CliError::Failure(format!("coverage target not reached within {max_steps} steps"))),
    }
}

fn search(ctx: &Ctx, args: &SearchArgs) -> Result<(), CliError> {
    let s = &ctx.file.search;
    let map = ctx.map(&args.map)?;
    let cfg = ctx.mission_config(&PlannerArgs { planner: None, rollouts: args.rollouts })?;
    let text = pick(args.instruction.clone(), s.instruction.clone(), "complete coverage".into());
    let instruction = Instruction::new(text, 0).map_err(|e| CliError::Config(e.to_string()))?;
    map.ensure_connected().map_err(|e| CliError::Config(format!("map: {e}")))?;
    let mut coverage = CoverageMap::new(&map);
    coverage.visit(&map, map.start()).expect("start is free");
    let ctx_plan = PlanningContext { map: &map, coverage: &coverage, instruction: &instruction, start: map.start() };
    let proposer = ctx.proposer(cfg.search.terminal_cr)?;
    let mut chooser = RandomChooser::new(mix_seed(ctx.seed, u64::MAX));
    let result = run_search_with(&ctx_plan, proposer.as_ref(), &cfg.search, ctx.seed, &mut chooser, &mut |_| {})
        .map_err(|e| CliError::Failure(format!("search failed: {e}")))?;
    if let Some(path) = args.rollout_log.as_ref().or(s.rollout_log.as_ref()) {
        write_rollout_log(&result.rollout_log, path)
            .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))?;
    }
    let valid = result.tree.node(result.best_node).valid;
    let cells: Vec<String> = result.best.iter().map(|c| c.to_string()).collect();
    let plain = format!(
        "best_q {:.6}\nrollouts {}\ncandidates {}\nlength {}\ntrajectory {}\n",
        result.best_q,
        result.rollouts_completed,
        result.candidates.len(),
        result.best.len(),
        cells.join(" ")
    );
    ctx.emit(
        &plain,
        json!({
            "best_q": result.best_q, "best": result.best, "valid": valid,
            "rollouts": result.rollouts_completed, "aborted": result.aborted,
            "candidates": result.candidates.iter().map(|c| json!({ "node": c.node, "q": c.q, "valid": c.valid })).collect::<Vec<_>>(),
        }),
    );
    match (&result.aborted, valid) {
        (_, false) => Err(CliError::Failure("search produced no valid trajectory".into())),
        (Some(cause), true) => {
            log::warn!("search stopped early: {cause}");
            Ok(())
        }
        _ => Ok(()),
    }
}

fn collect_cmd(ctx: &Ctx, args: &CollectArgs) -> Result<(), CliError> {
    let c = &ctx.file.collect;
    let defaults = CollectConfig::default();
    let mut search = ctx.file.mission.unwrap_or_default().search;
    if let Some(n) = args.rollouts {
        search.n_rollouts = n;
    }
    let cfg = CollectConfig {
        episodes: pick(args.episodes, c.episodes, defaults.episodes),
        width: c.width.unwrap_or(defaults.width),
        height: c.height.unwrap_or(defaults.height),
        densities: c.densities.as_ref().map(|d| d.iter().map(|d| d.0).collect()).unwrap_or(defaults.densities),
        instructions: c.instructions.clone().unwrap_or(defaults.instructions),
        search,
    };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let opts = ExportOptions {
        split_ratio: pick(args.split_ratio, c.split_ratio, ExportOptions::default().split_ratio),
        shard_size: pick(args.shard_size, c.shard_size, ExportOptions::default().shard_size),
        seed: ctx.seed,
    };
    if !(0.0..=1.0).contains(&opts.split_ratio) || opts.shard_size == 0 {
        return Err(CliError::Config("split_ratio must lie in [0, 1] and shard_size be >= 1".into()));
    }
    let out = pick(args.out.clone(), c.out.clone(), PathBuf::from("dataset"));
    let stem = pick(args.stem.clone(), c.stem.clone(), "dataset".into());
    let proposer = ctx.proposer(cfg.search.terminal_cr)?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;
    let records_path = out.join(format!("{stem}.records.jsonl"));
    let mut writer = RecordWriter::create(&records_path).map_err(|e| CliError::Config(e.to_string()))?;

    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
        signal_hook::flag::register(sig, stop.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    }
    let plain = ctx.format == Format::Plain;
    let mut sink = |r: &coverage_pilot::dataset::DatasetRecord| {
        writer.write(r)?;
        if plain {
            println!("episode {} score {:.6} rollouts {} instruction {:?}", r.episode, r.score, r.meta.rollouts, r.instruction);
        }
        if stop.load(Ordering::SeqCst) {
            return Err(DatasetError::Setup("interrupted".into()));
        }
        Ok(())
    };
    let records = match collect(&cfg, proposer.as_ref(), ctx.seed, ctx.jobs, &mut sink) {
        Ok(r) => r,
        Err(DatasetError::Setup(m)) if m == "interrupted" => {
            return Err(CliError::Failure(format!(
                "interrupted; completed records are in {}",
                records_path.display()
            )))
        }
        Err(e) => return Err(CliError::Failure(e.to_string())),
    };
    let manifest = export(&records, &out, &stem, &opts).map_err(|e| CliError::Failure(e.to_string()))?;
    let mpath = manifest_path(&out, &stem);
    let report = validate_dataset(&mpath).map_err(|e| CliError::Failure(e.to_string()))?;
    ctx.emit(
        &format!(
            "records {} train {} val {} shards {}\nmanifest {}\nvalidated {}/{}\n",
            manifest.total,
            manifest.train,
            manifest.val,
            manifest.shards.len(),
            mpath.display(),
            report.passed,
            report.checked
        ),
        json!({
            "records": records.iter().map(|r| json!({ "episode": r.episode, "score": r.score, "rollouts": r.meta.rollouts })).collect::<Vec<_>>(),
            "manifest": mpath, "train": manifest.train, "val": manifest.val, "validation": report,
        }),
    );
    if report.ok() {
        Ok(())
    } else {
        Err(CliError::Failure(format!("{} record(s) failed validation", report.failures.len())))
    }
}

fn bench(ctx: &Ctx, args: &BenchArgs) -> Result<(), CliError> {
    let b = &ctx.file.bench;
    let defaults = BenchConfig::default();
    let mut mission = ctx.file.mission.unwrap_or_default();
    if let Some(n) = args.rollouts {
        mission.search.n_rollouts = n;
    }
    let cfg = BenchConfig {
        densities: pick(args.densities.clone(), b.densities.clone(), Vec::new()).iter().map(|d| d.0).collect(),
        planners: pick(args.planners.clone(), b.planners.clone(), defaults.planners.clone()),
        trials: pick(args.trials, b.trials, defaults.trials),
        width: b.width.unwrap_or(defaults.width),
        height: b.height.unwrap_or(defaults.height),
        instruction: b.instruction.clone().unwrap_or(defaults.instruction.clone()),
        mission,
        max_steps: None,
        measure_latency: pick(args.latency, b.latency, true),
    };
    let cfg = if cfg.densities.is_empty() { BenchConfig { densities: defaults.densities, ..cfg } } else { cfg };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let proposer = ctx.proposer(cfg.mission.search.terminal_cr)?;
    let table = run_benchmark(&cfg, proposer, ctx.seed, ctx.jobs).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(dir) = args.out.as_ref().or(b.out.as_ref()) {
        write_files(dir, &[
            ("bench.txt", table.to_text()),
            ("bench.csv", table.to_csv()),
            ("bench.trials.jsonl", table.per_trial_jsonl()),
        ])?;
    }
    ctx.emit(&table.to_text(), serde_json::to_value(&table).unwrap());
    Ok(())
}

fn write_files(dir: &Path, files: &[(&str, String)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn serve(ctx: &Ctx, args: &ServeArgs) -> Result<(), CliError> {
    let s = &ctx.file.serve;
    let addr = pick(args.addr.clone(), s.addr.clone(), DEFAULT_ADDR.into());
    let checkpoint_dir = pick(args.checkpoint_dir.clone(), s.checkpoint_dir.clone(), PathBuf::from("."));
    let defaults = ServiceConfig::default();
    let mission = ctx.file.mission.unwrap_or_default();
    mission.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let config = ServiceConfig {
        step_interval: Duration::from_millis(pick(
            args.step_interval_ms,
            s.step_interval_ms,
            defaults.step_interval.as_millis() as u64,
        )),
        stream_buffer: s.stream_buffer.unwrap_or(defaults.stream_buffer),
        mission,
    };
    let state = AppState::new(ctx.proposer(mission.search.terminal_cr)?, config);
    let std_listener = std::net::TcpListener::bind(&addr).map_err(|e| {
        CliError::Config(if e.kind() == std::io::ErrorKind::AddrInUse {
            format!("cannot listen on {addr}: address already in use")
        } else {
            format!("cannot listen on {addr}: {e}")
        })
    })?;
    std_listener.set_nonblocking(true).map_err(|e| CliError::Config(e.to_string()))?;
    let local = std_listener.local_addr().map_err(|e| CliError::Config(e.to_string()))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Config(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::from_std(std_listener).map_err(|e| CliError::Config(e.to_string()))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
        };
        coverage_pilot_service::serve(listener, state.clone(), shutdown)
            .await
            .map_err(|e| CliError::Failure(format!("server error: {e}")))
    })?;
    let written = state.checkpoint(&checkpoint_dir).map_err(|e| CliError::Failure(format!("checkpoint failed: {e}")))?;
    for p in &written {
        println!("checkpoint {}", p.display());
    }
    state.close();
    Ok(())
}

fn validate(ctx: &Ctx, args: &ValidateArgs) -> Result<(), CliError> {
    let report: ValidationReport = validate_dataset(&args.path).map_err(|e| match e {
        DatasetError::Io { .. } => CliError::Config(e.to_string()),
        e => CliError::Failure(e.to_string()),
    })?;
    let mut plain = format!("checked {} passed {}\n", report.checked, report.passed);
    for f in &report.failures {
        plain.push_str(&format!("{}:{}: {}\n", f.file, f.line, f.reasons.join("; ")));
    }
    ctx.emit(&plain, serde_json::to_value(&report).unwrap());
    if report.ok() {
        Ok(())
    } else {
        Err(CliError::Failure(format!("{} of {} record(s) failed", report.failures.len(), report.checked)))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = config::load(cli.config.as_deref())?;
    let ctx = Ctx {
        seed: pick(cli.seed, file.seed, 0),
        format: pick(cli.format, file.format, Format::Plain),
        jobs: pick(cli.jobs, file.jobs, 1).max(1),
        backend: pick(cli.backend, file.backend.kind, BackendKind::Heuristic),
        file,
    };
    match &cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Search(a) => search(&ctx, a),
        Command::Collect(a) => collect_cmd(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
        Command::Validate(a) => validate(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = match &e {
                CliError::Config(m) => format!("configuration error: {m}"),
                CliError::Failure(m) => m.clone(),
            };
            eprintln!("coverage-pilot: {msg}");
            ExitCode::from(e.code())
        }
    }
}
