//! One thread per mission. Commands are applied between steps; snapshots
//! fan out through a bounded broadcast channel.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use coverage_pilot::localization::{
    cast_beams, compute_sdf, estimate_position, Pose, SdfGrid, SearchRegion, DEFAULT_SDF_RESOLUTION,
};
use coverage_pilot::mcts::mix_seed;
use coverage_pilot::mission::{write_replay, Mission, MissionError, MissionStatus, ReplayRecord};
use tokio::sync::{broadcast, oneshot};

use crate::snapshot::{ControlAck, ControlCommand, InstructionAck, PlannerActivity, PoseView, StateSnapshot};

pub const SCAN_BEAMS: usize = 36;
pub const SCAN_MAX_RANGE: f64 = 15.0;
pub const SCAN_NOISE: f64 = 0.1;

pub(crate) enum Command {
    Instruction { text: String, reply: oneshot::Sender<Result<InstructionAck, MissionError>> },
    Control { command: ControlCommand, reply: oneshot::Sender<ControlAck> },
    Shutdown,
}

/// Latest snapshot plus the broadcast sender. Publishing and subscribing
/// take the same lock, so a subscriber sees the current snapshot followed by
/// exactly the snapshots published after it.
pub struct Hub {
    latest: Mutex<StateSnapshot>,
    tx: broadcast::Sender<StateSnapshot>,
}

impl Hub {
    fn new(first: StateSnapshot, capacity: usize) -> Self {
        let (tx, _) = broadcast::channel(capacity.max(1));
        Self { latest: Mutex::new(first), tx }
    }

    pub(crate) fn publish(&self, mut snap: StateSnapshot) {
        let mut latest = self.latest.lock().unwrap();
        snap.seq = latest.seq + 1;
        *latest = snap.clone();
        let _ = self.tx.send(snap);
    }

    pub fn latest(&self) -> StateSnapshot {
        self.latest.lock().unwrap().clone()
    }

    pub fn subscribe(&self) -> (StateSnapshot, broadcast::Receiver<StateSnapshot>) {
        let latest = self.latest.lock().unwrap();
        (latest.clone(), self.tx.subscribe())
    }
}

pub struct MissionHandle {
    pub id: String,
    pub namespace: String,
    pub hub: Hub,
    commands: Mutex<mpsc::Sender<Command>>,
    replay: Arc<Mutex<Vec<ReplayRecord>>>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

pub struct RunOptions {
    pub step_interval: Duration,
    pub max_steps: u64,
    pub buffer: usize,
    pub seed: u64,
}

impl MissionHandle {
    pub fn spawn(id: String, namespace: String, mission: Mission, opts: RunOptions) -> Arc<Self> {
        let sdf = compute_sdf(&mission.state().map, DEFAULT_SDF_RESOLUTION).ok().filter(|s| !s.is_degenerate());
        let mut first = StateSnapshot::from_state(&id, mission.state());
        first.pose_estimate = pose_estimate(&mission, sdf.as_ref(), opts.seed);
        let (tx, rx) = mpsc::channel();
        let handle = Arc::new(Self {
            id,
            namespace,
            hub: Hub::new(first, opts.buffer),
            commands: Mutex::new(tx),
            replay: Arc::new(Mutex::new(mission.replay().to_vec())),
            thread: Mutex::new(None),
        });
        let worker = Worker { handle: handle.clone(), mission, sdf, paused: false, opts };
        let thread = std::thread::Builder::new()
            .name(format!("mission-{}", handle.id))
            .spawn(move || worker.run(rx))
            .expect("spawn mission thread");
        *handle.thread.lock().unwrap() = Some(thread);
        handle
    }

    pub(crate) fn send(&self, cmd: Command) -> bool {
        self.commands.lock().unwrap().send(cmd).is_ok()
    }

    pub fn status(&self) -> MissionStatus {
        self.hub.latest().status
    }

    /// Stops the mission thread and waits for it.
    pub fn shutdown(&self) {
        self.send(Command::Shutdown);
        if let Some(t) = self.thread.lock().unwrap().take() {
            let _ = t.join();
        }
    }

    /// Writes the replay recorded so far to `{dir}/{id}.replay.jsonl`.
    pub fn checkpoint(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(format!("{}.replay.jsonl", self.id));
        write_replay(&self.replay.lock().unwrap(), &path)?;
        Ok(path)
    }
}

fn pose_estimate(mission: &Mission, sdf: Option<&SdfGrid>, seed: u64) -> Option<PoseView> {
    let sdf = sdf?;
    let s = mission.state();
    let truth = Pose::at_cell(s.position, 0.0);
    let scan = cast_beams(&s.map, &truth, SCAN_BEAMS, SCAN_MAX_RANGE).ok()?.with_noise(SCAN_NOISE, mix_seed(seed, s.step));
    estimate_position(sdf, &scan, truth.heading, SearchRegion::around(truth.x, truth.y, 1.0)).ok().map(PoseView::from)
}

struct Worker {
    handle: Arc<MissionHandle>,
    mission: Mission,
    sdf: Option<SdfGrid>,
    paused: bool,
    opts: RunOptions,
}

impl Worker {
    fn snapshot(&self) -> StateSnapshot {
        let mut snap = StateSnapshot::from_state(&self.handle.id, self.mission.state());
        snap.paused = self.paused;
        snap.pose_estimate = pose_estimate(&self.mission, self.sdf.as_ref(), self.opts.seed);
        snap
    }

    fn publish(&self) {
        self.handle.hub.publish(self.snapshot());
    }

    fn idle(&self) -> bool {
        self.paused || self.mission.state().status.is_terminal()
    }

    fn run(mut self, rx: mpsc::Receiver<Command>) {
        let mut next_tick = Instant::now();
        loop {
            let cmd = if self.idle() {
                match rx.recv() {
                    Ok(c) => Some(c),
                    Err(_) => return,
                }
            } else {
                match rx.recv_timeout(next_tick.saturating_duration_since(Instant::now())) {
                    Ok(c) => Some(c),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => return,
                }
            };
            match cmd {
                Some(Command::Shutdown) => return,
                Some(cmd) => {
                    let was_paused = self.paused;
                    self.apply(cmd);
                    if was_paused && !self.paused {
                        next_tick = Instant::now();
                    }
                }
                None => {
                    self.step();
                    next_tick = Instant::now() + self.opts.step_interval;
                }
            }
        }
    }

    fn apply(&mut self, cmd: Command) {
        match cmd {
            Command::Instruction { text, reply } => {
                let result = self.mission.submit_instruction(&text).map(|step| InstructionAck {
                    accepted: true,
                    scheduled_step: step,
                    status: self.mission.state().status,
                });
                if result.is_ok() {
                    self.publish();
                }
                let _ = reply.send(result);
            }
            Command::Control { command, reply } => {
                let before = (self.paused, self.mission.state().status);
                match command {
                    ControlCommand::Pause => self.paused = true,
                    ControlCommand::Resume => self.paused = false,
                    ControlCommand::Abort => self.mission.abort(),
                }
                if before != (self.paused, self.mission.state().status) {
                    self.publish();
                }
                let _ = reply.send(ControlAck { command, status: self.mission.state().status, paused: self.paused });
            }
            Command::Shutdown => {}
        }
    }

    fn step(&mut self) {
        if self.mission.needs_replan() {
            let mut base = self.snapshot();
            base.status = MissionStatus::Planning;
            base.planner_activity = PlannerActivity::Searching { rollout: 0 };
            self.handle.hub.publish(base.clone());
            let hub = &self.handle.hub;
            let mut current = 0;
            self.mission.plan_step(&mut |record| {
                if record.rollout != current {
                    current = record.rollout;
                    let mut snap = base.clone();
                    snap.planner_activity = PlannerActivity::Searching { rollout: current };
                    hub.publish(snap);
                }
            });
        }
        if self.mission.state().status == MissionStatus::Flying {
            let _ = self.mission.execute_step();
        }
        if self.mission.state().step >= self.opts.max_steps {
            self.mission.stop("step budget exhausted");
        }
        {
            let mut replay = self.handle.replay.lock().unwrap();
            let have = replay.len();
            replay.extend_from_slice(&self.mission.replay()[have..]);
        }
        self.publish();
    }
}
