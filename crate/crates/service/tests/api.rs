use std::io::{BufRead, BufReader, Lines};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use coverage_pilot::grid::Cell;
use coverage_pilot::mission::MissionStatus;
use coverage_pilot::proposer::HeuristicProposer;
use coverage_pilot_service::snapshot::StateSnapshot;
use coverage_pilot_service::{serve, AppState, ServiceConfig};
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde_json::{json, Value};

struct Server {
    base: String,
    state: AppState,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Server {
    fn start() -> Self {
        let state = AppState::new(Arc::new(HeuristicProposer::default()), ServiceConfig::default());
        let (addr_tx, addr_rx) = std::sync::mpsc::channel::<SocketAddr>();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let served = state.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                serve(listener, served, async {
                    let _ = stopped.await;
                })
                .await
                .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self { base: format!("http://{addr}"), state, stop: Some(stop), thread: Some(thread) }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.state.close();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn client() -> Client {
    Client::builder().timeout(None).build().unwrap()
}

fn post(server: &Server, path: &str, body: Value) -> Response {
    client().post(server.url(path)).json(&body).send().unwrap()
}

fn start(server: &Server, body: Value) -> String {
    let resp = post(server, "/missions", body);
    assert_eq!(resp.status(), StatusCode::CREATED);
    resp.json::<Value>().unwrap()["id"].as_str().unwrap().to_string()
}

fn state(server: &Server, id: &str) -> StateSnapshot {
    client().get(server.url(&format!("/missions/{id}/state"))).send().unwrap().json().unwrap()
}

/// Minimal server-sent-events reader.
struct Events {
    lines: Lines<BufReader<Response>>,
}

impl Events {
    fn open(server: &Server, id: &str) -> Self {
        let resp = client().get(server.url(&format!("/missions/{id}/stream"))).send().unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        Self { lines: BufReader::new(resp).lines() }
    }

    fn next_event(&mut self) -> Option<(String, String)> {
        let (mut kind, mut data) = (String::from("message"), String::new());
        for line in self.lines.by_ref() {
            let line = line.ok()?;
            if line.is_empty() {
                if !data.is_empty() {
                    return Some((kind, data));
                }
                continue;
            }
            if let Some(v) = line.strip_prefix("event:") {
                kind = v.trim().to_string();
            } else if let Some(v) = line.strip_prefix("data:") {
                data.push_str(v.trim_start());
            }
        }
        None
    }

    fn next_snapshot(&mut self) -> StateSnapshot {
        loop {
            let (kind, data) = self.next_event().expect("stream ended");
            assert_ne!(kind, "resync", "unexpected resync");
            if kind == "snapshot" {
                return serde_json::from_str(&data).unwrap();
            }
        }
    }

    fn until(&mut self, mut pred: impl FnMut(&StateSnapshot) -> bool) -> Vec<StateSnapshot> {
        let mut seen = Vec::new();
        loop {
            let s = self.next_snapshot();
            let done = pred(&s);
            seen.push(s);
            if done {
                return seen;
            }
        }
    }
}

fn assert_gap_free(snaps: &[StateSnapshot]) {
    for w in snaps.windows(2) {
        assert_eq!(w[1].seq, w[0].seq + 1, "seq gap {} -> {}", w[0].seq, w[1].seq);
        assert!(w[1].step == w[0].step || w[1].step == w[0].step + 1, "step gap {} -> {}", w[0].step, w[1].step);
    }
}

fn generated(density: f64, interval_ms: u64) -> Value {
    json!({
        "map": { "generate": { "width": 10, "height": 10, "density": density, "seed": 4 } },
        "instruction": "complete coverage",
        "planner": "mcts",
        "seed": 1,
        "step_interval_ms": interval_ms,
        "config": { "search": { "n_rollouts": 4 } },
    })
}

#[test]
fn metadata_probe() {
    let server = Server::start();
    let v: Value = client().get(server.url("/")).send().unwrap().json().unwrap();
    assert_eq!(v["service"], "coverage-pilot");
    assert!(v["endpoints"].as_array().unwrap().iter().any(|e| e == "GET /missions/{id}/stream"));
}

#[test]
fn scripted_client_steers_a_running_mission() {
    let server = Server::start();
    let id = start(&server, generated(0.15, 40));
    let mut events = Events::open(&server, &id);
    let mut seen = events.until(|s| s.step >= 4 && s.status == MissionStatus::Flying);
    let before = seen.last().unwrap().clone();

    let text = "pass through the top-left quickly";
    let resp = post(&server, &format!("/missions/{id}/instruction"), json!({ "text": text }));
    assert_eq!(resp.status(), StatusCode::OK);
    let ack: Value = resp.json().unwrap();
    assert_eq!(ack["accepted"], true);
    let scheduled = ack["scheduled_step"].as_u64().unwrap();
    assert!(scheduled >= before.step);

    let after = events.until(|s| s.step > scheduled && s.status == MissionStatus::Flying);
    let tail = after.last().unwrap();
    seen.extend(after.iter().cloned());
    assert_gap_free(&seen);
    for s in &seen {
        let p = s.pose_estimate.expect("map has obstacles");
        let (x, y) = (s.position.col as f64 + 0.5, s.position.row as f64 + 0.5);
        assert!((p.x - x).hypot(p.y - y) < 0.5, "{p:?} vs {:?}", s.position);
    }
    assert!(after.iter().any(|s| s.last_instruction.as_ref().is_some_and(|i| i.text == text)));
    assert_eq!(tail.last_instruction.as_ref().unwrap().text, text);
    assert!(after.iter().any(|s| s.status == MissionStatus::Planning));

    // the plan flown after the instruction is not the old plan advanced
    let advanced = (tail.step - before.step) as usize;
    let old_rest: Vec<Cell> = before.plan.iter().skip(advanced).copied().collect();
    assert_ne!(tail.plan, old_rest, "plan did not change");
}

#[test]
fn empty_map_runs_to_full_coverage() {
    let server = Server::start();
    let body = json!({
        "map": { "file": { "width": 3, "height": 3, "start": [2, 0], "obstacles": [] } },
        "step_interval_ms": 1,
    });
    let id = start(&server, body);
    let mut events = Events::open(&server, &id);
    let seen = events.until(|s| s.status.is_terminal());
    assert_gap_free(&seen);
    let last = seen.last().unwrap();
    assert_eq!(last.status, MissionStatus::Complete);
    assert_eq!(last.cr, 100.0);
    assert_eq!(last.dr, 0.0);
    for s in &seen {
        let visited = s.coverage.iter().filter(|c| c.count >= 1).count();
        let revisited = s.coverage.iter().filter(|c| c.count >= 2).count();
        assert!((s.cr - 100.0 * visited as f64 / s.free_cells as f64).abs() < 1e-9);
        let dr = if visited == 0 { 0.0 } else { 100.0 * revisited as f64 / visited as f64 };
        assert!((s.dr - dr).abs() < 1e-9);
    }
    // no obstacles, so no distance field to localize against
    assert!(seen.iter().all(|s| s.pose_estimate.is_none()));

    // instruction to a finished mission with full coverage
    let resp = post(&server, &format!("/missions/{id}/instruction"), json!({ "text": "cover the left side" }));
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.json::<Value>().unwrap()["status"], "complete");
    std::thread::sleep(Duration::from_millis(50));
    assert_eq!(state(&server, &id).status, MissionStatus::Complete);
}

#[test]
fn late_and_concurrent_subscribers() {
    let server = Server::start();
    let id = start(&server, generated(0.05, 30));
    let mut first = Events::open(&server, &id);
    first.until(|s| s.step >= 3);
    let now = state(&server, &id);
    let mut late = Events::open(&server, &id);
    let head = late.next_snapshot();
    assert!(head.seq >= now.seq && head.step >= 3);

    let mut second = Events::open(&server, &id);
    let a = first.until(|s| s.step >= 10);
    let b = second.until(|s| s.step >= 10);
    let c = late.until(|s| s.step >= 10);
    let from = a[0].seq.max(b[0].seq).max(c[0].seq);
    let tail = |v: &[StateSnapshot]| v.iter().filter(|s| s.seq >= from).cloned().collect::<Vec<_>>();
    assert!(tail(&a).len() >= 5);
    assert_eq!(tail(&a), tail(&b));
    assert_eq!(tail(&c), tail(&b));
    assert_gap_free(&a);
    assert_gap_free(&b);
    assert_gap_free(&c);
}

#[test]
fn pause_resume_and_abort() {
    let server = Server::start();
    let id = start(&server, generated(0.15, 20));
    let mut events = Events::open(&server, &id);
    let mut seen = events.until(|s| s.step >= 2);

    let control = |cmd: &str| -> Value {
        let resp = post(&server, &format!("/missions/{id}/control"), json!({ "command": cmd }));
        assert_eq!(resp.status(), StatusCode::OK);
        resp.json().unwrap()
    };
    assert_eq!(control("pause")["paused"], true);
    let paused_at = state(&server, &id);
    std::thread::sleep(Duration::from_millis(200));
    assert_eq!(state(&server, &id).step, paused_at.step);
    let resumed = control("resume");
    assert_eq!(resumed["paused"], false);
    assert_eq!(control("resume")["paused"], false);
    seen.extend(events.until(|s| s.step >= paused_at.step + 3));

    let aborted = control("abort");
    assert_eq!(aborted["status"], "failed");
    seen.extend(events.until(|s| s.status.is_terminal()));
    assert_gap_free(&seen);
    let last = seen.last().unwrap();
    assert_eq!(last.status, MissionStatus::Failed);
    assert_eq!(last.failure.as_deref(), Some("aborted"));
    assert!(seen.iter().any(|s| s.paused));

    let resp = post(&server, &format!("/missions/{id}/instruction"), json!({ "text": "keep going" }));
    assert_eq!(resp.status(), StatusCode::CONFLICT);
}

#[test]
fn one_running_mission_per_namespace() {
    let server = Server::start();
    let first = start(&server, generated(0.05, 500));
    let resp = post(&server, "/missions", generated(0.05, 500));
    assert_eq!(resp.status(), StatusCode::CONFLICT);
    assert!(resp.json::<Value>().unwrap()["error"].as_str().unwrap().contains(&first));

    let mut other = generated(0.05, 500);
    other["namespace"] = json!("lab");
    let lab = start(&server, other);
    assert!(lab.starts_with("lab-"));

    let mut replace = generated(0.05, 500);
    replace["replace"] = json!(true);
    let second = start(&server, replace);
    assert_ne!(second, first);
    let deadline = Instant::now() + Duration::from_secs(5);
    while state(&server, &first).status != MissionStatus::Failed {
        assert!(Instant::now() < deadline, "replaced mission still running");
        std::thread::sleep(Duration::from_millis(10));
    }

    let dir = std::env::temp_dir().join(format!("cp-checkpoint-{}", std::process::id()));
    let written = server.state.checkpoint(&dir).unwrap();
    let names: Vec<String> = written.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    let mut want = vec![format!("{lab}.replay.jsonl"), format!("{second}.replay.jsonl")];
    want.sort();
    assert_eq!(names, want);
    let text = std::fs::read_to_string(&written[0]).unwrap();
    assert!(text.lines().count() >= 1);
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn rejected_requests() {
    let server = Server::start();
    let bad_map = json!({ "map": { "generate": { "width": "ten", "height": 10, "density": 0.1, "seed": 0 } } });
    let resp = post(&server, "/missions", bad_map);
    assert!(resp.status().is_client_error());
    let msg = resp.json::<Value>().unwrap()["error"].as_str().unwrap().to_string();
    assert!(msg.contains("map.generate.width"), "{msg}");

    let blocked = json!({ "map": { "file": { "width": 3, "height": 3, "start": [0, 0], "obstacles": [[0, 0]] } } });
    let resp = post(&server, "/missions", blocked);
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    assert!(resp.json::<Value>().unwrap()["error"].as_str().unwrap().starts_with("map:"));

    let walled = json!({ "map": { "file": { "width": 3, "height": 3, "start": [0, 0], "obstacles": [[0, 1], [1, 0]] } } });
    let resp = post(&server, "/missions", walled);
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    assert!(resp.json::<Value>().unwrap()["error"].as_str().unwrap().contains("unreachable"));

    let mut planner = generated(0.05, 100);
    planner["planner"] = json!("greedy");
    let resp = post(&server, "/missions", planner);
    assert!(resp.status().is_client_error());
    assert!(resp.json::<Value>().unwrap()["error"].as_str().unwrap().contains("planner"));

    let id = start(&server, generated(0.05, 100));
    let resp = post(&server, &format!("/missions/{id}/instruction"), json!({ "text": "  " }));
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let resp = post(&server, &format!("/missions/{id}/control"), json!({ "command": "jump" }));
    assert!(resp.status().is_client_error());

    assert_eq!(client().get(server.url("/missions/nope/state")).send().unwrap().status(), StatusCode::NOT_FOUND);
    assert_eq!(client().get(server.url("/missions/nope/stream")).send().unwrap().status(), StatusCode::NOT_FOUND);
    let resp = post(&server, "/missions/nope/instruction", json!({ "text": "x" }));
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
}
