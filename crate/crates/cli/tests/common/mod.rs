#![allow(dead_code)]

use std::io::{BufRead, BufReader, Lines};
use std::path::Path;
use std::process::{Child, ChildStdout, Command, Output, Stdio};
use std::time::{Duration, Instant};

use reqwest::blocking::{Client, Response};

pub const BIN: &str = env!("CARGO_BIN_EXE_coverage-pilot");

/// The binary with a clean environment for remote credentials.
pub fn cmd(dir: &Path) -> Command {
    let mut c = Command::new(BIN);
    c.current_dir(dir)
        .env_remove("COVERAGE_PILOT_API_BASE")
        .env_remove("COVERAGE_PILOT_API_KEY")
        .env_remove("COVERAGE_PILOT_MODEL")
        .env_remove("COVERAGE_PILOT_ADDR")
        .env_remove("RUST_LOG");
    c
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    cmd(dir).args(args).output().expect("run binary")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

pub fn sigterm(child: &Child) {
    let ok = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().expect("kill").success();
    assert!(ok, "kill failed");
}

/// Waits for a child, killing it after `limit`.
pub fn wait_for(child: &mut Child, limit: Duration) -> std::process::ExitStatus {
    let deadline = Instant::now() + limit;
    loop {
        if let Some(s) = child.try_wait().unwrap() {
            return s;
        }
        if Instant::now() > deadline {
            let _ = child.kill();
            panic!("process did not exit within {limit:?}");
        }
        std::thread::sleep(Duration::from_millis(20));
    }
}

/// A `serve` child process bound to an ephemeral port.
pub struct Served {
    pub child: Child,
    pub base: String,
    pub out: Lines<BufReader<ChildStdout>>,
}

impl Served {
    pub fn start(dir: &Path, extra: &[&str]) -> Self {
        let mut child = cmd(dir)
            .args(["serve", "--addr", "127.0.0.1:0"])
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn serve");
        let mut out = BufReader::new(child.stdout.take().unwrap()).lines();
        let first = out.next().expect("serve output").unwrap();
        let base = first.strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected line {first}")).to_string();
        Self { child, base, out }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// Sends SIGTERM and returns the exit status plus remaining stdout.
    pub fn terminate(mut self) -> (std::process::ExitStatus, Vec<String>) {
        sigterm(&self.child);
        let status = wait_for(&mut self.child, Duration::from_secs(20));
        let rest = self.out.by_ref().map_while(Result::ok).collect();
        (status, rest)
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn client() -> Client {
    Client::builder().timeout(None).build().unwrap()
}

/// Minimal server-sent-events reader.
pub struct Events {
    lines: Lines<BufReader<Response>>,
}

impl Events {
    pub fn open(url: &str) -> Self {
        let resp = client().get(url).send().unwrap();
        assert!(resp.status().is_success(), "stream status {}", resp.status());
        Self { lines: BufReader::new(resp).lines() }
    }

    /// Next `(event, data)` pair.
    pub fn next_event(&mut self) -> Option<(String, String)> {
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
}

/// Every regular file under `dir` with its bytes, sorted by relative path.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
