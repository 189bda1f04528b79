//! Drives a real `nerloop serve` process over HTTP, including killing it.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::time::{Duration, Instant};

use nerloop_core::AnnotationRecord;
use nerloop_service::api::{ModelInspection, NextSample, SubmitAck, TaskOverview};
use nerloop_service::Project;
use serde_json::Value;

pub const ALICE: &str = "tok-alice";
pub const ADMIN: &str = "tok-admin";

/// A project whose retrain takes a few seconds: a large seed set and many
/// epochs per round.
pub const SLOW_RETRAIN: &str = r#"
[corpus.synthetic]
rng_seed = 11

[corpus.synthetic.config]
seed_sentences = 300
pool_sentences = 40
validation_sentences = 0
test_sentences = 20

[loop]
strategy = "ltp"
batch_size = 4
rounds = 3
initial_epochs = 2
epochs = 150

[service]
bind = "127.0.0.1:0"
admin_token = "tok-admin"

[service.annotators]
alice = "tok-alice"
"#;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub struct Server {
    child: Child,
    _stdout: BufReader<ChildStdout>,
    pub addr: String,
}

impl Server {
    /// Starts `nerloop serve` and waits for its listening line.
    pub fn start(project: &Path, config: &Path) -> Result<Server, String> {
        let mut child = Command::new(env!("CARGO_BIN_EXE_nerloop"))
            .arg("serve")
            .arg(project)
            .arg("--config")
            .arg(config)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawn: {e}"))?;
        let mut stdout = BufReader::new(child.stdout.take().expect("piped"));
        let mut line = String::new();
        stdout.read_line(&mut line).map_err(|e| format!("read: {e}"))?;
        let Some(addr) = line.trim().strip_prefix("listening on http://") else {
            let _ = child.kill();
            return Err(format!("unexpected server output `{line}`"));
        };
        Ok(Server {
            addr: addr.to_string(),
            child,
            _stdout: stdout,
        })
    }

    /// SIGKILL: no shutdown hook runs.
    pub fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    /// SIGTERM and wait for a clean exit.
    pub fn terminate(mut self) -> Result<(), String> {
        Command::new("kill")
            .args(["-TERM", &self.child.id().to_string()])
            .status()
            .map_err(|e| format!("kill: {e}"))?;
        let status = self.child.wait().map_err(|e| format!("wait: {e}"))?;
        ensure!(status.success(), "server exited with {status}");
        Ok(())
    }

    pub fn request(&self, method: &str, path: &str, token: &str, body: Option<&str>) -> Result<(u16, String), String> {
        http(&self.addr, method, path, token, body)
    }

    pub fn get<T: serde::de::DeserializeOwned>(&self, path: &str, token: &str) -> Result<(T, String), String> {
        let (status, body) = self.request("GET", path, token, None)?;
        ensure!(status == 200, "GET {path}: {status} {body}");
        let v = serde_json::from_str(&body).map_err(|e| format!("GET {path}: {e}"))?;
        Ok((v, body))
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One HTTP/1.1 exchange on a fresh connection.
pub fn http(addr: &str, method: &str, path: &str, token: &str, body: Option<&str>) -> Result<(u16, String), String> {
    let mut s = TcpStream::connect(addr).map_err(|e| format!("connect {addr}: {e}"))?;
    s.set_read_timeout(Some(Duration::from_secs(60))).ok();
    let body = body.unwrap_or("");
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nx-annotator-token: {token}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).map_err(|e| format!("write: {e}"))?;
    let mut raw = String::new();
    s.read_to_string(&mut raw).map_err(|e| format!("read: {e}"))?;
    let (head, rest) = raw.split_once("\r\n\r\n").ok_or("no header terminator")?;
    let status: u16 = head
        .split_whitespace()
        .nth(1)
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| format!("bad status line in `{head}`"))?;
    Ok((status, rest.to_string()))
}

pub fn import(dir: &Path, experiment: &str) -> Result<(PathBuf, PathBuf), String> {
    let cfg = dir.join("experiment.toml");
    std::fs::write(&cfg, experiment).map_err(|e| e.to_string())?;
    let project = dir.join("project");
    let out = Command::new(env!("CARGO_BIN_EXE_nerloop"))
        .args(["import-corpus", "--config"])
        .arg(&cfg)
        .arg(&project)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "import-corpus: {}", String::from_utf8_lossy(&out.stderr));
    Ok((cfg, project))
}

fn wait_for_round(server: &Server, rounds: usize, limit: Duration) -> Result<(), String> {
    let t0 = Instant::now();
    loop {
        let (o, _): (TaskOverview, _) = server.get("/api/overview", ALICE)?;
        if o.rounds_completed >= rounds {
            return Ok(());
        }
        ensure!(t0.elapsed() < limit, "round {rounds} did not close within {limit:?}");
        std::thread::sleep(Duration::from_millis(100));
    }
}

/// Annotates a whole round over HTTP, kills the server right after the
/// acknowledgment that triggers retraining, restarts it and checks that
/// every acknowledged annotation survived exactly once and the retrain
/// resumed. Then checks that a save/restart cycle serves byte-identical
/// inspection output.
pub fn crash_between_ack_and_retrain(dir: &Path) -> Result<String, String> {
    let (cfg, project) = import(dir, SLOW_RETRAIN)?;
    let server = Server::start(&project, &cfg)?;
    let mut acked: Vec<AnnotationRecord> = Vec::new();
    let mut last: Option<SubmitAck> = None;
    loop {
        let (next, _): (NextSample, _) = server.get("/api/next-sample", ALICE)?;
        let NextSample::Sample(v) = next else { break };
        let rec = AnnotationRecord::new(&v.instance_id, "alice", v.suggested_tags.clone(), v.theta_version);
        let body = serde_json::to_string(&rec).unwrap();
        let (status, text) = server.request("POST", "/api/feedback", ALICE, Some(&body))?;
        ensure!(status == 200, "feedback: {status} {text}");
        acked.push(rec);
        last = Some(serde_json::from_str(&text).map_err(|e| e.to_string())?);
    }
    ensure!(acked.len() == 4, "expected a batch of 4, annotated {}", acked.len());
    ensure!(last.is_some_and(|a| a.retraining_started), "last ack did not start retraining");
    server.kill();

    // The dead server's files: the acknowledged annotations are there, the
    // round is not closed.
    {
        let p = Project::open(&project).map_err(|e| format!("reopen after kill: {e}"))?;
        ensure!(
            p.state().rounds_completed() == 0,
            "retrain finished before the kill; nothing was interrupted"
        );
        ensure!(p.all_annotations() == acked, "acknowledged annotations lost by the crash");
    }

    let server = Server::start(&project, &cfg)?;
    wait_for_round(&server, 1, Duration::from_secs(180))?;
    let (annotations, _): (Vec<AnnotationRecord>, _) = server.get("/api/admin/annotations", ADMIN)?;
    ensure!(annotations == acked, "history after restart differs from the acknowledged annotations");
    let (inspection, before): (ModelInspection, _) = server.get("/api/inspection", ALICE)?;
    ensure!(inspection.rounds.len() == 1, "expected one closed round");
    ensure!(inspection.rounds[0].queried == acked.len(), "closed round has the wrong batch");
    let (status, text) = server.request("POST", "/api/admin/save", ADMIN, None)?;
    ensure!(status == 200, "save: {status} {text}");
    server.terminate()?;

    let snapshot = std::fs::read(project.join("project.json")).map_err(|e| e.to_string())?;
    let server = Server::start(&project, &cfg)?;
    let (_, after): (Value, _) = server.get("/api/inspection", ALICE)?;
    ensure!(before == after, "inspection changed across save and restart");
    server.terminate()?;
    let resaved = std::fs::read(project.join("project.json")).map_err(|e| e.to_string())?;
    ensure!(snapshot == resaved, "snapshot bytes changed across load and save");
    Ok(format!(
        "{} acknowledged annotations survived SIGKILL, retrain resumed; inspection ({} bytes) and snapshot identical after save/load",
        acked.len(),
        before.len()
    ))
}
