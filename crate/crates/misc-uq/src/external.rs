//! Oracle backed by long-lived child processes speaking JSON lines.
//!
//! Request (child stdin): `{"id": 7, "fidelity": 1, "params": [..], "qois": [..]}`.
//! Response (child stdout): `{"id": 7, "values": [..]}` or `{"id": 7, "error": ".."}`.
//! Standard error is free-form; its tail is kept for diagnostics.
//!
//! A batch is split round-robin over the lanes, every lane receives all its
//! requests at once, and answers are matched by id, so a lane may answer out
//! of order. Any protocol violation, exit or timeout kills every lane; they
//! are respawned on the next batch.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use misc_uq_core::error::OracleError;
use misc_uq_core::oracle::{Backend, EvalResult};

const STDERR_TAIL: usize = 20;

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    fidelity: u32,
    params: &'a [f64],
    qois: &'a [String],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Response {
    id: u64,
    #[serde(default)]
    values: Option<Vec<f64>>,
    #[serde(default)]
    error: Option<String>,
}

struct Lane {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<VecDeque<String>>>,
    stderr_done: Arc<AtomicBool>,
}

impl Lane {
    /// Lets an exiting child finish writing to stderr before reading the tail.
    fn settle(&mut self) {
        let until = Instant::now() + Duration::from_millis(500);
        while Instant::now() < until {
            let exited = matches!(self.child.try_wait(), Ok(Some(_)));
            if exited && self.stderr_done.load(Ordering::Acquire) {
                break;
            }
            thread::sleep(Duration::from_millis(10));
        }
    }

    fn stderr_tail(&self) -> String {
        let tail = self
            .stderr
            .lock()
            .map(|t| t.iter().cloned().collect::<Vec<_>>().join("\n"));
        tail.unwrap_or_default()
    }
}

impl Drop for Lane {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Debug, Clone)]
pub struct ExternalOracle {
    command: Vec<String>,
    workdir: Option<PathBuf>,
    lanes: usize,
    timeout: Duration,
    state: Arc<Mutex<Vec<Lane>>>,
    next_id: Arc<AtomicU64>,
}

impl std::fmt::Debug for Lane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lane").field("pid", &self.child.id()).finish()
    }
}

impl ExternalOracle {
    pub fn new(command: Vec<String>, workdir: Option<PathBuf>, lanes: usize, timeout: Duration) -> Self {
        ExternalOracle {
            command,
            workdir,
            lanes: lanes.max(1),
            timeout,
            state: Arc::new(Mutex::new(Vec::new())),
            next_id: Arc::new(AtomicU64::new(0)),
        }
    }

    fn spawn(&self) -> Result<Lane, OracleError> {
        let (prog, args) = self
            .command
            .split_first()
            .ok_or_else(|| OracleError::Backend("empty oracle command".into()))?;
        let mut cmd = Command::new(prog);
        cmd.args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(dir) = &self.workdir {
            cmd.current_dir(dir);
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| OracleError::Backend(format!("cannot start {prog:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");

        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let tail = Arc::new(Mutex::new(VecDeque::new()));
        let sink = Arc::clone(&tail);
        let stderr_done = Arc::new(AtomicBool::new(false));
        let done = Arc::clone(&stderr_done);
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                log::debug!("oracle stderr: {line}");
                if let Ok(mut t) = sink.lock() {
                    if t.len() == STDERR_TAIL {
                        t.pop_front();
                    }
                    t.push_back(line);
                }
            }
            done.store(true, Ordering::Release);
        });
        Ok(Lane {
            child,
            stdin,
            lines,
            stderr: tail,
            stderr_done,
        })
    }

    fn run_batch(
        &self,
        lanes: &mut Vec<Lane>,
        fidelity: u32,
        points: &[Vec<f64>],
        qois: &[String],
    ) -> Result<Vec<EvalResult>, OracleError> {
        while lanes.len() < self.lanes.min(points.len()) {
            lanes.push(self.spawn()?);
        }
        let active = lanes.len().min(points.len());
        // id -> (point index, request line)
        let mut pending: Vec<BTreeMap<u64, (usize, String)>> = vec![BTreeMap::new(); active];
        for (i, p) in points.iter().enumerate() {
            let id = self.next_id.fetch_add(1, Ordering::Relaxed);
            let line = serde_json::to_string(&Request {
                id,
                fidelity,
                params: p,
                qois,
            })
            .map_err(|e| OracleError::Protocol(format!("cannot encode request: {e}")))?;
            pending[i % active].insert(id, (i, line));
        }
        for (lane, reqs) in lanes.iter_mut().zip(&pending) {
            let mut buf = String::new();
            for (_, line) in reqs.values() {
                buf.push_str(line);
                buf.push('\n');
            }
            lane.stdin
                .write_all(buf.as_bytes())
                .and_then(|_| lane.stdin.flush())
                .map_err(|e| lane_failure(lane, reqs, &format!("cannot write request: {e}")))?;
        }

        let mut results: Vec<Option<EvalResult>> = vec![None; points.len()];
        let deadline = Instant::now() + self.timeout;
        for (lane, reqs) in lanes.iter_mut().zip(pending.iter_mut()) {
            while !reqs.is_empty() {
                let wait = deadline.saturating_duration_since(Instant::now());
                let line = match lane.lines.recv_timeout(wait) {
                    Ok(Ok(line)) => line,
                    Ok(Err(e)) => return Err(lane_failure(lane, reqs, &format!("read failed: {e}"))),
                    Err(RecvTimeoutError::Timeout) => {
                        return Err(lane_failure(
                            lane,
                            reqs,
                            &format!("no answer within {:.1} s", self.timeout.as_secs_f64()),
                        ))
                    }
                    Err(RecvTimeoutError::Disconnected) => {
                        lane.settle();
                        let status = lane.child.try_wait().ok().flatten();
                        let why = match status {
                            Some(s) => format!("oracle exited ({s})"),
                            None => "oracle closed its output".to_string(),
                        };
                        return Err(lane_failure(lane, reqs, &why));
                    }
                };
                if line.trim().is_empty() {
                    continue;
                }
                let resp: Response = serde_json::from_str(&line)
                    .map_err(|e| OracleError::Protocol(format!("malformed response line {line:?}: {e}")))?;
                let (idx, _) = reqs.remove(&resp.id).ok_or_else(|| {
                    OracleError::Protocol(format!("response for unknown or repeated id {}", resp.id))
                })?;
                results[idx] = Some(match (resp.values, resp.error) {
                    (Some(v), None) if v.len() == qois.len() => Ok(v),
                    (Some(v), None) => {
                        return Err(OracleError::Protocol(format!(
                            "id {}: {} values for {} QoIs",
                            resp.id,
                            v.len(),
                            qois.len()
                        )))
                    }
                    (None, Some(msg)) => Err(msg),
                    _ => {
                        return Err(OracleError::Protocol(format!(
                            "id {}: response needs exactly one of `values` or `error`",
                            resp.id
                        )))
                    }
                });
            }
        }
        Ok(results
            .into_iter()
            .map(|r| r.expect("every id answered"))
            .collect())
    }
}

fn lane_failure(lane: &Lane, reqs: &BTreeMap<u64, (usize, String)>, why: &str) -> OracleError {
    let first = reqs.values().next().map(|(_, l)| l.as_str()).unwrap_or("");
    let tail = lane.stderr_tail();
    let mut msg = format!("{why}; pending request: {first}");
    if !tail.is_empty() {
        msg.push_str("\nstderr tail:\n");
        msg.push_str(&tail);
    }
    OracleError::Backend(msg)
}

impl Backend for ExternalOracle {
    fn evaluate(
        &self,
        fidelity: u32,
        points: &[Vec<f64>],
        qois: &[String],
    ) -> Result<Vec<EvalResult>, OracleError> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let mut lanes = self
            .state
            .lock()
            .map_err(|_| OracleError::Backend("oracle lanes poisoned".into()))?;
        let out = self.run_batch(&mut lanes, fidelity, points, qois);
        if out.is_err() {
            lanes.clear();
        }
        out
    }
}
