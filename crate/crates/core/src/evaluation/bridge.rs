//! Line-delimited JSON bridge to an external trainer process.
//!
//! Requests go to the trainer's stdin, one object per line; responses come
//! back on stdout in request order. `{"cmd":"shutdown"}` ends the session.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::{AccuracyBackend, EvalStatus, EvaluationError, EvaluationRequest, EvaluationResult};

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(30 * 60);
pub const SHUTDOWN_LINE: &str = "{\"cmd\":\"shutdown\"}\n";

/// Bytes of trainer stderr kept for diagnostics.
const STDERR_TAIL: usize = 8 * 1024;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("failed to start trainer `{cmd}`: {source}")]
    Spawn {
        cmd: String,
        #[source]
        source: io::Error,
    },
    #[error("trainer did not answer within {0:?}")]
    Timeout(Duration),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("trainer exited ({status}); stderr: {stderr}")]
    Exited { status: String, stderr: String },
    #[error("trainer i/o: {0}")]
    Io(#[from] io::Error),
}

pub struct TrainerProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<io::Result<String>>,
    stderr: Arc<Mutex<String>>,
}

impl TrainerProcess {
    /// Starts `cmd` through `sh -c`.
    pub fn spawn(cmd: &str) -> Result<Self, BridgeError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| BridgeError::Spawn {
                cmd: cmd.to_string(),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut stderr_pipe = child.stderr.take().expect("stderr is piped");

        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = stderr_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut s = sink.lock().expect("stderr buffer poisoned");
                s.push_str(&String::from_utf8_lossy(&buf[..n]));
                if s.len() > STDERR_TAIL {
                    let mut cut = s.len() - STDERR_TAIL;
                    while !s.is_char_boundary(cut) {
                        cut += 1;
                    }
                    s.drain(..cut);
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines,
            stderr,
        })
    }

    pub fn stderr_tail(&self) -> String {
        self.stderr.lock().expect("stderr buffer poisoned").clone()
    }

    /// Sends one request and waits for its response.
    pub fn request(
        &mut self,
        req: &EvaluationRequest,
        timeout: Duration,
    ) -> Result<EvaluationResult, BridgeError> {
        let mut line =
            serde_json::to_string(req).map_err(|e| BridgeError::Protocol(e.to_string()))?;
        line.push('\n');
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| BridgeError::Protocol("stdin already closed".into()))?;
        if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
            return Err(self.exited().unwrap_or(BridgeError::Io(e)));
        }
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(text)) => {
                let res: EvaluationResult = serde_json::from_str(&text).map_err(|e| {
                    BridgeError::Protocol(format!("malformed response {text:?}: {e}"))
                })?;
                if res.id != req.id {
                    return Err(BridgeError::Protocol(format!(
                        "response id {} does not match request id {}",
                        res.id, req.id
                    )));
                }
                if !(0.0..=1.0).contains(&res.accuracy) {
                    return Err(BridgeError::Protocol(format!(
                        "accuracy {} outside [0, 1]",
                        res.accuracy
                    )));
                }
                Ok(res)
            }
            Ok(Err(e)) => Err(BridgeError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(BridgeError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(self.exited().unwrap_or_else(|| BridgeError::Exited {
                    status: "stdout closed".into(),
                    stderr: self.stderr_tail(),
                }))
            }
        }
    }

    fn exited(&mut self) -> Option<BridgeError> {
        // Give the stderr reader a moment to drain after the process dies.
        let status = (0..20).find_map(|_| match self.child.try_wait() {
            Ok(Some(s)) => Some(s),
            _ => {
                thread::sleep(Duration::from_millis(10));
                None
            }
        })?;
        thread::sleep(Duration::from_millis(20));
        Some(BridgeError::Exited {
            status: status.to_string(),
            stderr: self.stderr_tail(),
        })
    }

    /// Sends the shutdown command and waits for exit.
    pub fn shutdown(mut self) -> io::Result<ExitStatus> {
        if let Some(mut stdin) = self.stdin.take() {
            let _ = stdin
                .write_all(SHUTDOWN_LINE.as_bytes())
                .and_then(|_| stdin.flush());
        }
        self.child.wait()
    }

    pub fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Pool of trainer processes, one per worker slot, started lazily and
/// restarted after a timeout or crash.
pub struct BridgeBackend {
    cmd: String,
    timeout: Duration,
    slots: Vec<Mutex<Option<TrainerProcess>>>,
}

impl BridgeBackend {
    pub fn new(cmd: impl Into<String>, workers: usize, timeout: Duration) -> Self {
        Self {
            cmd: cmd.into(),
            timeout,
            slots: (0..workers.max(1)).map(|_| Mutex::new(None)).collect(),
        }
    }

    /// Shuts every running trainer down.
    pub fn shutdown(&self) {
        for slot in &self.slots {
            if let Some(p) = slot.lock().expect("trainer slot poisoned").take() {
                if let Err(e) = p.shutdown() {
                    log::warn!("trainer shutdown: {e}");
                }
            }
        }
    }
}

impl Drop for BridgeBackend {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl AccuracyBackend for BridgeBackend {
    fn evaluate(
        &self,
        slot: usize,
        req: &EvaluationRequest,
    ) -> Result<EvaluationResult, EvaluationError> {
        let mut guard = self.slots[slot % self.slots.len()]
            .lock()
            .expect("trainer slot poisoned");
        if guard.is_none() {
            *guard = Some(
                TrainerProcess::spawn(&self.cmd)
                    .map_err(|e| EvaluationError::Backend(e.to_string()))?,
            );
        }
        let proc = guard.as_mut().expect("trainer just started");
        match proc.request(req, self.timeout) {
            Ok(res) => Ok(res),
            Err(err) => {
                let status = if matches!(err, BridgeError::Timeout(_)) {
                    EvalStatus::Timeout
                } else {
                    EvalStatus::Failed
                };
                log::warn!("evaluation of {} {status}: {err}", req.id);
                // The stream may be out of step now; start afresh next time.
                if let Some(p) = guard.take() {
                    p.kill();
                }
                Ok(EvaluationResult::unsuccessful(req.id.clone(), status))
            }
        }
    }

    fn max_concurrency(&self) -> usize {
        self.slots.len()
    }
}
