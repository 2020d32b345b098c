//! Residuals from a long-lived child process speaking the line protocol.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::protocol::{encode, Request, Response, PROTOCOL_VERSION};
use crate::evaluator::{EvalError, ResidualEvaluator};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);

/// How to launch the external model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEvaluatorSpec {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
    #[serde(default = "default_timeout_secs", rename = "timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_protocol_version")]
    pub protocol_version: u32,
}

fn default_timeout_secs() -> f64 {
    DEFAULT_TIMEOUT.as_secs_f64()
}

fn default_protocol_version() -> u32 {
    PROTOCOL_VERSION
}

impl ExternalEvaluatorSpec {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            working_dir: None,
            timeout_secs: default_timeout_secs(),
            protocol_version: PROTOCOL_VERSION,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout_secs = timeout.as_secs_f64();
        self
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Returns the name of the offending field on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.command.is_empty() || self.command[0].is_empty() {
            return Err(("command", "must name a program".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(("timeout_secs", "must be positive".into()));
        }
        if self.protocol_version != PROTOCOL_VERSION {
            return Err((
                "protocol_version",
                format!("only version {PROTOCOL_VERSION} is supported"),
            ));
        }
        Ok(())
    }
}

struct Running {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

/// Evaluator backed by one child process for its whole lifetime.
///
/// The process is started on the first evaluation. After a fatal failure
/// (death, timeout, protocol violation) every later call returns that same
/// failure.
pub struct ExternalEvaluator {
    spec: ExternalEvaluatorSpec,
    running: Option<Running>,
    next_id: i64,
    m: Option<usize>,
    broken: Option<EvalError>,
}

impl ExternalEvaluator {
    pub fn new(spec: ExternalEvaluatorSpec) -> Self {
        Self {
            spec,
            running: None,
            next_id: 0,
            m: None,
            broken: None,
        }
    }

    pub fn spec(&self) -> &ExternalEvaluatorSpec {
        &self.spec
    }

    fn spawn(&self) -> Result<Running, EvalError> {
        self.spec
            .validate()
            .map_err(|(k, why)| EvalError::SpawnFailed(format!("{k}: {why}")))?;
        let mut cmd = Command::new(&self.spec.command[0]);
        cmd.args(&self.spec.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        if let Some(dir) = &self.spec.working_dir {
            cmd.current_dir(dir);
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| EvalError::SpawnFailed(format!("{}: {e}", self.spec.command[0])))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        log::debug!("started evaluator process {}", child.id());
        Ok(Running {
            child,
            stdin,
            lines: rx,
        })
    }

    fn exit_description(running: &mut Running) -> String {
        // Give a process that just closed its stdout a moment to exit.
        let deadline = Instant::now() + Duration::from_millis(200);
        loop {
            match running.child.try_wait() {
                Ok(Some(status)) => return format!("exited with {status}"),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                Ok(None) => return "closed its output".into(),
                Err(e) => return format!("status unavailable: {e}"),
            }
        }
    }

    fn call(&mut self, params: &[f64]) -> Result<Vec<f64>, EvalError> {
        if self.running.is_none() {
            self.running = Some(self.spawn()?);
        }
        let timeout = self.spec.timeout();
        let id = self.next_id;
        self.next_id += 1;
        let running = self.running.as_mut().unwrap();

        let request = encode(&Request {
            v: PROTOCOL_VERSION,
            id,
            params: params.to_vec(),
        });
        let sent = running
            .stdin
            .as_mut()
            .map(|stdin| writeln!(stdin, "{request}").and_then(|()| stdin.flush()));
        if !matches!(sent, Some(Ok(()))) {
            return Err(EvalError::ProcessDied(format!(
                "could not send request: {}",
                Self::exit_description(running)
            )));
        }

        let line = match running.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(EvalError::Io(e.to_string())),
            Err(RecvTimeoutError::Timeout) => {
                let _ = running.child.kill();
                return Err(EvalError::Timeout(timeout.as_secs_f64()));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(EvalError::ProcessDied(Self::exit_description(running)));
            }
        };

        let resp: Response = serde_json::from_str(&line)
            .map_err(|e| EvalError::Malformed(format!("{e}: {}", truncate(&line))))?;
        if resp.v != PROTOCOL_VERSION {
            return Err(EvalError::Malformed(format!("protocol version {}", resp.v)));
        }
        if resp.id != id {
            return Err(EvalError::Malformed(format!("response id {} for request {id}", resp.id)));
        }
        let residuals = match (resp.residuals, resp.error) {
            (Some(r), None) => r,
            (None, Some(msg)) => return Err(EvalError::Remote(msg)),
            _ => {
                return Err(EvalError::Malformed(
                    "response must carry exactly one of residuals or error".into(),
                ))
            }
        };
        match self.m {
            Some(m) if m != residuals.len() => {
                return Err(EvalError::LengthChanged {
                    expected: m,
                    found: residuals.len(),
                })
            }
            _ => self.m = Some(residuals.len()),
        }
        if let Some(i) = residuals.iter().position(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite(i));
        }
        Ok(residuals)
    }
}

fn truncate(line: &str) -> String {
    const MAX: usize = 120;
    if line.len() <= MAX {
        line.to_string()
    } else {
        let cut = (0..=MAX).rev().find(|&i| line.is_char_boundary(i)).unwrap_or(0);
        format!("{}...", &line[..cut])
    }
}

impl ResidualEvaluator<f64> for ExternalEvaluator {
    fn evaluate(&mut self, params: &[f64]) -> Result<Vec<f64>, EvalError> {
        if let Some(e) = &self.broken {
            return Err(e.clone());
        }
        let out = self.call(params);
        if let Err(e) = &out {
            if e.is_fatal() {
                self.broken = Some(e.clone());
            }
        }
        out
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        if let Some(mut running) = self.running.take() {
            // Closing stdin asks a well-behaved child to exit.
            drop(running.stdin.take());
            let deadline = Instant::now() + Duration::from_millis(500);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = running.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(5));
            }
            let _ = running.child.kill();
            let _ = running.child.wait();
        }
    }
}
