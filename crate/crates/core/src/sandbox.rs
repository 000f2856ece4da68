//! Sandbox runner contract.
//!
//! A runner is invoked as
//! `runner <script_path> --workdir <dir> --timeout <sec> --stdout-tail <n>`
//! and prints exactly one JSON [`RunnerReport`] on standard output. A runner
//! that produces no report is treated as an unavailable sandbox, which is
//! distinct from a failing candidate.

use std::collections::VecDeque;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub script_path: PathBuf,
    pub workdir: PathBuf,
    pub timeout_seconds: f64,
    pub stdout_tail_chars: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub file: String,
    pub line: i64,
    pub function: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunnerReport {
    pub success: bool,
    pub exit_status: i32,
    #[serde(default)]
    pub exception_type: String,
    #[serde(default)]
    pub exception_message: String,
    #[serde(default)]
    pub traceback_frames: Vec<Frame>,
    #[serde(default)]
    pub stdout_tail: String,
    pub wall_time_seconds: f64,
    pub timed_out: bool,
}

pub trait Sandbox: Send + Sync {
    /// Extension the runner expects for candidate programs, without the dot.
    fn script_extension(&self) -> &str;

    /// Language named in the Builder prompt.
    fn language(&self) -> &str;

    fn run(&self, request: &RunRequest) -> Result<RunnerReport>;
}

/// Runs an external runner program as a subprocess.
#[derive(Clone, Debug)]
pub struct SubprocessSandbox {
    command: Vec<String>,
    extension: String,
    language: String,
    /// Extra time allowed beyond the candidate timeout before the runner
    /// itself is considered hung.
    pub report_grace: Duration,
}

impl SubprocessSandbox {
    pub fn new(command: Vec<String>) -> Result<Self> {
        if command.first().is_none_or(|c| c.trim().is_empty()) {
            return Err(Error::InvalidConfig("sandbox runner command is empty".into()));
        }
        Ok(Self {
            command,
            extension: "py".into(),
            language: "Python".into(),
            report_grace: Duration::from_secs(5),
        })
    }

    pub fn with_language(mut self, language: impl Into<String>, extension: impl Into<String>) -> Self {
        self.language = language.into();
        self.extension = extension.into();
        self
    }
}

fn drain<R: Read + Send + 'static>(mut r: R) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

impl Sandbox for SubprocessSandbox {
    fn script_extension(&self) -> &str {
        &self.extension
    }

    fn language(&self) -> &str {
        &self.language
    }

    fn run(&self, req: &RunRequest) -> Result<RunnerReport> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg(&req.script_path)
            .arg("--workdir")
            .arg(&req.workdir)
            .arg("--timeout")
            .arg(req.timeout_seconds.to_string())
            .arg("--stdout-tail")
            .arg(req.stdout_tail_chars.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| {
                Error::SandboxUnavailable(format!("cannot start runner {:?}: {e}", self.command[0]))
            })?;
        let out = drain(child.stdout.take().expect("piped"));
        let err = drain(child.stderr.take().expect("piped"));
        let limit = Duration::from_secs_f64(req.timeout_seconds.max(0.0)) + self.report_grace;
        let status = match child.wait_timeout(limit) {
            Ok(Some(status)) => status,
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::SandboxUnavailable(format!(
                    "runner produced no report within {:.1}s",
                    limit.as_secs_f64()
                )));
            }
            Err(e) => return Err(Error::SandboxUnavailable(format!("waiting for runner: {e}"))),
        };
        let stdout = out.join().unwrap_or_default();
        let stderr = err.join().unwrap_or_default();
        serde_json::from_str::<RunnerReport>(stdout.trim()).map_err(|e| {
            Error::SandboxUnavailable(format!(
                "runner exited with {status} without a valid report ({e}); stderr: {}",
                stderr.trim()
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ScriptedStep {
    /// Exit 0 after writing `write_files` (relative to the workdir).
    Pass {
        #[serde(default)]
        write_files: Vec<String>,
        #[serde(default)]
        stdout: String,
    },
    Fail {
        exception_type: String,
        #[serde(default)]
        message: String,
    },
    Timeout,
    Unavailable,
}

/// Replays scripted outcomes in order, without running anything.
#[derive(Debug)]
pub struct ScriptedSandbox {
    steps: Mutex<VecDeque<ScriptedStep>>,
    repeat_last: bool,
    requests: Mutex<Vec<RunRequest>>,
}

impl ScriptedSandbox {
    pub fn new(steps: impl IntoIterator<Item = ScriptedStep>) -> Self {
        Self {
            steps: Mutex::new(steps.into_iter().collect()),
            repeat_last: false,
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Keeps returning the final step once the script is exhausted.
    pub fn repeating_last(mut self) -> Self {
        self.repeat_last = true;
        self
    }

    pub fn requests(&self) -> Vec<RunRequest> {
        self.requests.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn run_count(&self) -> usize {
        self.requests.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    fn next_step(&self) -> Option<ScriptedStep> {
        let mut steps = self.steps.lock().unwrap_or_else(|p| p.into_inner());
        if self.repeat_last && steps.len() == 1 {
            steps.front().cloned()
        } else {
            steps.pop_front()
        }
    }
}

fn write_outputs(workdir: &Path, files: &[String]) -> Result<()> {
    for f in files {
        let path = workdir.join(f);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, "scripted output\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

impl Sandbox for ScriptedSandbox {
    fn script_extension(&self) -> &str {
        "py"
    }

    fn language(&self) -> &str {
        "Python"
    }

    fn run(&self, req: &RunRequest) -> Result<RunnerReport> {
        let started = Instant::now();
        self.requests
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(req.clone());
        let step = self
            .next_step()
            .ok_or_else(|| Error::SandboxUnavailable("scripted sandbox has no steps left".into()))?;
        let script = req.script_path.display().to_string();
        let report = match step {
            ScriptedStep::Pass { write_files, stdout } => {
                write_outputs(&req.workdir, &write_files)?;
                RunnerReport {
                    success: true,
                    exit_status: 0,
                    exception_type: String::new(),
                    exception_message: String::new(),
                    traceback_frames: vec![],
                    stdout_tail: tail(&stdout, req.stdout_tail_chars),
                    wall_time_seconds: started.elapsed().as_secs_f64(),
                    timed_out: false,
                }
            }
            ScriptedStep::Fail { exception_type, message } => RunnerReport {
                success: false,
                exit_status: 1,
                exception_type,
                exception_message: message,
                traceback_frames: vec![Frame {
                    file: script,
                    line: 1,
                    function: "<module>".into(),
                }],
                stdout_tail: String::new(),
                wall_time_seconds: started.elapsed().as_secs_f64(),
                timed_out: false,
            },
            ScriptedStep::Timeout => RunnerReport {
                success: false,
                exit_status: -9,
                exception_type: String::new(),
                exception_message: String::new(),
                traceback_frames: vec![],
                stdout_tail: String::new(),
                wall_time_seconds: req.timeout_seconds,
                timed_out: true,
            },
            ScriptedStep::Unavailable => {
                return Err(Error::SandboxUnavailable("scripted runner failure".into()))
            }
        };
        Ok(report)
    }
}

fn tail(s: &str, n: usize) -> String {
    let count = s.chars().count();
    s.chars().skip(count.saturating_sub(n)).collect()
}
