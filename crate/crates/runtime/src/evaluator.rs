//! Subprocess evaluator: writes the program to a temp file, substitutes its
//! path into the environment's command template, enforces the timeout, and
//! parses a score from a JSON object on stdout. Every failure mode is an
//! evaluation status, never an error.

use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use tracelens_core::adapters::{EvalRequest, ProgramEvaluator};
use tracelens_core::diff::Dialect;
use tracelens_core::trace::{EvalStatus, Evaluation, JsonMap};

/// Placeholder in `evaluator_command` replaced by the program path.
pub const PROGRAM_PLACEHOLDER: &str = "{program}";

const POLL_INTERVAL: Duration = Duration::from_millis(20);

pub struct SubprocessEvaluator;

impl SubprocessEvaluator {
    pub fn new() -> Self {
        SubprocessEvaluator
    }
}

impl Default for SubprocessEvaluator {
    fn default() -> Self {
        SubprocessEvaluator::new()
    }
}

fn failure(status: EvalStatus, stderr: String, wall_time: f64) -> Evaluation {
    Evaluation {
        candidate_id: String::new(),
        status,
        score: None,
        stdout: String::new(),
        stderr,
        wall_time,
        metrics: JsonMap::new(),
        extra: JsonMap::new(),
    }
}

/// Scans stdout for the last line that parses as a JSON object with a
/// numeric `score`, returning the score plus optional `valid` and `metrics`
/// fields.
fn parse_score(stdout: &str) -> Option<(f64, Option<bool>, JsonMap)> {
    for line in stdout.lines().rev() {
        let line = line.trim();
        if !line.starts_with('{') {
            continue;
        }
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(line) {
            if let Some(score) = value.get("score").and_then(|s| s.as_f64()) {
                let valid = value.get("valid").and_then(|v| v.as_bool());
                let metrics = value
                    .get("metrics")
                    .and_then(|m| m.as_object())
                    .cloned()
                    .unwrap_or_default();
                return Some((score, valid, metrics));
            }
        }
    }
    None
}

impl ProgramEvaluator for SubprocessEvaluator {
    fn evaluate(&self, request: &EvalRequest) -> Evaluation {
        let env = &request.environment;
        if !env.evaluator_command.contains(PROGRAM_PLACEHOLDER) {
            return failure(
                EvalStatus::Error,
                format!("evaluator command lacks the {PROGRAM_PLACEHOLDER} placeholder"),
                0.0,
            );
        }

        let dir = match tempfile::tempdir() {
            Ok(dir) => dir,
            Err(e) => {
                return failure(EvalStatus::Error, format!("temp dir creation failed: {e}"), 0.0)
            }
        };
        let extension = match env.dialect {
            Dialect::PyLike => "py",
            Dialect::CLike => "cpp",
        };
        let program_path = dir.path().join(format!("program.{extension}"));
        if let Err(e) = std::fs::write(&program_path, &request.program_source) {
            return failure(EvalStatus::Error, format!("program write failed: {e}"), 0.0);
        }

        let command_line = env
            .evaluator_command
            .replace(PROGRAM_PLACEHOLDER, &program_path.to_string_lossy());
        let mut parts = command_line.split_whitespace();
        let Some(executable) = parts.next() else {
            return failure(EvalStatus::Error, "empty evaluator command".to_string(), 0.0);
        };

        let started = Instant::now();
        let mut child = match Command::new(executable)
            .args(parts)
            .current_dir(dir.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(child) => child,
            Err(e) => {
                return failure(
                    EvalStatus::Error,
                    format!("failed to spawn {executable}: {e}"),
                    started.elapsed().as_secs_f64(),
                )
            }
        };

        // Drain pipes on threads so a chatty evaluator cannot deadlock on a
        // full pipe buffer while we poll for exit.
        let mut stdout_pipe = child.stdout.take().expect("stdout is piped");
        let mut stderr_pipe = child.stderr.take().expect("stderr is piped");
        let stdout_thread = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout_pipe.read_to_end(&mut buf);
            buf
        });
        let stderr_thread = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr_pipe.read_to_end(&mut buf);
            buf
        });

        let timeout = Duration::from_secs_f64(env.timeout.max(0.0));
        let exit_status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) => {
                    if started.elapsed() >= timeout {
                        let _ = child.kill();
                        let _ = child.wait();
                        break None;
                    }
                    std::thread::sleep(POLL_INTERVAL);
                }
                Err(e) => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return failure(
                        EvalStatus::Error,
                        format!("wait failed: {e}"),
                        started.elapsed().as_secs_f64(),
                    );
                }
            }
        };

        let wall_time = started.elapsed().as_secs_f64();
        let stdout = String::from_utf8_lossy(&stdout_thread.join().unwrap_or_default()).into_owned();
        let stderr = String::from_utf8_lossy(&stderr_thread.join().unwrap_or_default()).into_owned();

        let Some(exit_status) = exit_status else {
            return Evaluation {
                candidate_id: String::new(),
                status: EvalStatus::Timeout,
                score: None,
                stdout,
                stderr,
                wall_time,
                metrics: JsonMap::new(),
                extra: JsonMap::new(),
            };
        };

        if !exit_status.success() {
            return Evaluation {
                candidate_id: String::new(),
                status: EvalStatus::Error,
                score: None,
                stdout,
                stderr,
                wall_time,
                metrics: JsonMap::new(),
                extra: JsonMap::new(),
            };
        }

        match parse_score(&stdout) {
            Some((score, valid, metrics)) => {
                if valid == Some(false) {
                    Evaluation {
                        candidate_id: String::new(),
                        status: EvalStatus::Error,
                        score: None,
                        stdout,
                        stderr: if stderr.is_empty() {
                            "evaluator reported valid=false".to_string()
                        } else {
                            stderr
                        },
                        wall_time,
                        metrics,
                        extra: JsonMap::new(),
                    }
                } else {
                    Evaluation {
                        candidate_id: String::new(),
                        status: EvalStatus::Ok,
                        score: Some(score),
                        stdout,
                        stderr,
                        wall_time,
                        metrics,
                        extra: JsonMap::new(),
                    }
                }
            }
            None => Evaluation {
                candidate_id: String::new(),
                status: EvalStatus::Error,
                score: None,
                stdout,
                stderr: if stderr.is_empty() {
                    "no JSON score object on stdout".to_string()
                } else {
                    stderr
                },
                wall_time,
                metrics: JsonMap::new(),
                extra: JsonMap::new(),
            },
        }
    }
}
