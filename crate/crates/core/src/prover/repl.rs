use std::env;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use tracing::debug;

use super::{BackendError, Channel, ProverBackend, ReplRequest, Session, SessionHandle, SessionOptions};

/// Subprocess client for the Lean REPL.
///
/// By default the REPL is launched as `lake exe repl` inside the project
/// root; [`LeanReplBackend::with_command`] overrides the program.
#[derive(Debug)]
pub struct LeanReplBackend {
    project_root: PathBuf,
    command: Option<(String, Vec<String>)>,
    startup_timeout: Duration,
    toolchain: String,
    counter: AtomicUsize,
}

impl LeanReplBackend {
    pub fn new(project_root: impl Into<PathBuf>) -> Self {
        let project_root = project_root.into();
        let toolchain = std::fs::read_to_string(project_root.join("lean-toolchain"))
            .map(|s| s.trim().to_string())
            .unwrap_or_else(|_| "unknown".to_string());
        Self {
            project_root,
            command: None,
            startup_timeout: Duration::from_secs(600),
            toolchain,
            counter: AtomicUsize::new(0),
        }
    }

    pub fn with_command(mut self, program: impl Into<String>, args: Vec<String>) -> Self {
        self.command = Some((program.into(), args));
        self
    }

    /// Time allowed for the first response of a fresh REPL (imports included).
    pub fn with_startup_timeout(mut self, timeout: Duration) -> Self {
        self.startup_timeout = timeout;
        self
    }

    fn resolve(&self) -> Result<(PathBuf, Vec<String>), BackendError> {
        if !self.project_root.is_dir() {
            return Err(BackendError::ToolchainMissing(format!(
                "project root {} does not exist",
                self.project_root.display()
            )));
        }
        let (program, args) = match &self.command {
            Some((p, a)) => (p.clone(), a.clone()),
            None => ("lake".to_string(), vec!["exe".to_string(), "repl".to_string()]),
        };
        let resolved = find_executable(&program, &self.project_root).ok_or_else(|| {
            BackendError::ToolchainMissing(format!("`{program}` not found on PATH or in project"))
        })?;
        Ok((resolved, args))
    }

    fn spawn(&self) -> Result<ReplProcess, BackendError> {
        let (program, args) = self.resolve()?;
        ReplProcess::spawn(&program, &args, &self.project_root)
    }
}

fn find_executable(program: &str, root: &Path) -> Option<PathBuf> {
    let candidate = Path::new(program);
    if candidate.components().count() > 1 {
        let p = if candidate.is_absolute() {
            candidate.to_path_buf()
        } else {
            root.join(candidate)
        };
        return p.is_file().then_some(p);
    }
    let path = env::var_os("PATH")?;
    env::split_paths(&path)
        .map(|dir| dir.join(program))
        .find(|p| p.is_file())
}

impl ProverBackend for LeanReplBackend {
    fn kind(&self) -> &str {
        "lean"
    }

    fn toolchain(&self) -> String {
        self.toolchain.clone()
    }

    fn start_session(&self, options: SessionOptions) -> Result<Session, BackendError> {
        let process = self.spawn()?;
        let id = self.counter.fetch_add(1, Ordering::SeqCst);
        let channel = ReplChannel {
            backend_root: self.project_root.clone(),
            command: self.resolve()?,
            process: Some(process),
            startup_timeout: self.startup_timeout,
            fresh: true,
        };
        Ok(Session::new(
            SessionHandle {
                session_id: format!("lean-{id}"),
                base_env: None,
                toolchain: self.toolchain.clone(),
            },
            Box::new(channel),
            options,
        ))
    }
}

struct ReplProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl ReplProcess {
    fn spawn(program: &Path, args: &[String], cwd: &Path) -> Result<Self, BackendError> {
        let mut child = Command::new(program)
            .args(args)
            .current_dir(cwd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| BackendError::ToolchainMissing(format!("{}: {e}", program.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        // a REPL that cannot start (missing build, bad toolchain) exits at once
        thread::sleep(Duration::from_millis(20));
        if let Ok(Some(status)) = child.try_wait() {
            return Err(BackendError::ToolchainMissing(format!(
                "{} exited during startup ({status})",
                program.display()
            )));
        }
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct ReplChannel {
    backend_root: PathBuf,
    command: (PathBuf, Vec<String>),
    process: Option<ReplProcess>,
    startup_timeout: Duration,
    /// No response has been read from this process yet.
    fresh: bool,
}

impl ReplChannel {
    fn read_response(process: &mut ReplProcess, deadline: Instant) -> Result<String, BackendError> {
        let mut buf = String::new();
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Err(BackendError::CommandTimeout(Duration::ZERO));
            }
            match process.lines.recv_timeout(deadline - now) {
                Ok(line) => {
                    if line.trim().is_empty() {
                        if buf.trim().is_empty() {
                            continue;
                        }
                        return Ok(buf);
                    }
                    buf.push_str(&line);
                    buf.push('\n');
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(BackendError::CommandTimeout(Duration::ZERO));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    // a final object without a trailing blank line
                    if !buf.trim().is_empty() && serde_json::from_str::<serde_json::Value>(&buf).is_ok() {
                        return Ok(buf);
                    }
                    return Err(BackendError::SessionDead);
                }
            }
        }
    }
}

impl Channel for ReplChannel {
    fn exchange(&mut self, request: &ReplRequest, timeout: Duration) -> Result<String, BackendError> {
        let process = self.process.as_mut().ok_or(BackendError::SessionDead)?;
        let wire = request.to_wire();
        debug!(bytes = wire.len(), env = ?request.env, "sending REPL command");
        if process.stdin.write_all(wire.as_bytes()).and_then(|_| process.stdin.flush()).is_err() {
            process.kill();
            self.process = None;
            return Err(BackendError::SessionDead);
        }
        let first = self.fresh;
        let budget = if first { timeout.max(self.startup_timeout) } else { timeout };
        match Self::read_response(process, Instant::now() + budget) {
            Ok(text) => {
                self.fresh = false;
                Ok(text)
            }
            Err(BackendError::CommandTimeout(_)) => {
                process.kill();
                self.process = None;
                if first {
                    Err(BackendError::StartupTimeout)
                } else {
                    Err(BackendError::CommandTimeout(timeout))
                }
            }
            Err(e) => {
                process.kill();
                self.process = None;
                Err(e)
            }
        }
    }

    fn restart(&mut self) -> Result<(), BackendError> {
        if let Some(mut p) = self.process.take() {
            p.kill();
        }
        self.process = Some(ReplProcess::spawn(&self.command.0, &self.command.1, &self.backend_root)?);
        self.fresh = true;
        Ok(())
    }
}

impl Drop for ReplChannel {
    fn drop(&mut self) {
        if let Some(mut p) = self.process.take() {
            p.kill();
        }
    }
}
