//! Prover backends.
//!
//! A [`ProverBackend`] opens [`Session`]s. A session owns one channel to a
//! Lean REPL (a child process, or a recorded transcript) and serializes the
//! commands sent through it. Requests and responses follow the community
//! REPL framing: one JSON object per message, terminated by a blank line.

mod pool;
mod repl;
mod scripted;

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use crate::statement::{Diagnostic, Position, Severity, TypeCheckKind, TypeCheckStatus};

pub use pool::{PooledSession, SessionPool};
pub use repl::LeanReplBackend;
pub use scripted::{
    normalize_request, IssuedCommand, RecordingBackend, ScriptedBackend, Transcript,
    TranscriptEntry,
};

pub const DEFAULT_COMMAND_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_ATTEMPT_TIMEOUT: Duration = Duration::from_secs(20);
pub const DEFAULT_RECYCLE_AFTER: usize = 200;

/// Marker the REPL emits for a well-typed statement with a placeholder proof.
pub const SORRY_MARKER: &str = "declaration uses 'sorry'";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("no REPL executable could be resolved: {0}")]
    ToolchainMissing(String),
    #[error("REPL did not become ready in time")]
    StartupTimeout,
    #[error("command timed out after {0:?}")]
    CommandTimeout(Duration),
    #[error("session is dead")]
    SessionDead,
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("REPL rejected the request: {0}")]
    Repl(String),
    #[error("context failed to elaborate: {0}")]
    ContextRejected(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for BackendError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// One command as it goes over the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplRequest {
    pub cmd: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<u64>,
}

impl ReplRequest {
    /// The exact bytes written to the REPL's stdin.
    pub fn to_wire(&self) -> String {
        let mut s = serde_json::to_string(self).expect("request serializes");
        s.push_str("\n\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SorryGoal {
    pub pos: Option<Position>,
    pub end_pos: Option<Position>,
    pub goal: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplResult {
    pub env: Option<u64>,
    pub messages: Vec<Diagnostic>,
    pub sorries: Vec<SorryGoal>,
    /// Compact serialization of the response object, keys in wire order.
    pub raw: String,
}

impl ReplResult {
    pub fn has_errors(&self) -> bool {
        self.messages.iter().any(|m| m.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.messages.iter().filter(|m| m.severity == Severity::Error)
    }

    /// Messages of any severity containing `needle`.
    pub fn mentions(&self, needle: &str) -> bool {
        self.messages.iter().any(|m| m.message.contains(needle))
    }
}

fn parse_position(v: Option<&Value>) -> Option<Position> {
    let v = v?;
    Some(Position {
        line: v.get("line")?.as_u64()? as u32,
        column: v.get("column")?.as_u64()? as u32,
    })
}

/// Parses one response object. Unknown fields are ignored.
pub fn parse_response(text: &str) -> Result<ReplResult, BackendError> {
    let value: Value = serde_json::from_str(text.trim())
        .map_err(|e| BackendError::ProtocolError(format!("unparseable response: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| BackendError::ProtocolError("response is not an object".into()))?;

    // the REPL answers malformed requests with a bare {"message": ...}
    if !obj.contains_key("env") && !obj.contains_key("messages") {
        if let Some(msg) = obj.get("message").and_then(Value::as_str) {
            return Err(BackendError::Repl(msg.to_string()));
        }
    }

    let env = match obj.get("env") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| BackendError::ProtocolError(format!("bad env field: {v}")))?,
        ),
    };

    let mut messages = Vec::new();
    for m in obj.get("messages").and_then(Value::as_array).into_iter().flatten() {
        let severity = match m.get("severity").and_then(Value::as_str) {
            Some("error") => Severity::Error,
            Some("warning") => Severity::Warning,
            Some("info") | Some("information") => Severity::Info,
            other => {
                return Err(BackendError::ProtocolError(format!(
                    "unknown message severity {other:?}"
                )))
            }
        };
        messages.push(Diagnostic {
            severity,
            pos: parse_position(m.get("pos")),
            end_pos: parse_position(m.get("endPos")),
            message: m.get("data").and_then(Value::as_str).unwrap_or_default().to_string(),
        });
    }

    let mut sorries = Vec::new();
    for s in obj.get("sorries").and_then(Value::as_array).into_iter().flatten() {
        sorries.push(SorryGoal {
            pos: parse_position(s.get("pos")),
            end_pos: parse_position(s.get("endPos")),
            goal: s.get("goal").and_then(Value::as_str).unwrap_or_default().to_string(),
        });
    }

    for key in obj.keys() {
        if !matches!(
            key.as_str(),
            "env" | "messages" | "sorries" | "tactics" | "infotree" | "proofState" | "message"
        ) {
            warn!(field = key.as_str(), "unknown field in REPL response");
        }
    }

    Ok(ReplResult {
        env,
        messages,
        sorries,
        raw: value.to_string(),
    })
}

/// Type-check status of a command's result.
pub fn classify(r: &ReplResult) -> TypeCheckStatus {
    let kind = if r.has_errors() {
        TypeCheckKind::IllTyped
    } else if !r.sorries.is_empty()
        || r.messages.iter().any(|m| is_sorry_warning(&m.message))
    {
        TypeCheckKind::WellTypedWithSorry
    } else {
        TypeCheckKind::WellTypedComplete
    };
    TypeCheckStatus {
        kind,
        diagnostics: r.messages.clone(),
    }
}

fn is_sorry_warning(message: &str) -> bool {
    message.contains(SORRY_MARKER) || message.contains("declaration uses `sorry'")
}

/// A transport to one REPL instance.
pub trait Channel: Send {
    /// Sends one request and returns the raw response object text.
    fn exchange(&mut self, request: &ReplRequest, timeout: Duration) -> Result<String, BackendError>;

    /// Replaces the underlying REPL with a fresh one. All env ids are lost.
    fn restart(&mut self) -> Result<(), BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub session_id: String,
    /// Env id of the first header loaded in this session.
    pub base_env: Option<u64>,
    pub toolchain: String,
}

#[derive(Debug, Clone, Copy)]
pub struct SessionOptions {
    pub command_timeout: Duration,
    pub recycle_after: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            command_timeout: DEFAULT_COMMAND_TIMEOUT,
            recycle_after: DEFAULT_RECYCLE_AFTER,
        }
    }
}

pub trait ProverBackend: Send + Sync {
    /// Short backend name for manifests ("lean", "scripted", ...).
    fn kind(&self) -> &str;

    fn toolchain(&self) -> String;

    fn start_session(&self, options: SessionOptions) -> Result<Session, BackendError>;
}

impl<T: ProverBackend + ?Sized> ProverBackend for std::sync::Arc<T> {
    fn kind(&self) -> &str {
        (**self).kind()
    }

    fn toolchain(&self) -> String {
        (**self).toolchain()
    }

    fn start_session(&self, options: SessionOptions) -> Result<Session, BackendError> {
        (**self).start_session(options)
    }
}

/// A live, single-consumer connection to a prover.
pub struct Session {
    handle: SessionHandle,
    channel: Box<dyn Channel>,
    options: SessionOptions,
    commands_run: usize,
    dead: bool,
    env_cache: HashMap<String, Option<u64>>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("handle", &self.handle)
            .field("commands_run", &self.commands_run)
            .field("dead", &self.dead)
            .finish()
    }
}

impl Session {
    pub fn new(handle: SessionHandle, channel: Box<dyn Channel>, options: SessionOptions) -> Self {
        Self {
            handle,
            channel,
            options,
            commands_run: 0,
            dead: false,
            env_cache: HashMap::new(),
        }
    }

    pub fn handle(&self) -> &SessionHandle {
        &self.handle
    }

    pub fn is_dead(&self) -> bool {
        self.dead
    }

    pub fn commands_run(&self) -> usize {
        self.commands_run
    }

    pub fn needs_recycle(&self) -> bool {
        self.dead || self.commands_run >= self.options.recycle_after
    }

    /// Runs one command. A timeout kills the REPL and marks the session dead.
    pub fn run_command(
        &mut self,
        src: &str,
        env: Option<u64>,
        timeout: Option<Duration>,
    ) -> Result<ReplResult, BackendError> {
        if self.dead {
            return Err(BackendError::SessionDead);
        }
        let request = ReplRequest {
            cmd: src.to_string(),
            env,
        };
        let timeout = timeout.unwrap_or(self.options.command_timeout);
        self.commands_run += 1;
        match self.channel.exchange(&request, timeout) {
            Ok(raw) => parse_response(&raw),
            Err(
                e @ (BackendError::CommandTimeout(_)
                | BackendError::StartupTimeout
                | BackendError::SessionDead
                | BackendError::Io(_)),
            ) => {
                self.dead = true;
                Err(e)
            }
            Err(e) => Err(e),
        }
    }

    /// Splits a fresh session back into its handle and channel, so wrappers
    /// can interpose on the transport.
    pub fn into_parts(self) -> (SessionHandle, Box<dyn Channel>) {
        (self.handle, self.channel)
    }

    /// Restarts the REPL and forgets every cached environment.
    pub fn recycle(&mut self) -> Result<(), BackendError> {
        self.channel.restart()?;
        self.dead = false;
        self.commands_run = 0;
        self.env_cache.clear();
        self.handle.base_env = None;
        Ok(())
    }

    /// Elaborates `context` and returns the env it leaves behind. Import
    /// lines are loaded once per session as a header command; the rest of
    /// the context is run on top and cached too.
    pub fn context_env(&mut self, context: &str) -> Result<Option<u64>, BackendError> {
        let (header, body) = split_header(context);
        let mut env = None;
        if !header.is_empty() {
            env = self.cached_env(&header, None, true)?;
        }
        if !body.is_empty() {
            let key = format!("{header}\u{0}{body}");
            if let Some(hit) = self.env_cache.get(&key) {
                return Ok(*hit);
            }
            let r = self.run_command(&body, env, None)?;
            if r.has_errors() {
                return Err(context_rejected(&r));
            }
            self.env_cache.insert(key, r.env);
            env = r.env;
        }
        Ok(env)
    }

    fn cached_env(&mut self, src: &str, env: Option<u64>, is_header: bool) -> Result<Option<u64>, BackendError> {
        if let Some(hit) = self.env_cache.get(src) {
            return Ok(*hit);
        }
        let r = self.run_command(src, env, None)?;
        if r.has_errors() {
            return Err(context_rejected(&r));
        }
        if is_header && self.handle.base_env.is_none() {
            self.handle.base_env = r.env;
        }
        self.env_cache.insert(src.to_string(), r.env);
        Ok(r.env)
    }
}

fn context_rejected(r: &ReplResult) -> BackendError {
    let msg = r
        .errors()
        .map(|d| d.message.as_str())
        .collect::<Vec<_>>()
        .join("; ");
    BackendError::ContextRejected(msg)
}

/// Splits a context into its import lines and everything else.
pub fn split_header(context: &str) -> (String, String) {
    let mut header = Vec::new();
    let mut body = Vec::new();
    for line in context.lines() {
        if line.trim_start().starts_with("import ") {
            header.push(line.trim());
        } else {
            body.push(line);
        }
    }
    (header.join("\n"), body.join("\n").trim().to_string())
}

/// Merges two contexts. Imports are unioned and hoisted; the remaining
/// bodies are concatenated, skipping one-line preamble commands of the
/// second that already appear in the first.
pub fn merge_contexts(a: &str, b: &str) -> String {
    if a.trim() == b.trim() {
        return a.trim().to_string();
    }
    let (ha, ba) = split_header(a);
    let (hb, bb) = split_header(b);
    let mut seen = std::collections::HashSet::new();
    let mut out: Vec<&str> = Vec::new();
    for line in ha.lines().chain(hb.lines()) {
        if seen.insert(line) {
            out.push(line);
        }
    }
    let a_lines: std::collections::HashSet<&str> = ba.lines().map(str::trim_end).collect();
    out.extend(ba.lines().map(str::trim_end).filter(|l| !l.trim().is_empty()));
    for line in bb.lines().map(str::trim_end) {
        if line.trim().is_empty() {
            continue;
        }
        if is_preamble_line(line) && a_lines.contains(line) {
            continue;
        }
        out.push(line);
    }
    out.join("\n")
}

fn is_preamble_line(line: &str) -> bool {
    const HEADS: [&str; 8] = [
        "open ", "set_option ", "universe ", "variable ", "local ", "scoped ", "notation", "attribute ",
    ];
    !line.starts_with(char::is_whitespace) && HEADS.iter().any(|h| line.starts_with(h))
}

/// Prepends `header` when `context` carries no imports of its own.
pub fn with_default_header(context: &str, header: Option<&str>) -> String {
    match header {
        Some(h) if !h.trim().is_empty() && split_header(context).0.is_empty() => {
            if context.trim().is_empty() {
                h.trim().to_string()
            } else {
                format!("{}\n{}", h.trim(), context)
            }
        }
        _ => context.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(messages: &[(&str, &str)], sorries: usize) -> ReplResult {
        let msgs: Vec<Value> = messages
            .iter()
            .map(|(sev, data)| {
                serde_json::json!({"severity": sev, "pos": {"line": 1, "column": 0}, "endPos": null, "data": data})
            })
            .collect();
        let sorries: Vec<Value> = (0..sorries)
            .map(|_| serde_json::json!({"pos": {"line": 1, "column": 20}, "endPos": {"line": 1, "column": 25}, "goal": "⊢ 1 = 1"}))
            .collect();
        parse_response(&serde_json::json!({"env": 0, "messages": msgs, "sorries": sorries}).to_string())
            .unwrap()
    }

    #[test]
    fn request_wire_format() {
        let r = ReplRequest {
            cmd: "theorem T : 1 = 1 := sorry".into(),
            env: Some(3),
        };
        assert_eq!(r.to_wire(), "{\"cmd\":\"theorem T : 1 = 1 := sorry\",\"env\":3}\n\n");
        let r = ReplRequest {
            cmd: "import Mathlib".into(),
            env: None,
        };
        assert_eq!(r.to_wire(), "{\"cmd\":\"import Mathlib\"}\n\n");
    }

    #[test]
    fn classify_examples() {
        assert_eq!(
            classify(&result(&[("warning", "declaration uses 'sorry'")], 0)).kind,
            TypeCheckKind::WellTypedWithSorry
        );
        assert_eq!(
            classify(&result(&[("error", "unknown identifier 'GaussianInt'")], 0)).kind,
            TypeCheckKind::IllTyped
        );
        assert_eq!(classify(&result(&[], 0)).kind, TypeCheckKind::WellTypedComplete);
        assert_eq!(classify(&result(&[], 1)).kind, TypeCheckKind::WellTypedWithSorry);
        assert_eq!(
            classify(&result(&[("warning", "declaration uses 'sorry'"), ("error", "boom")], 1)).kind,
            TypeCheckKind::IllTyped
        );
    }

    #[test]
    fn classify_is_order_insensitive() {
        let msgs = [
            ("info", "Try this: exact h"),
            ("warning", "declaration uses 'sorry'"),
            ("error", "type mismatch"),
            ("warning", "unused variable"),
        ];
        let base = classify(&result(&msgs, 0)).kind;
        // all 24 orderings
        let mut idx = [0, 1, 2, 3];
        let mut seen = 0;
        permute(&mut idx, 0, &mut |p| {
            let ordered: Vec<_> = p.iter().map(|&i| msgs[i]).collect();
            assert_eq!(classify(&result(&ordered, 0)).kind, base);
            seen += 1;
        });
        assert_eq!(seen, 24);
    }

    fn permute(a: &mut [usize; 4], k: usize, f: &mut dyn FnMut(&[usize; 4])) {
        if k == a.len() {
            f(a);
            return;
        }
        for i in k..a.len() {
            a.swap(k, i);
            permute(a, k + 1, f);
            a.swap(k, i);
        }
    }

    #[test]
    fn parse_tolerates_unknown_fields_and_reports_repl_errors() {
        let r = parse_response(r#"{"env": 2, "messages": [], "extra": 1}"#).unwrap();
        assert_eq!(r.env, Some(2));
        assert_eq!(r.raw, r#"{"env":2,"messages":[],"extra":1}"#);
        assert_eq!(
            parse_response(r#"{"message": "Unknown environment."}"#),
            Err(BackendError::Repl("Unknown environment.".into()))
        );
        assert!(matches!(parse_response("not json"), Err(BackendError::ProtocolError(_))));
        assert!(matches!(
            parse_response(r#"{"env": 0, "messages": [{"severity": "fatal", "data": ""}]}"#),
            Err(BackendError::ProtocolError(_))
        ));
    }

    #[test]
    fn raw_reparses_to_same_fields() {
        let r = result(&[("warning", "declaration uses 'sorry'")], 1);
        let again = parse_response(&r.raw).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn header_split_and_merge() {
        let (h, b) = split_header("import Mathlib\nopen Nat\nimport Aesop\n");
        assert_eq!(h, "import Mathlib\nimport Aesop");
        assert_eq!(b, "open Nat");
        assert_eq!(
            merge_contexts("import Mathlib\nopen Nat", "import Mathlib\nopen Nat"),
            "import Mathlib\nopen Nat"
        );
        assert_eq!(
            merge_contexts("open Nat", "import Mathlib\nopen Real"),
            "import Mathlib\nopen Nat\nopen Real"
        );
        assert_eq!(with_default_header("open Nat", Some("import Mathlib")), "import Mathlib\nopen Nat");
        assert_eq!(with_default_header("import X", Some("import Mathlib")), "import X");
        assert_eq!(with_default_header("", Some("import Mathlib")), "import Mathlib");
    }
}
