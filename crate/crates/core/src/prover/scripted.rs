use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, Channel, ProverBackend, ReplRequest, Session, SessionHandle, SessionOptions};

/// Whitespace-insensitive form of a command, used as the transcript key.
pub fn normalize_request(src: &str) -> String {
    src.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One recorded exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: String,
    pub response: Value,
}

impl TranscriptEntry {
    pub fn new(request: &str, response: Value) -> Self {
        Self {
            request: normalize_request(request),
            response,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        Self { entries }
    }

    pub fn push(&mut self, request: &str, response: Value) {
        self.entries.push(TranscriptEntry::new(request, response));
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let file = fs::File::open(path)?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
                BackendError::ProtocolError(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            entry.request = normalize_request(&entry.request);
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(self.to_jsonl().as_bytes())?;
        tmp.persist(path).map_err(|e| BackendError::Io(e.to_string()))?;
        Ok(())
    }
}

/// A command observed by a scripted or recording backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuedCommand {
    pub session_id: String,
    pub cmd: String,
    pub env: Option<u64>,
}

type ResponseTable = HashMap<String, Vec<Value>>;

/// Replays a transcript. Repeated requests consume recorded responses in
/// order, per session, and keep returning the last one once exhausted.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    table: Arc<ResponseTable>,
    log: Arc<Mutex<Vec<IssuedCommand>>>,
    counter: Arc<AtomicUsize>,
    toolchain: String,
}

impl ScriptedBackend {
    pub fn new(transcript: &Transcript) -> Self {
        let mut table: ResponseTable = HashMap::new();
        for e in &transcript.entries {
            table.entry(e.request.clone()).or_default().push(e.response.clone());
        }
        Self {
            table: Arc::new(table),
            log: Arc::new(Mutex::new(Vec::new())),
            counter: Arc::new(AtomicUsize::new(0)),
            toolchain: "scripted".to_string(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::new(&Transcript::load(path)?))
    }

    /// Every command issued so far, across sessions, in issue order.
    pub fn issued(&self) -> Vec<IssuedCommand> {
        self.log.lock().expect("log lock").clone()
    }

    pub fn clear_log(&self) {
        self.log.lock().expect("log lock").clear();
    }
}

impl ProverBackend for ScriptedBackend {
    fn kind(&self) -> &str {
        "scripted"
    }

    fn toolchain(&self) -> String {
        self.toolchain.clone()
    }

    fn start_session(&self, options: SessionOptions) -> Result<Session, BackendError> {
        let id = format!("scripted-{}", self.counter.fetch_add(1, Ordering::SeqCst));
        let channel = ScriptedChannel {
            session_id: id.clone(),
            table: Arc::clone(&self.table),
            cursors: HashMap::new(),
            log: Arc::clone(&self.log),
        };
        Ok(Session::new(
            SessionHandle {
                session_id: id,
                base_env: None,
                toolchain: self.toolchain.clone(),
            },
            Box::new(channel),
            options,
        ))
    }
}

struct ScriptedChannel {
    session_id: String,
    table: Arc<ResponseTable>,
    cursors: HashMap<String, usize>,
    log: Arc<Mutex<Vec<IssuedCommand>>>,
}

impl Channel for ScriptedChannel {
    fn exchange(&mut self, request: &ReplRequest, _timeout: Duration) -> Result<String, BackendError> {
        self.log.lock().expect("log lock").push(IssuedCommand {
            session_id: self.session_id.clone(),
            cmd: request.cmd.clone(),
            env: request.env,
        });
        let key = normalize_request(&request.cmd);
        let responses = self.table.get(&key).ok_or_else(|| {
            BackendError::ProtocolError(format!("no transcript entry for request: {key}"))
        })?;
        let cursor = self.cursors.entry(key).or_insert(0);
        let response = &responses[(*cursor).min(responses.len() - 1)];
        *cursor += 1;
        Ok(response.to_string())
    }

    fn restart(&mut self) -> Result<(), BackendError> {
        self.cursors.clear();
        Ok(())
    }
}

/// Wraps a backend and records every exchange as a transcript.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Arc<Mutex<Vec<TranscriptEntry>>>,
}

impl<B: ProverBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn transcript(&self) -> Transcript {
        Transcript::new(self.recorded.lock().expect("record lock").clone())
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ProverBackend> ProverBackend for RecordingBackend<B> {
    fn kind(&self) -> &str {
        self.inner.kind()
    }

    fn toolchain(&self) -> String {
        self.inner.toolchain()
    }

    fn start_session(&self, options: SessionOptions) -> Result<Session, BackendError> {
        let session = self.inner.start_session(options)?;
        let (handle, channel) = session.into_parts();
        Ok(Session::new(
            handle,
            Box::new(RecordingChannel {
                inner: channel,
                recorded: Arc::clone(&self.recorded),
            }),
            options,
        ))
    }
}

struct RecordingChannel {
    inner: Box<dyn Channel>,
    recorded: Arc<Mutex<Vec<TranscriptEntry>>>,
}

impl Channel for RecordingChannel {
    fn exchange(&mut self, request: &ReplRequest, timeout: Duration) -> Result<String, BackendError> {
        let raw = self.inner.exchange(request, timeout)?;
        let value: Value = serde_json::from_str(raw.trim())
            .map_err(|e| BackendError::ProtocolError(format!("unparseable response: {e}")))?;
        self.recorded
            .lock()
            .expect("record lock")
            .push(TranscriptEntry::new(&request.cmd, value));
        Ok(raw)
    }

    fn restart(&mut self) -> Result<(), BackendError> {
        self.inner.restart()
    }
}
