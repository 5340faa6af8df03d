//! Pluggable scorer components and their three bindings: built-in stubs,
//! precomputed score files keyed by record id, and external processes
//! speaking a line-delimited JSON protocol over stdin/stdout.
//!
//! Process protocol: one JSON object per request line, one JSON object per
//! response line. Requests always carry `id`; responses must echo it.
//!
//! | port            | request fields              | response fields                      |
//! |-----------------|-----------------------------|--------------------------------------|
//! | text scorer     | `id`, `text`                | `id`, `score` (number or null)       |
//! | image scorer    | `id`, `image_ref`           | `id`, `score` (number or null)       |
//! | language        | `id`, `text`                | `id`, `tag`, `confidence`            |
//! | tokenizer       | `id`, `op`, `text`          | `id`, `tokens` / `words` / `pos`     |
//! | image decoder   | `id`, `image_ref`           | `id`, `width`, `height`, `channels`, then raw samples; or `id`, `error` |

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde_json::{json, Value};

use crate::error::{Error, PortFailure, Result};
use crate::image::ImageBuffer;

/// Scores caption text, e.g. a safety classifier or a language model's perplexity.
/// `Ok(None)` means the record is unscored.
pub trait TextScorer: Send + Sync {
    fn score(&self, id: &str, text: &str) -> Result<Option<f64>, PortFailure>;
}

/// Scores a decoded image (safety, text-in-image, ...).
pub trait ImageScorer: Send + Sync {
    fn score(&self, id: &str, image_ref: &str, image: &ImageBuffer)
        -> Result<Option<f64>, PortFailure>;
}

/// Always returns the same score. `ConstantScorer(0.0)` is the offline
/// pass-through stub.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantScorer(pub f64);

impl Default for ConstantScorer {
    fn default() -> Self {
        ConstantScorer(0.0)
    }
}

impl TextScorer for ConstantScorer {
    fn score(&self, _id: &str, _text: &str) -> Result<Option<f64>, PortFailure> {
        Ok(Some(self.0))
    }
}

impl ImageScorer for ConstantScorer {
    fn score(&self, _: &str, _: &str, _: &ImageBuffer) -> Result<Option<f64>, PortFailure> {
        Ok(Some(self.0))
    }
}

/// Precomputed per-record scores: `id<TAB>score` per line, `#` comments.
#[derive(Debug, Clone, Default)]
pub struct ScoreFile {
    scores: HashMap<String, f64>,
}

impl ScoreFile {
    pub fn from_map(scores: HashMap<String, f64>) -> Self {
        Self { scores }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut scores = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, score) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!("{}:{}: expected `id<TAB>score`", path.display(), i + 1))
            })?;
            let score: f64 = score.trim().parse().map_err(|_| {
                Error::Format(format!("{}:{}: invalid score `{score}`", path.display(), i + 1))
            })?;
            if !score.is_finite() {
                return Err(Error::Format(format!(
                    "{}:{}: non-finite score",
                    path.display(),
                    i + 1
                )));
            }
            scores.insert(id.to_string(), score);
        }
        Ok(Self { scores })
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.scores.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl TextScorer for ScoreFile {
    fn score(&self, id: &str, _text: &str) -> Result<Option<f64>, PortFailure> {
        Ok(self.get(id))
    }
}

impl ImageScorer for ScoreFile {
    fn score(&self, id: &str, _: &str, _: &ImageBuffer) -> Result<Option<f64>, PortFailure> {
        Ok(self.get(id))
    }
}

struct ProcessIo {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

/// A long-running external process answering one JSON line per request.
///
/// Calls are serialized through a mutex; the process sees requests in the
/// order callers acquire it, and each response is matched by `id`.
pub struct ProcessClient {
    port: &'static str,
    io: Mutex<ProcessIo>,
    seq: AtomicU64,
}

impl std::fmt::Debug for ProcessClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProcessClient").field("port", &self.port).finish()
    }
}

impl ProcessClient {
    pub fn spawn(port: &'static str, command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config(format!("port `{port}`: empty command")))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Port {
                port,
                record_id: String::new(),
                message: format!("cannot spawn `{program}`: {e}"),
            })?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            port,
            io: Mutex::new(ProcessIo {
                child,
                stdin,
                stdout,
            }),
            seq: AtomicU64::new(0),
        })
    }

    pub fn next_seq(&self) -> String {
        format!("#{}", self.seq.fetch_add(1, Ordering::Relaxed))
    }

    fn fail(&self, msg: impl Into<String>) -> PortFailure {
        PortFailure::new(self.port, msg)
    }

    /// Sends `request` and reads one response line. When `payload_len`
    /// returns a size for the parsed response, that many raw bytes are read
    /// right after the line.
    pub fn call_with_payload(
        &self,
        request: &Value,
        payload_len: impl Fn(&Value) -> Option<usize>,
    ) -> Result<(Value, Vec<u8>), PortFailure> {
        let mut io = self.io.lock().map_err(|_| self.fail("process mutex poisoned"))?;
        let line = serde_json::to_string(request).map_err(|e| self.fail(e.to_string()))?;
        io.stdin
            .write_all(line.as_bytes())
            .and_then(|_| io.stdin.write_all(b"\n"))
            .and_then(|_| io.stdin.flush())
            .map_err(|e| self.fail(format!("write failed: {e}")))?;
        let mut response = String::new();
        let n = io
            .stdout
            .read_line(&mut response)
            .map_err(|e| self.fail(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(self.fail("process closed its output"));
        }
        let value: Value = serde_json::from_str(response.trim_end())
            .map_err(|e| self.fail(format!("malformed response: {e}")))?;
        if value.get("id") != request.get("id") {
            return Err(self.fail(format!(
                "response id {:?} does not match request id {:?}",
                value.get("id"),
                request.get("id")
            )));
        }
        let mut payload = Vec::new();
        if let Some(len) = payload_len(&value) {
            payload.resize(len, 0);
            io.stdout
                .read_exact(&mut payload)
                .map_err(|e| self.fail(format!("short payload: {e}")))?;
        }
        Ok((value, payload))
    }

    pub fn call(&self, request: &Value) -> Result<Value, PortFailure> {
        self.call_with_payload(request, |_| None).map(|(v, _)| v)
    }

    pub fn port(&self) -> &'static str {
        self.port
    }
}

impl Drop for ProcessClient {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.stdin.flush();
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

pub(crate) fn optional_score(port: &'static str, v: &Value) -> Result<Option<f64>, PortFailure> {
    match v.get("score") {
        None | Some(Value::Null) => Ok(None),
        Some(s) => s
            .as_f64()
            .filter(|s| s.is_finite())
            .map(Some)
            .ok_or_else(|| PortFailure::new(port, format!("invalid score {s}"))),
    }
}

/// Text scorer backed by an external process.
#[derive(Debug)]
pub struct ProcessTextScorer(pub ProcessClient);

impl TextScorer for ProcessTextScorer {
    fn score(&self, id: &str, text: &str) -> Result<Option<f64>, PortFailure> {
        let v = self.0.call(&json!({ "id": id, "text": text }))?;
        optional_score(self.0.port(), &v)
    }
}

/// Image scorer backed by an external process; the process receives the
/// image reference, not pixels.
#[derive(Debug)]
pub struct ProcessImageScorer(pub ProcessClient);

impl ImageScorer for ProcessImageScorer {
    fn score(&self, id: &str, image_ref: &str, _: &ImageBuffer) -> Result<Option<f64>, PortFailure> {
        let v = self.0.call(&json!({ "id": id, "image_ref": image_ref }))?;
        optional_score(self.0.port(), &v)
    }
}
