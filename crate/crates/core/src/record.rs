//! Record and manifest model plus the newline-delimited manifest format.
//!
//! A manifest file starts with a header object carrying `schema_version` and
//! `batch_id`, followed by one record object per line. Malformed record lines
//! are reported back with their 1-based line number instead of being dropped
//! silently.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Reject,
}

/// Closed set of rejection causes, one per filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCode {
    NotChinese,
    SourceUnsafe,
    Blacklisted,
    WordLength,
    LowLanguageConfidence,
    StopWords,
    NoNoun,
    UnkExcess,
    LowEntropy,
    TextUnsafe,
    DecodeFailure,
    AspectRatio,
    MinEdge,
    Flat,
    LowTextual,
    TooSmall,
    Blurry,
    LowImageEntropy,
    ImageUnsafe,
    NearDuplicate,
    AlignmentLow,
    AlignmentHigh,
    CrossBatchDuplicate,
}

impl ReasonCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCode::NotChinese => "not_chinese",
            ReasonCode::SourceUnsafe => "source_unsafe",
            ReasonCode::Blacklisted => "blacklisted",
            ReasonCode::WordLength => "word_length",
            ReasonCode::LowLanguageConfidence => "low_language_confidence",
            ReasonCode::StopWords => "stop_words",
            ReasonCode::NoNoun => "no_noun",
            ReasonCode::UnkExcess => "unk_excess",
            ReasonCode::LowEntropy => "low_entropy",
            ReasonCode::TextUnsafe => "text_unsafe",
            ReasonCode::DecodeFailure => "decode_failure",
            ReasonCode::AspectRatio => "aspect_ratio",
            ReasonCode::MinEdge => "min_edge",
            ReasonCode::Flat => "flat",
            ReasonCode::LowTextual => "low_textual",
            ReasonCode::TooSmall => "too_small",
            ReasonCode::Blurry => "blurry",
            ReasonCode::LowImageEntropy => "low_image_entropy",
            ReasonCode::ImageUnsafe => "image_unsafe",
            ReasonCode::NearDuplicate => "near_duplicate",
            ReasonCode::AlignmentLow => "alignment_low",
            ReasonCode::AlignmentHigh => "alignment_high",
            ReasonCode::CrossBatchDuplicate => "cross_batch_duplicate",
        }
    }
}

impl std::fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub stage: String,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<ReasonCode>,
}

impl Verdict {
    pub fn keep(stage: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            decision: Decision::Keep,
            reason: None,
        }
    }

    pub fn reject(stage: impl Into<String>, reason: ReasonCode) -> Self {
        Self {
            stage: stage.into(),
            decision: Decision::Reject,
            reason: Some(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub url: String,
    pub domain: String,
    pub text: String,
    pub image_ref: String,
    pub batch_id: u32,
    #[serde(default)]
    pub verdicts: Vec<Verdict>,
}

impl Record {
    /// Builds a fresh record, deriving `domain` from `url`.
    pub fn new(
        id: impl Into<String>,
        url: impl Into<String>,
        text: impl Into<String>,
        image_ref: impl Into<String>,
        batch_id: u32,
    ) -> Self {
        let url = url.into();
        let domain = domain::domain_from_url(&url).unwrap_or_default();
        Self {
            id: id.into(),
            url,
            domain,
            text: text.into(),
            image_ref: image_ref.into(),
            batch_id,
            verdicts: Vec::new(),
        }
    }

    pub fn is_rejected(&self) -> bool {
        self.verdicts
            .iter()
            .any(|v| v.decision == Decision::Reject)
    }

    pub fn rejection(&self) -> Option<&Verdict> {
        self.verdicts
            .iter()
            .find(|v| v.decision == Decision::Reject)
    }

    /// Appends a verdict. A rejected record never takes further verdicts.
    pub fn push_verdict(&mut self, verdict: Verdict) -> Result<()> {
        if self.is_rejected() {
            return Err(Error::Invariant(format!(
                "record `{}` already rejected, cannot record stage `{}`",
                self.id, verdict.stage
            )));
        }
        self.verdicts.push(verdict);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub batch_id: u32,
    pub schema_version: u32,
    pub records: Vec<Record>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    batch_id: u32,
}

impl Manifest {
    pub fn empty(batch_id: u32) -> Self {
        Self {
            batch_id,
            schema_version: SCHEMA_VERSION,
            records: Vec::new(),
        }
    }

    /// Builds a manifest, checking id uniqueness and batch membership.
    pub fn new(batch_id: u32, records: Vec<Record>) -> Result<Self> {
        let m = Self {
            batch_id,
            schema_version: SCHEMA_VERSION,
            records,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if r.batch_id != self.batch_id {
                return Err(Error::Invariant(format!(
                    "record `{}` has batch_id {} in manifest for batch {}",
                    r.id, r.batch_id, self.batch_id
                )));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Duplicate(r.id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A malformed manifest line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Result of reading a manifest: the well-formed records plus per-line errors.
#[derive(Debug, Clone)]
pub struct ManifestRead {
    pub manifest: Manifest,
    pub errors: Vec<LineError>,
}

impl ManifestRead {
    /// Fails if any line was malformed.
    pub fn into_strict(self) -> Result<Manifest> {
        if let Some(first) = self.errors.first() {
            return Err(Error::Format(format!(
                "{} malformed manifest line(s), first at {}",
                self.errors.len(),
                first
            )));
        }
        Ok(self.manifest)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<ManifestRead> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_manifest(reader: impl BufRead) -> Result<ManifestRead> {
    let mut header: Option<Header> = None;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io("<manifest>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(h) = &header else {
            let h: Header = serde_json::from_str(&line).map_err(|e| {
                Error::Format(format!("line {lineno}: expected manifest header: {e}"))
            })?;
            if h.schema_version != SCHEMA_VERSION {
                return Err(Error::Version {
                    found: h.schema_version,
                    expected: SCHEMA_VERSION,
                });
            }
            header = Some(h);
            continue;
        };
        match serde_json::from_str::<Record>(&line) {
            Ok(r) if r.batch_id != h.batch_id => errors.push(LineError {
                line: lineno,
                message: format!(
                    "record `{}` has batch_id {}, manifest batch is {}",
                    r.id, r.batch_id, h.batch_id
                ),
            }),
            Ok(r) if seen.contains(&r.id) => errors.push(LineError {
                line: lineno,
                message: format!("duplicate id `{}`", r.id),
            }),
            Ok(r) => {
                seen.insert(r.id.clone());
                records.push(r);
            }
            Err(e) => errors.push(LineError {
                line: lineno,
                message: e.to_string(),
            }),
        }
    }

    let batch_id = header.map(|h| h.batch_id).unwrap_or(0);
    Ok(ManifestRead {
        manifest: Manifest {
            batch_id,
            schema_version: SCHEMA_VERSION,
            records,
        },
        errors,
    })
}

pub fn write_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_manifest_to(m, &mut w).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_manifest_to(m: &Manifest, w: &mut impl Write) -> Result<()> {
    let header = Header {
        schema_version: m.schema_version,
        batch_id: m.batch_id,
    };
    let io = |e: std::io::Error| Error::io("<manifest>", e);
    serde_json::to_writer(&mut *w, &header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n").map_err(io)?;
    for r in &m.records {
        serde_json::to_writer(&mut *w, r).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    Ok(())
}

/// Writes records as bare JSON lines (no header), e.g. the rejection audit.
pub fn write_records_jsonl<'a>(
    records: impl IntoIterator<Item = &'a Record>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records_jsonl(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        out.push(r);
    }
    Ok(out)
}
