//! Curation engine for web-scale image-text corpora: caption and image
//! filters, embedding near-duplicate removal, cross-modal alignment banding,
//! stage accounting, and dataset diagnostics.

pub mod analyze;
pub mod bindings;
pub mod config;
pub mod crossmodal;
pub mod dedup;
pub mod domain;
pub mod embed;
pub mod error;
pub mod image;
pub mod pipeline;
pub mod ports;
pub mod record;
pub mod report;
pub mod source;
pub mod stage;
pub mod synth;
pub mod text;
pub mod verdict;

pub use bindings::Ports;
pub use config::{ConfigIssue, FilterConfig};
pub use error::{Error, PortFailure, Result};
pub use record::{Decision, Manifest, ReasonCode, Record, Verdict};
pub use report::{Report, StageReport};
