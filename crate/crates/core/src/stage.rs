//! Per-record stage execution: ordered substeps, parallel map over records
//! with input order preserved, and left-count tallies per substep.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::record::{ReasonCode, Record, Verdict};
use crate::report::{build_stage_report, StageReport};

/// Result of running one record through a stage. `record` carries the
/// (possibly normalized) text and the stage verdict.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub record: Record,
    /// Index of the rejecting substep and its reason.
    pub rejected_at: Option<(usize, ReasonCode)>,
}

impl Outcome {
    pub fn keep(stage: &str, mut record: Record) -> Result<Self> {
        record.push_verdict(Verdict::keep(stage))?;
        Ok(Self {
            record,
            rejected_at: None,
        })
    }

    pub fn reject(stage: &str, mut record: Record, substep: usize, reason: ReasonCode) -> Result<Self> {
        record.push_verdict(Verdict::reject(stage, reason))?;
        Ok(Self {
            record,
            rejected_at: Some((substep, reason)),
        })
    }
}

/// A stage that decides each record independently.
pub trait RecordStage: Sync {
    /// Name recorded in verdict trails, e.g. `text_refine`.
    fn name(&self) -> &'static str;
    /// Report labels `(stage, substep)` in execution order.
    fn substeps(&self) -> Vec<(&'static str, &'static str)>;
    fn process(&self, record: &Record) -> Result<Outcome>;
}

/// Survivors, rejections and per-substep rejection counts of one stage run.
#[derive(Debug, Clone, Default)]
pub struct StageOutput {
    pub kept: Vec<Record>,
    pub rejected: Vec<Record>,
    pub labels: Vec<(String, String)>,
    pub rejections: Vec<u64>,
}

impl StageOutput {
    pub fn empty(labels: &[(&str, &str)]) -> Self {
        Self {
            kept: Vec::new(),
            rejected: Vec::new(),
            labels: labels.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            rejections: vec![0; labels.len()],
        }
    }

    fn push(&mut self, o: Outcome) {
        match o.rejected_at {
            Some((i, _)) => {
                self.rejections[i] += 1;
                self.rejected.push(o.record);
            }
            None => self.kept.push(o.record),
        }
    }

    /// Left counts after each substep, starting from `input`.
    pub fn left_counts(&self, input: u64) -> Vec<(String, String, u64)> {
        let mut left = input;
        self.labels
            .iter()
            .zip(&self.rejections)
            .map(|((s, t), r)| {
                left -= r;
                (s.clone(), t.clone(), left)
            })
            .collect()
    }

    pub fn input_count(&self) -> u64 {
        (self.kept.len() + self.rejected.len()) as u64
    }

    /// Report rows against the stage's own input count.
    pub fn report(&self) -> Result<Vec<StageReport>> {
        let n = self.input_count();
        build_stage_report(&self.left_counts(n), n)
    }

    /// Adds another shard's output for the same stage.
    pub fn merge(&mut self, other: StageOutput) {
        debug_assert_eq!(self.labels, other.labels);
        self.kept.extend(other.kept);
        self.rejected.extend(other.rejected);
        for (a, b) in self.rejections.iter_mut().zip(other.rejections) {
            *a += b;
        }
    }
}

/// A stage that stopped on an error. `partial` holds the outcomes of the
/// records before the first failing one.
#[derive(Debug)]
pub struct StageAbort {
    pub error: Error,
    pub partial: StageOutput,
}

impl std::fmt::Display for StageAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({} record(s) decided before the failure)",
            self.error,
            self.partial.input_count()
        )
    }
}

impl std::error::Error for StageAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<StageAbort> for Error {
    fn from(a: StageAbort) -> Self {
        a.error
    }
}

impl From<Error> for StageAbort {
    fn from(error: Error) -> Self {
        StageAbort {
            error,
            partial: StageOutput::default(),
        }
    }
}

/// Runs `stage` over `records` on the current rayon pool. Records already
/// rejected by an earlier stage are not allowed.
pub fn run_records(stage: &dyn RecordStage, records: &[Record]) -> Result<StageOutput, StageAbort> {
    let labels = stage.substeps();
    let mut out = StageOutput::empty(&labels);
    if let Some(r) = records.iter().find(|r| r.is_rejected()) {
        return Err(StageAbort {
            error: Error::Invariant(format!("record `{}` entered `{}` after rejection", r.id, stage.name())),
            partial: out,
        });
    }
    let results: Vec<Result<Outcome>> = records.par_iter().map(|r| stage.process(r)).collect();
    for res in results {
        match res {
            Ok(o) => out.push(o),
            Err(error) => return Err(StageAbort { error, partial: out }),
        }
    }
    Ok(out)
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}
