//! End-to-end run: source selection, text refinement, visual
//! diversification, within-batch dedup, alignment banding and cross-batch
//! dedup, with shard checkpoints and resume.
//!
//! Output directory layout:
//!
//! ```text
//! final/batch-<k>.jsonl        surviving records per batch
//! rejected.jsonl               every rejected record with its verdict trail
//! report.txt, report.csv       stage accounting
//! dedup_within_audit.csv       duplicate sets found inside batches
//! dedup_cross_audit.csv        duplicate sets found across batches
//! alignment_audit.csv          image/text distance per record
//! intermediate/<stage>/        survivors after each stage (optional)
//! ckpt/                        resume state
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bindings::Ports;
use crate::config::FilterConfig;
use crate::crossmodal::{run_crossmodal_stage, write_alignment_audit, AlignmentScore, Band, CROSSMODAL_STAGE};
use crate::dedup::{run_dedup_stage, write_dedup_audit, DedupAuditRow, DedupScope};
use crate::embed::{store_for, EmbeddingStore};
use crate::error::{Error, Result};
use crate::image::ImageStage;
use crate::record::{read_manifest, write_manifest, write_manifest_to, write_records_jsonl, Manifest, Record};
use crate::report::{LeftCount, Report};
use crate::source::SourceStage;
use crate::stage::{run_records, with_workers, RecordStage};
use crate::text::TextStage;

/// Stage names in execution order.
pub const PLAN: [&str; 6] = [
    "source_select",
    "text_refine",
    "visual_diversify",
    "dedup_within",
    "crossmodal",
    "dedup_cross",
];

pub const DOWNLOAD_ROW: (&str, &str) = ("Data Source Selection", "Download Success");
pub const REDUNDANCY_ROW: (&str, &str) = ("Visual Diversification", "Perceptual and Semantic Redundancy");
pub const ALIGN_LOW_ROW: (&str, &str) = (
    "Cross-Modal Cross-Batch Filtering",
    "Cross-Modal Alignment Assessment (below band)",
);
pub const ALIGN_HIGH_ROW: (&str, &str) = (
    "Cross-Modal Cross-Batch Filtering",
    "Cross-Modal Alignment Assessment (above band)",
);
pub const CROSS_BATCH_ROW: (&str, &str) = ("Cross-Modal Cross-Batch Filtering", "Cross-Batch Redundancy Removal");

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Reuse checkpoints from an earlier run with the same config and inputs.
    pub resume: bool,
    /// Write survivors after every stage under `intermediate/`.
    pub emit_intermediate: bool,
    /// Externally measured download success count.
    pub download_count: Option<u64>,
    /// Stop with [`Error::Interrupted`] after this many checkpoints are
    /// written. For exercising resume.
    pub interrupt_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: Report,
    pub kept: usize,
    pub rejected: usize,
}

#[derive(Serialize, Deserialize)]
struct ShardState {
    kept: Vec<Record>,
    rejected: Vec<Record>,
    rejections: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct DedupState {
    kept: Vec<Record>,
    dropped: Vec<Record>,
    audit: Vec<DedupAuditRow>,
}

#[derive(Serialize, Deserialize)]
struct AlignState {
    kept: Vec<Record>,
    rejected: Vec<Record>,
    low: u64,
    high: u64,
    scores: Vec<AlignmentScore>,
}

struct Checkpoints {
    dir: PathBuf,
    resume: bool,
    written: usize,
    limit: Option<usize>,
}

impl Checkpoints {
    fn open(out: &Path, fingerprint: &str, resume: bool, limit: Option<usize>) -> Result<Self> {
        let dir = out.join("ckpt");
        let fp_path = dir.join("fingerprint");
        let mut resume = resume;
        if resume {
            match fs::read_to_string(&fp_path) {
                Ok(found) if found.trim() == fingerprint => {}
                Ok(_) => {
                    return Err(Error::Config(
                        "checkpoint was written with a different config or input; rerun without --resume".into(),
                    ))
                }
                Err(_) => resume = false,
            }
        }
        if !resume && dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        fs::write(&fp_path, fingerprint).map_err(|e| Error::io(&fp_path, e))?;
        Ok(Self {
            dir,
            resume,
            written: 0,
            limit,
        })
    }

    fn load<T: DeserializeOwned>(&self, rel: &str) -> Result<Option<T>> {
        if !self.resume {
            return Ok(None);
        }
        let path = self.dir.join(rel);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display()))),
            Err(_) => Ok(None),
        }
    }

    fn save<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        let bytes = serde_json::to_vec(value).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        self.written += 1;
        if self.limit.is_some_and(|l| self.written >= l) {
            return Err(Error::Interrupted(self.written));
        }
        Ok(())
    }
}

/// Hash of everything that determines the output: config (minus worker
/// count) and input records.
pub fn fingerprint(cfg: &FilterConfig, inputs: &[Manifest]) -> Result<String> {
    let mut c = cfg.clone();
    c.workers = 1;
    let mut h = Sha256::new();
    h.update(c.to_toml().as_bytes());
    for m in inputs {
        let mut buf = Vec::new();
        write_manifest_to(m, &mut buf)?;
        h.update((buf.len() as u64).to_le_bytes());
        h.update(&buf);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Reads input manifests, failing on any malformed line.
pub fn read_inputs(paths: &[PathBuf]) -> Result<Vec<Manifest>> {
    paths.iter().map(|p| read_manifest(p)?.into_strict()).collect()
}

fn check_unique_ids(inputs: &[Manifest]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for r in inputs.iter().flat_map(|m| &m.records) {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Duplicate(r.id.clone()));
        }
    }
    Ok(())
}

fn run_sharded(
    stage: &dyn RecordStage,
    shards: Vec<Vec<Record>>,
    ck: &mut Checkpoints,
    rejected: &mut Vec<Record>,
) -> Result<(Vec<Vec<Record>>, Vec<u64>)> {
    let mut totals = vec![0u64; stage.substeps().len()];
    let mut kept = Vec::with_capacity(shards.len());
    for (k, shard) in shards.into_iter().enumerate() {
        let rel = format!("{}/shard-{k:05}.json", stage.name());
        let state = match ck.load::<ShardState>(&rel)? {
            Some(s) => s,
            None => {
                let out = run_records(stage, &shard).map_err(|abort| {
                    log::error!("stage {} aborted: {abort}", stage.name());
                    abort.error
                })?;
                let s = ShardState {
                    kept: out.kept,
                    rejected: out.rejected,
                    rejections: out.rejections,
                };
                ck.save(&rel, &s)?;
                s
            }
        };
        for (t, r) in totals.iter_mut().zip(&state.rejections) {
            *t += r;
        }
        rejected.extend(state.rejected);
        kept.push(state.kept);
    }
    Ok((kept, totals))
}

fn push_rows(
    rows: &mut Vec<(String, String, LeftCount)>,
    left: &mut u64,
    labels: Vec<(&'static str, &'static str)>,
    rejections: &[u64],
) {
    for ((s, t), r) in labels.into_iter().zip(rejections) {
        *left -= r;
        rows.push((s.into(), t.into(), LeftCount::Counted(*left)));
    }
}

fn write_batches(dir: &Path, batches: &BTreeSet<u32>, records: &[Record]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for &b in batches {
        let recs: Vec<Record> = records.iter().filter(|r| r.batch_id == b).cloned().collect();
        write_manifest(&Manifest::new(b, recs)?, dir.join(format!("batch-{b}.jsonl")))?;
    }
    Ok(())
}

fn write_csv_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Runs the full plan over `inputs`, writing all artifacts to `out`.
pub fn run_pipeline(
    cfg: &FilterConfig,
    ports: &Ports,
    inputs: &[Manifest],
    out: &Path,
    opts: &RunOptions,
) -> Result<RunSummary> {
    if cfg.ports.embeddings.is_none() {
        return Err(Error::Config("ports.embeddings must be set for a full run".into()));
    }
    check_unique_ids(inputs)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut ck = Checkpoints::open(out, &fingerprint(cfg, inputs)?, opts.resume, opts.interrupt_after)?;
    with_workers(cfg.workers, || run_plan(cfg, ports, inputs, out, opts, &mut ck))?
}

fn run_plan(
    cfg: &FilterConfig,
    ports: &Ports,
    inputs: &[Manifest],
    out: &Path,
    opts: &RunOptions,
    ck: &mut Checkpoints,
) -> Result<RunSummary> {
    let batches: BTreeSet<u32> = inputs.iter().map(|m| m.batch_id).collect();
    let all: Vec<Record> = inputs.iter().flat_map(|m| m.records.iter().cloned()).collect();
    let initial = all.len() as u64;
    let mut shards: Vec<Vec<Record>> = all.chunks(cfg.shard_size.max(1)).map(<[Record]>::to_vec).collect();
    drop(all);

    let mut rejected = Vec::new();
    let mut rows: Vec<(String, String, LeftCount)> = Vec::new();
    let mut left = initial;
    let intermediate = |name: &str, recs: &[Record]| -> Result<()> {
        if opts.emit_intermediate {
            write_batches(&out.join("intermediate").join(name), &batches, recs)?;
        }
        Ok(())
    };

    let per_record: [&dyn RecordStage; 3] = [
        &SourceStage::new(cfg, ports),
        &TextStage::new(cfg, ports, false),
        &ImageStage::new(cfg, ports),
    ];
    for stage in per_record {
        let (kept, rejections) = run_sharded(stage, shards, ck, &mut rejected)?;
        push_rows(&mut rows, &mut left, stage.substeps(), &rejections);
        if stage.name() == PLAN[0] {
            let (s, t) = DOWNLOAD_ROW;
            let d = opts.download_count.map_or(LeftCount::NotAvailable, LeftCount::External);
            rows.push((s.into(), t.into(), d));
        }
        shards = kept;
        intermediate(stage.name(), &shards.concat())?;
    }
    let survivors: Vec<Record> = shards.concat();

    // built once, on first use; a resumed run may skip the stages that need it
    let mut store: Option<EmbeddingStore> = None;
    let binding = cfg.ports.embeddings.as_ref().expect("checked above");
    let within: DedupState = match ck.load(PLAN[3])? {
        Some(s) => s,
        None => {
            let s = store_for(binding, &survivors)?;
            let o = run_dedup_stage(survivors.clone(), &s, cfg.beta, DedupScope::WithinBatch)?;
            store = Some(s);
            let st = DedupState {
                kept: o.kept,
                dropped: o.dropped,
                audit: o.audit,
            };
            ck.save(PLAN[3], &st)?;
            st
        }
    };
    left -= within.dropped.len() as u64;
    rows.push((REDUNDANCY_ROW.0.into(), REDUNDANCY_ROW.1.into(), LeftCount::Counted(left)));
    intermediate(PLAN[3], &within.kept)?;

    let align: AlignState = match ck.load(PLAN[4])? {
        Some(s) => s,
        None => {
            let s = match store.take() {
                Some(s) => s,
                None => store_for(binding, &survivors)?,
            };
            let band = Band {
                low: cfg.l2_low,
                high: cfg.l2_high,
                reject_low: cfg.reject_low_band,
            };
            let o = run_crossmodal_stage(within.kept.clone(), &s, band)?;
            store = Some(s);
            let st = AlignState {
                kept: o.kept,
                rejected: o.rejected,
                low: o.rejected_low,
                high: o.rejected_high,
                scores: o.scores,
            };
            ck.save(PLAN[4], &st)?;
            st
        }
    };
    left -= align.low;
    rows.push((ALIGN_LOW_ROW.0.into(), ALIGN_LOW_ROW.1.into(), LeftCount::Counted(left)));
    left -= align.high;
    rows.push((ALIGN_HIGH_ROW.0.into(), ALIGN_HIGH_ROW.1.into(), LeftCount::Counted(left)));
    intermediate(CROSSMODAL_STAGE, &align.kept)?;

    let cross: DedupState = match ck.load(PLAN[5])? {
        Some(s) => s,
        None => {
            let s = match store.take() {
                Some(s) => s,
                None => store_for(binding, &survivors)?,
            };
            let o = run_dedup_stage(align.kept.clone(), &s, cfg.cross_batch_beta, DedupScope::CrossBatch)?;
            let st = DedupState {
                kept: o.kept,
                dropped: o.dropped,
                audit: o.audit,
            };
            ck.save(PLAN[5], &st)?;
            st
        }
    };
    left -= cross.dropped.len() as u64;
    rows.push((CROSS_BATCH_ROW.0.into(), CROSS_BATCH_ROW.1.into(), LeftCount::Counted(left)));

    rejected.extend(within.dropped);
    rejected.extend(align.rejected);
    rejected.extend(cross.dropped);

    let row_refs: Vec<(&str, &str, LeftCount)> = rows.iter().map(|(s, t, l)| (s.as_str(), t.as_str(), *l)).collect();
    let report = Report::new(initial, &row_refs)?;
    if report.final_count() != cross.kept.len() as u64 {
        return Err(Error::Invariant(format!(
            "report ends at {} but {} records survived",
            report.final_count(),
            cross.kept.len()
        )));
    }
    if cross.kept.len() + rejected.len() != initial as usize {
        return Err(Error::Invariant("records were lost or duplicated".into()));
    }

    write_batches(&out.join("final"), &batches, &cross.kept)?;
    write_records_jsonl(&rejected, out.join("rejected.jsonl"))?;
    report.write_files(out.join("report.txt"), out.join("report.csv"))?;
    write_csv_file(&out.join("dedup_within_audit.csv"), |w| write_dedup_audit(&within.audit, w))?;
    write_csv_file(&out.join("dedup_cross_audit.csv"), |w| write_dedup_audit(&cross.audit, w))?;
    write_csv_file(&out.join("alignment_audit.csv"), |w| write_alignment_audit(&align.scores, w))?;

    Ok(RunSummary {
        kept: cross.kept.len(),
        rejected: rejected.len(),
        report,
    })
}

/// Runs the single plan stage `name` (one of [`PLAN`]) over `inputs` and
/// writes survivors under `final/`, rejections, the stage's report rows and
/// any audit file to `out`. No checkpoints are kept.
pub fn run_stage(name: &str, cfg: &FilterConfig, ports: &Ports, inputs: &[Manifest], out: &Path) -> Result<RunSummary> {
    if !PLAN.contains(&name) {
        return Err(Error::Argument(format!("unknown stage `{name}`; expected one of {}", PLAN.join(", "))));
    }
    check_unique_ids(inputs)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    with_workers(cfg.workers, || stage_only(name, cfg, ports, inputs, out))?
}

fn stage_only(name: &str, cfg: &FilterConfig, ports: &Ports, inputs: &[Manifest], out: &Path) -> Result<RunSummary> {
    let batches: BTreeSet<u32> = inputs.iter().map(|m| m.batch_id).collect();
    let all: Vec<Record> = inputs.iter().flat_map(|m| m.records.iter().cloned()).collect();
    let initial = all.len() as u64;
    let mut left = initial;
    let mut rows: Vec<(String, String, LeftCount)> = Vec::new();
    let embeddings = || {
        let binding = cfg.ports.embeddings.as_ref().ok_or_else(|| {
            Error::Config(format!("ports.embeddings must be set for stage `{name}`"))
        })?;
        store_for(binding, &all)
    };
    let (kept, rejected) = match name {
        "source_select" | "text_refine" | "visual_diversify" => {
            let stage: Box<dyn RecordStage + '_> = match name {
                "source_select" => Box::new(SourceStage::new(cfg, ports)),
                "text_refine" => Box::new(TextStage::new(cfg, ports, false)),
                _ => Box::new(ImageStage::new(cfg, ports)),
            };
            let o = run_records(stage.as_ref(), &all)?;
            push_rows(&mut rows, &mut left, stage.substeps(), &o.rejections);
            (o.kept, o.rejected)
        }
        "crossmodal" => {
            let band = Band {
                low: cfg.l2_low,
                high: cfg.l2_high,
                reject_low: cfg.reject_low_band,
            };
            let o = run_crossmodal_stage(all.clone(), &embeddings()?, band)?;
            left -= o.rejected_low;
            rows.push((ALIGN_LOW_ROW.0.into(), ALIGN_LOW_ROW.1.into(), LeftCount::Counted(left)));
            left -= o.rejected_high;
            rows.push((ALIGN_HIGH_ROW.0.into(), ALIGN_HIGH_ROW.1.into(), LeftCount::Counted(left)));
            write_csv_file(&out.join("alignment_audit.csv"), |w| write_alignment_audit(&o.scores, w))?;
            (o.kept, o.rejected)
        }
        _ => {
            let (beta, scope, row, audit) = if name == PLAN[3] {
                (cfg.beta, DedupScope::WithinBatch, REDUNDANCY_ROW, "dedup_within_audit.csv")
            } else {
                (cfg.cross_batch_beta, DedupScope::CrossBatch, CROSS_BATCH_ROW, "dedup_cross_audit.csv")
            };
            let o = run_dedup_stage(all.clone(), &embeddings()?, beta, scope)?;
            left -= o.dropped.len() as u64;
            rows.push((row.0.into(), row.1.into(), LeftCount::Counted(left)));
            write_csv_file(&out.join(audit), |w| write_dedup_audit(&o.audit, w))?;
            (o.kept, o.dropped)
        }
    };
    let row_refs: Vec<(&str, &str, LeftCount)> = rows.iter().map(|(s, t, l)| (s.as_str(), t.as_str(), *l)).collect();
    let report = Report::new(initial, &row_refs)?;
    write_batches(&out.join("final"), &batches, &kept)?;
    write_records_jsonl(&rejected, out.join("rejected.jsonl"))?;
    report.write_files(out.join("report.txt"), out.join("report.csv"))?;
    Ok(RunSummary {
        kept: kept.len(),
        rejected: rejected.len(),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EmbeddingBinding;

    fn cfg() -> FilterConfig {
        FilterConfig {
            ports: crate::config::PortsConfig {
                embeddings: Some(EmbeddingBinding::Mock { dim: 8, seed: 1 }),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn empty_input_runs() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_pipeline(&cfg(), &Ports::builtin("."), &[Manifest::empty(0)], dir.path(), &RunOptions::default())
            .unwrap();
        assert_eq!(s.kept, 0);
        assert!(s.report.rows.iter().all(|r| r.left_count().unwrap_or(0) == 0));
        let m = read_manifest(dir.path().join("final/batch-0.jsonl")).unwrap().into_strict().unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn needs_embedding_binding() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_pipeline(
            &FilterConfig::default(),
            &Ports::builtin("."),
            &[],
            dir.path(),
            &RunOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn single_stage_matches_its_slice_of_a_full_run() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            Record::new("a", "http://x.cn/", "城市 夜景 灯光 街道 建筑", "a.pgm", 0),
            Record::new("b", "http://x.cn/", "hello world this is english", "b.pgm", 0),
        ];
        let m = Manifest::new(0, recs).unwrap();
        let s = run_stage("source_select", &cfg(), &Ports::builtin("."), &[m.clone()], dir.path()).unwrap();
        assert_eq!((s.kept, s.rejected), (1, 1));
        assert_eq!(s.report.final_count(), 1);
        let back = read_manifest(dir.path().join("final/batch-0.jsonl")).unwrap().into_strict().unwrap();
        assert_eq!(back.records[0].id, "a");
        let err = run_stage("nope", &cfg(), &Ports::builtin("."), &[m], dir.path()).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn fingerprint_ignores_workers_only() {
        let m = vec![Manifest::empty(2)];
        let a = fingerprint(&cfg(), &m).unwrap();
        let mut c = cfg();
        c.workers = 8;
        assert_eq!(a, fingerprint(&c, &m).unwrap());
        c.shard_size = 3;
        assert_ne!(a, fingerprint(&c, &m).unwrap());
    }
}
