//! Data source selection: coarse language control, source-level safety,
//! domain blacklist and caption word-count constraints.

use crate::bindings::Ports;
use crate::config::FilterConfig;
use crate::domain::{host_from_url, Blacklist};
use crate::error::Result;
use crate::record::{Manifest, ReasonCode, Record};
use crate::stage::{run_records, with_workers, Outcome, RecordStage, StageAbort, StageOutput};
use crate::text::{check_word_length, detect_language, language_verdict, apply_ceiling};
use crate::verdict::FilterVerdict;

pub const SOURCE_STAGE: &str = "source_select";
const LABEL: &str = "Data Source Selection";

pub const SOURCE_SUBSTEPS: [&str; 4] = [
    "Language Control",
    "Content Safety",
    "Source Reliability",
    "Text Constraints",
];

/// Reject iff the record's domain, its URL host, or any parent of either is
/// blacklisted.
pub fn check_domain_blacklist(record: &Record, blacklist: &Blacklist) -> FilterVerdict {
    let hit = blacklist.matches_host(&record.domain)
        || host_from_url(&record.url).is_some_and(|h| blacklist.matches_host(&h));
    FilterVerdict::unless(hit, ReasonCode::Blacklisted)
}

pub struct SourceStage<'a> {
    cfg: &'a FilterConfig,
    ports: &'a Ports,
}

impl<'a> SourceStage<'a> {
    pub fn new(cfg: &'a FilterConfig, ports: &'a Ports) -> Self {
        Self { cfg, ports }
    }
}

impl RecordStage for SourceStage<'_> {
    fn name(&self) -> &'static str {
        SOURCE_STAGE
    }

    fn substeps(&self) -> Vec<(&'static str, &'static str)> {
        SOURCE_SUBSTEPS.iter().map(|s| (LABEL, *s)).collect()
    }

    fn process(&self, rec: &Record) -> Result<Outcome> {
        let (cfg, ports) = (self.cfg, self.ports);
        let id = rec.id.as_str();
        let port = |e: crate::error::PortFailure| e.for_record(id);
        let checks: [&dyn Fn() -> Result<FilterVerdict>; 4] = [
            &|| {
                let guess = detect_language(id, &rec.text, ports.language.as_ref()).map_err(port)?;
                Ok(language_verdict(&guess, cfg.source_language_floor, ReasonCode::NotChinese))
            },
            &|| {
                Ok(apply_ceiling(
                    ports.source_safety.score(id, &rec.text),
                    cfg.source_safety_ceiling,
                    cfg.strict_ports,
                    ReasonCode::SourceUnsafe,
                )
                .map_err(port)?
                .1)
            },
            &|| Ok(check_domain_blacklist(rec, &ports.blacklist)),
            &|| check_word_length(&rec.text, ports.tokenizer.as_ref(), cfg.min_words, cfg.max_words).map_err(port),
        ];
        for (i, check) in checks.iter().enumerate() {
            if let Some(reason) = check()?.reason {
                return Outcome::reject(SOURCE_STAGE, rec.clone(), i, reason);
            }
        }
        Outcome::keep(SOURCE_STAGE, rec.clone())
    }
}

pub fn run_source_stage(m: &Manifest, cfg: &FilterConfig, ports: &Ports) -> Result<(Manifest, StageOutput), StageAbort> {
    let stage = SourceStage::new(cfg, ports);
    let out = with_workers(cfg.workers, || run_records(&stage, &m.records))??;
    let survivors = Manifest::new(m.batch_id, out.kept.clone())?;
    Ok((survivors, out))
}
