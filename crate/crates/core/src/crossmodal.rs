//! Image-text alignment banding on paired embeddings.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{dot, l2_distance, EmbeddingStore, Modality};
use crate::error::{Error, Result};
use crate::record::{ReasonCode, Record, Verdict};

pub const CROSSMODAL_STAGE: &str = "crossmodal";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandVerdict {
    Keep,
    /// Distance below the band: near-identical pair.
    RejectLow,
    /// Distance above the band: weakly related pair.
    RejectHigh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub record_id: String,
    pub l2: f64,
    pub cosine: f64,
    pub verdict: Option<BandVerdict>,
}

/// L2 distance and cosine similarity of a unit image/text pair.
pub fn score_alignment(record_id: &str, img: &[f64], txt: &[f64]) -> Result<AlignmentScore> {
    Ok(AlignmentScore {
        record_id: record_id.to_string(),
        l2: l2_distance(img, txt)?,
        cosine: dot(img, txt)?,
        verdict: None,
    })
}

/// Band bounds on L2 distance, both closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub low: f64,
    pub high: f64,
    /// When false, pairs below `low` are kept.
    pub reject_low: bool,
}

impl Default for Band {
    fn default() -> Self {
        Self {
            low: 1.06,
            high: 1.24,
            reject_low: true,
        }
    }
}

pub fn band_filter(mut s: AlignmentScore, band: Band) -> AlignmentScore {
    s.verdict = Some(if s.l2 > band.high {
        BandVerdict::RejectHigh
    } else if s.l2 < band.low && band.reject_low {
        BandVerdict::RejectLow
    } else {
        BandVerdict::Keep
    });
    s
}

#[derive(Debug, Clone, Default)]
pub struct CrossmodalOutput {
    pub kept: Vec<Record>,
    pub rejected: Vec<Record>,
    pub rejected_low: u64,
    pub rejected_high: u64,
    /// One score per input record, input order.
    pub scores: Vec<AlignmentScore>,
}

/// Keeps records whose image/text distance lies inside the band.
pub fn run_crossmodal_stage(records: Vec<Record>, store: &EmbeddingStore, band: Band) -> Result<CrossmodalOutput> {
    let mut missing = store.missing(records.iter().map(|r| r.id.as_str()), Modality::Image);
    for id in store.missing(records.iter().map(|r| r.id.as_str()), Modality::Text) {
        if !missing.contains(&id) {
            missing.push(id);
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    let scores: Vec<AlignmentScore> = records
        .par_iter()
        .map(|r| {
            let s = score_alignment(
                &r.id,
                store.require(&r.id, Modality::Image)?,
                store.require(&r.id, Modality::Text)?,
            )?;
            Ok(band_filter(s, band))
        })
        .collect::<Result<_>>()?;
    let mut out = CrossmodalOutput::default();
    for (mut r, s) in records.into_iter().zip(&scores) {
        match s.verdict {
            Some(BandVerdict::Keep) => {
                r.push_verdict(Verdict::keep(CROSSMODAL_STAGE))?;
                out.kept.push(r);
            }
            Some(BandVerdict::RejectLow) => {
                out.rejected_low += 1;
                r.push_verdict(Verdict::reject(CROSSMODAL_STAGE, ReasonCode::AlignmentLow))?;
                out.rejected.push(r);
            }
            _ => {
                out.rejected_high += 1;
                r.push_verdict(Verdict::reject(CROSSMODAL_STAGE, ReasonCode::AlignmentHigh))?;
                out.rejected.push(r);
            }
        }
    }
    out.scores = scores;
    Ok(out)
}

#[derive(Serialize)]
struct AuditRow<'a> {
    record_id: &'a str,
    l2: f64,
    cosine: f64,
    verdict: &'a str,
}

pub fn write_alignment_audit(scores: &[AlignmentScore], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for s in scores {
        let verdict = match s.verdict {
            Some(BandVerdict::Keep) => "keep",
            Some(BandVerdict::RejectLow) => "reject_low",
            Some(BandVerdict::RejectHigh) => "reject_high",
            None => "",
        };
        wr.serialize(AuditRow {
            record_id: &s.record_id,
            l2: s.l2,
            cosine: s.cosine,
            verdict,
        })
        .map_err(|e| Error::Format(format!("alignment audit: {e}")))?;
    }
    wr.flush().map_err(|e| Error::io("alignment audit", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::cosine_to_l2;

    fn pair_at_cos(c: f64) -> ([f64; 2], [f64; 2]) {
        ([1.0, 0.0], [c, (1.0 - c * c).sqrt()])
    }

    #[test]
    fn score_examples() {
        let s = score_alignment("a", &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!((s.l2, s.cosine), (0.0, 1.0));
        let s = score_alignment("a", &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((s.l2 - 2f64.sqrt()).abs() < 1e-12);
        let (a, b) = pair_at_cos(0.4382);
        let s = score_alignment("a", &a, &b).unwrap();
        assert!((s.l2 - 1.06).abs() < 1e-4);
        assert!((s.l2 * s.l2 - (2.0 - 2.0 * s.cosine)).abs() < 1e-9);
    }

    #[test]
    fn band_examples() {
        let at = |l2| band_filter(
            AlignmentScore {
                record_id: "a".into(),
                l2,
                cosine: 1.0 - l2 * l2 / 2.0,
                verdict: None,
            },
            Band::default(),
        )
        .verdict;
        assert_eq!(at(1.06), Some(BandVerdict::Keep));
        assert_eq!(at(1.24), Some(BandVerdict::Keep));
        assert_eq!(at(1.25), Some(BandVerdict::RejectHigh));
        assert_eq!(at(0.0), Some(BandVerdict::RejectLow));
        let open = Band {
            reject_low: false,
            ..Band::default()
        };
        let s = AlignmentScore {
            record_id: "a".into(),
            l2: 0.5,
            cosine: 0.875,
            verdict: None,
        };
        assert_eq!(band_filter(s, open).verdict, Some(BandVerdict::Keep));
    }

    #[test]
    fn stage_fixture() {
        let mut store = EmbeddingStore::new(2);
        let mut recs = Vec::new();
        for (id, l2) in [("a", 0.5), ("b", 1.10), ("c", 1.30)] {
            let c = 1.0 - l2 * l2 / 2.0;
            let (i, t) = pair_at_cos(c);
            assert!((cosine_to_l2(c) - l2).abs() < 1e-12);
            store.insert(id, Modality::Image, &i.map(|x| x as f32)).unwrap();
            store.insert(id, Modality::Text, &t.map(|x| x as f32)).unwrap();
            recs.push(Record::new(id, "u", "t", "i", 0));
        }
        let out = run_crossmodal_stage(recs, &store, Band::default()).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!((out.rejected_low, out.rejected_high), (1, 1));
        let empty = run_crossmodal_stage(Vec::new(), &store, Band::default()).unwrap();
        assert!(empty.kept.is_empty());
    }
}
