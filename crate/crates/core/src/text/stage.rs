use crate::bindings::Ports;
use crate::config::FilterConfig;
use crate::error::{Error, Result};
use crate::record::{Manifest, ReasonCode, Record};
use crate::stage::{run_records, with_workers, Outcome, RecordStage, StageAbort, StageOutput};

use super::{
    check_stop_words, check_token_quality, check_word_length, detect_language, filter_by_entropy,
    language_verdict, score_safety, text_entropy, to_simplified, NoiseFilter,
};

pub const TEXT_STAGE: &str = "text_refine";
const LABEL: &str = "Text Refinement";

/// Text refinement substeps in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextStep {
    Language,
    Simplify,
    StripNoise,
    WordLength,
    StopWords,
    Nouns,
    Unk,
    Entropy,
    Safety,
}

impl TextStep {
    pub fn label(self) -> &'static str {
        match self {
            TextStep::Language => "Linguistic Structure (CN-Detect)",
            TextStep::Simplify => "Linguistic Structure (Font conversion)",
            TextStep::StripNoise => "Information Density (Emoji&special chars)",
            TextStep::WordLength => "Text Constraints (Word length)",
            TextStep::StopWords => "Text Quality (Stop words)",
            TextStep::Nouns => "Text Quality (Nouns)",
            TextStep::Unk => "Text Quality ([UNK])",
            TextStep::Entropy => "Information Density (Entropy)",
            TextStep::Safety => "Content Safety",
        }
    }

    pub fn steps(include_word_length: bool) -> Vec<TextStep> {
        use TextStep::*;
        let mut v = vec![Language, Simplify, StripNoise, WordLength, StopWords, Nouns, Unk, Entropy, Safety];
        if !include_word_length {
            v.retain(|s| *s != WordLength);
        }
        v
    }
}

/// The text refinement stage bound to a config and ports.
pub struct TextStage<'a> {
    cfg: &'a FilterConfig,
    ports: &'a Ports,
    steps: Vec<TextStep>,
    noise: NoiseFilter,
}

impl<'a> TextStage<'a> {
    pub fn new(cfg: &'a FilterConfig, ports: &'a Ports, include_word_length: bool) -> Self {
        Self {
            cfg,
            ports,
            steps: TextStep::steps(include_word_length),
            noise: NoiseFilter::default(),
        }
    }

    fn index(&self, step: TextStep) -> usize {
        self.steps.iter().position(|s| *s == step).expect("step is scheduled")
    }
}

impl RecordStage for TextStage<'_> {
    fn name(&self) -> &'static str {
        TEXT_STAGE
    }

    fn substeps(&self) -> Vec<(&'static str, &'static str)> {
        self.steps.iter().map(|s| (LABEL, s.label())).collect()
    }

    fn process(&self, input: &Record) -> Result<Outcome> {
        let (cfg, ports) = (self.cfg, self.ports);
        let mut rec = input.clone();
        let id = input.id.as_str();
        let port = |e: crate::error::PortFailure| e.for_record(id);
        for &step in &self.steps {
            let verdict = match step {
                TextStep::Language => {
                    let guess = detect_language(id, &rec.text, ports.language.as_ref()).map_err(port)?;
                    language_verdict(&guess, cfg.language_floor, ReasonCode::LowLanguageConfidence)
                }
                TextStep::Simplify => {
                    rec.text = to_simplified(&rec.text, ports.converter.as_ref());
                    continue;
                }
                TextStep::StripNoise => {
                    rec.text = self.noise.strip(&rec.text);
                    continue;
                }
                TextStep::WordLength => {
                    check_word_length(&rec.text, ports.tokenizer.as_ref(), cfg.min_words, cfg.max_words)
                        .map_err(port)?
                }
                TextStep::StopWords => {
                    let words = ports.tokenizer.segment_words(&rec.text).map_err(port)?;
                    check_stop_words(&words, &ports.stopwords, cfg.stop_word_ratio)
                }
                TextStep::Nouns => {
                    let v = check_token_quality(&rec.text, ports.tokenizer.as_ref(), cfg.max_unk).map_err(port)?;
                    if v.reason == Some(ReasonCode::UnkExcess) {
                        return Outcome::reject(TEXT_STAGE, rec, self.index(TextStep::Unk), ReasonCode::UnkExcess);
                    }
                    v
                }
                // evaluated together with Nouns
                TextStep::Unk => continue,
                TextStep::Entropy => {
                    let tokens: Vec<String> = ports
                        .tokenizer
                        .tokenize(&rec.text)
                        .map_err(port)?
                        .into_iter()
                        .map(|t| t.text)
                        .collect();
                    match text_entropy(&tokens, cfg.entropy_mode, ports.unigram.as_ref()) {
                        Ok(h) => filter_by_entropy(h, cfg.entropy_threshold()),
                        // nothing left to measure
                        Err(Error::Degenerate(_)) => filter_by_entropy(0.0, cfg.entropy_threshold()),
                        Err(e) => return Err(e),
                    }
                }
                TextStep::Safety => {
                    score_safety(
                        id,
                        &rec.text,
                        ports.text_safety.as_ref(),
                        cfg.text_safety_ceiling,
                        cfg.strict_ports,
                    )
                    .map_err(port)?
                    .1
                }
            };
            if let Some(reason) = verdict.reason {
                return Outcome::reject(TEXT_STAGE, rec, self.index(step), reason);
            }
        }
        Outcome::keep(TEXT_STAGE, rec)
    }
}

/// Runs text refinement over a manifest on `cfg.workers` threads. Returns
/// the survivors as a manifest plus the full stage output (rejections and
/// per-substep counts).
pub fn run_text_stage(
    m: &Manifest,
    cfg: &FilterConfig,
    ports: &Ports,
    include_word_length: bool,
) -> Result<(Manifest, StageOutput), StageAbort> {
    let stage = TextStage::new(cfg, ports, include_word_length);
    let out = with_workers(cfg.workers, || run_records(&stage, &m.records))??;
    let survivors = Manifest::new(m.batch_id, out.kept.clone())?;
    Ok((survivors, out))
}
