//! Instantiates the pluggable components named in a [`FilterConfig`].

use crate::config::{
    ConverterBinding, DecoderBinding, FilterConfig, LanguagePort, ScorerPort, TokenizerBinding,
};
use crate::domain::Blacklist;
use crate::error::Result;
use crate::image::{ImageLoader, PnmLoader, ProcessImageLoader};
use crate::ports::{
    ConstantScorer, ImageScorer, ProcessClient, ProcessImageScorer, ProcessTextScorer, ScoreFile,
    TextScorer,
};
use crate::text::{
    CjkRatioDetector, LanguageDetector, LanguageFile, LexiconTokenizer, ProcessLanguageDetector,
    ProcessTokenizer, ScriptConverter, StopWords, TableConverter, TokenizerPort, UnigramTable,
};

/// Every bound port plus the data tables the filters need.
pub struct Ports {
    pub language: Box<dyn LanguageDetector>,
    pub converter: Box<dyn ScriptConverter>,
    pub tokenizer: Box<dyn TokenizerPort>,
    pub stopwords: StopWords,
    pub unigram: Option<UnigramTable>,
    pub blacklist: Blacklist,
    pub source_safety: Box<dyn TextScorer>,
    pub text_safety: Box<dyn TextScorer>,
    pub low_textual: Box<dyn ImageScorer>,
    pub image_safety: Box<dyn ImageScorer>,
    pub perplexity: Box<dyn TextScorer>,
    pub decoder: Box<dyn ImageLoader>,
}

impl Ports {
    /// Built-in components, stub scorers and a PNM decoder rooted at `image_root`.
    pub fn builtin(image_root: impl Into<std::path::PathBuf>) -> Self {
        Self {
            language: Box::new(CjkRatioDetector),
            converter: Box::new(TableConverter::bundled()),
            tokenizer: Box::new(LexiconTokenizer::bundled()),
            stopwords: StopWords::bundled(),
            unigram: None,
            blacklist: Blacklist::default(),
            source_safety: Box::new(ConstantScorer::default()),
            text_safety: Box::new(ConstantScorer::default()),
            low_textual: Box::new(ConstantScorer::default()),
            image_safety: Box::new(ConstantScorer::default()),
            perplexity: Box::new(ConstantScorer::default()),
            decoder: Box::new(PnmLoader::new(image_root)),
        }
    }

    pub fn from_config(cfg: &FilterConfig) -> Result<Self> {
        let p = &cfg.ports;
        let language: Box<dyn LanguageDetector> = match &p.language {
            LanguagePort::Builtin => Box::new(CjkRatioDetector),
            LanguagePort::Process { command } => {
                Box::new(ProcessLanguageDetector(ProcessClient::spawn("language", command)?))
            }
            LanguagePort::ScoreFile { path } => Box::new(LanguageFile::load(path)?),
        };
        let converter: Box<dyn ScriptConverter> = match &p.converter {
            ConverterBinding::Builtin => Box::new(TableConverter::bundled()),
            ConverterBinding::Table { path } => Box::new(TableConverter::load(path)?),
        };
        let tokenizer: Box<dyn TokenizerPort> = match &p.tokenizer {
            TokenizerBinding::Builtin => Box::new(LexiconTokenizer::bundled()),
            TokenizerBinding::Process { command } => {
                Box::new(ProcessTokenizer(ProcessClient::spawn("tokenizer", command)?))
            }
        };
        let stopwords = match &p.stopwords {
            Some(path) => StopWords::load(path)?,
            None => StopWords::bundled(),
        };
        let unigram = p.unigram_table.as_ref().map(UnigramTable::load).transpose()?;
        let decoder: Box<dyn ImageLoader> = match &p.decoder {
            DecoderBinding::Pnm { root } => Box::new(PnmLoader::new(root)),
            DecoderBinding::Process { command } => {
                Box::new(ProcessImageLoader(ProcessClient::spawn("decoder", command)?))
            }
        };
        Ok(Self {
            language,
            converter,
            tokenizer,
            stopwords,
            unigram,
            blacklist: Blacklist::new(cfg.blacklist_domains()?),
            source_safety: text_scorer("source_safety", &p.source_safety)?,
            text_safety: text_scorer("text_safety", &p.text_safety)?,
            low_textual: image_scorer("low_textual", &p.low_textual)?,
            image_safety: image_scorer("image_safety", &p.image_safety)?,
            perplexity: text_scorer("perplexity", &p.perplexity)?,
            decoder,
        })
    }
}

fn text_scorer(port: &'static str, b: &ScorerPort) -> Result<Box<dyn TextScorer>> {
    Ok(match b {
        ScorerPort::Stub => Box::new(ConstantScorer::default()),
        ScorerPort::ScoreFile { path } => Box::new(ScoreFile::load(path)?),
        ScorerPort::Process { command } => Box::new(ProcessTextScorer(ProcessClient::spawn(port, command)?)),
    })
}

fn image_scorer(port: &'static str, b: &ScorerPort) -> Result<Box<dyn ImageScorer>> {
    Ok(match b {
        ScorerPort::Stub => Box::new(ConstantScorer::default()),
        ScorerPort::ScoreFile { path } => Box::new(ScoreFile::load(path)?),
        ScorerPort::Process { command } => Box::new(ProcessImageScorer(ProcessClient::spawn(port, command)?)),
    })
}
