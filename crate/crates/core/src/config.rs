//! Filter configuration: every threshold with its default, port bindings and
//! execution settings. Loaded from TOML; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::EntropyMode;

/// Binding for a score-producing port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerPort {
    /// Constant 0.0 score: every record passes.
    #[default]
    Stub,
    Process { command: Vec<String> },
    ScoreFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LanguagePort {
    /// Han-character ratio.
    #[default]
    Builtin,
    Process { command: Vec<String> },
    ScoreFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TokenizerBinding {
    /// Bundled lexicon segmenter and tagger.
    #[default]
    Builtin,
    Process { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConverterBinding {
    /// Bundled Traditional→Simplified table.
    #[default]
    Builtin,
    Table { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecoderBinding {
    /// Binary PGM/PPM files; `image_ref` is a path relative to `root`.
    Pnm { root: PathBuf },
    Process { command: Vec<String> },
}

impl Default for DecoderBinding {
    fn default() -> Self {
        DecoderBinding::Pnm {
            root: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingBinding {
    File { path: PathBuf },
    Process { command: Vec<String>, dim: usize },
    /// Deterministic pseudo-random vectors, for tests and demos only.
    Mock { dim: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PortsConfig {
    pub language: LanguagePort,
    pub converter: ConverterBinding,
    pub tokenizer: TokenizerBinding,
    /// One stop-word per line; bundled list when absent.
    pub stopwords: Option<PathBuf>,
    /// `word<TAB>count`; required for corpus-mode entropy.
    pub unigram_table: Option<PathBuf>,
    pub source_safety: ScorerPort,
    pub text_safety: ScorerPort,
    pub low_textual: ScorerPort,
    pub image_safety: ScorerPort,
    pub perplexity: ScorerPort,
    pub decoder: DecoderBinding,
    pub embeddings: Option<EmbeddingBinding>,
}

/// Uniform histogram bin scheme over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl BinSpec {
    pub const fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self { lo, hi, bins }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub word_bins: BinSpec,
    pub resolution_bins: BinSpec,
    pub density_bins: BinSpec,
    pub perplexity_bins: BinSpec,
    pub perplexity_band: [f64; 2],
    pub similarity_bins: BinSpec,
    pub similarity_threshold: f64,
    pub kmeans_k: usize,
    pub kmeans_iters: usize,
    pub kmeans_seed: u64,
    pub top_n: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            word_bins: BinSpec::new(0.0, 100.0, 20),
            resolution_bins: BinSpec::new(0.0, 2000.0, 20),
            density_bins: BinSpec::new(0.0, 1.0, 10),
            perplexity_bins: BinSpec::new(0.0, 500.0, 20),
            perplexity_band: [50.0, 200.0],
            similarity_bins: BinSpec::new(-1.0, 1.0, 40),
            similarity_threshold: 0.15,
            kmeans_k: 100,
            kmeans_iters: 20,
            kmeans_seed: 0,
            top_n: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    // source selection
    /// Minimum language confidence for the coarse source-level language check.
    pub source_language_floor: f64,
    pub source_safety_ceiling: f64,
    pub blacklist: Vec<String>,
    /// One domain per line, merged with `blacklist`.
    pub blacklist_file: Option<PathBuf>,
    pub min_words: usize,
    pub max_words: usize,

    // text refinement
    pub language_floor: f64,
    pub stop_word_ratio: f64,
    pub max_unk: usize,
    pub entropy_mode: EntropyMode,
    pub intra_entropy_threshold: f64,
    pub corpus_entropy_threshold: f64,
    pub text_safety_ceiling: f64,

    // visual diversification
    pub min_aspect_ratio: f64,
    pub max_aspect_ratio: f64,
    pub min_edge: u32,
    pub min_pixel_std: f64,
    pub min_laplacian_var: f64,
    pub min_image_entropy: f64,
    pub low_textual_ceiling: f64,
    pub image_safety_ceiling: f64,

    // redundancy
    pub beta: f64,
    pub cross_batch_beta: f64,

    // cross-modal alignment
    pub l2_low: f64,
    pub l2_high: f64,
    pub reject_low_band: bool,

    // execution
    pub workers: usize,
    pub shard_size: usize,
    pub strict_ports: bool,

    pub ports: PortsConfig,
    pub analysis: AnalysisConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            source_language_floor: 0.0,
            source_safety_ceiling: 0.5,
            blacklist: Vec::new(),
            blacklist_file: None,
            min_words: 5,
            max_words: 60,
            language_floor: 0.5,
            stop_word_ratio: 0.9,
            max_unk: 5,
            entropy_mode: EntropyMode::Intra,
            intra_entropy_threshold: 6e-4,
            corpus_entropy_threshold: 6e-4,
            text_safety_ceiling: 0.5,
            min_aspect_ratio: 1.0 / 3.0,
            max_aspect_ratio: 3.0,
            min_edge: 100,
            min_pixel_std: 2.0,
            min_laplacian_var: 1000.0,
            min_image_entropy: 3.0,
            low_textual_ceiling: 0.5,
            image_safety_ceiling: 0.5,
            beta: 0.1,
            cross_batch_beta: 0.1,
            l2_low: 1.06,
            l2_high: 1.24,
            reject_low_band: true,
            workers: 1,
            shard_size: 1024,
            strict_ports: true,
            ports: PortsConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

/// One field-level configuration problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.key.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

impl FilterConfig {
    pub fn entropy_threshold(&self) -> f64 {
        match self.entropy_mode {
            EntropyMode::Intra => self.intra_entropy_threshold,
            EntropyMode::Corpus => self.corpus_entropy_threshold,
        }
    }

    /// Default configuration as TOML text.
    pub fn default_toml() -> String {
        toml::to_string(&FilterConfig::default()).expect("default config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parses TOML and validates ranges. Relative paths are left as written.
    pub fn parse(text: &str) -> std::result::Result<Self, Vec<ConfigIssue>> {
        let cfg: FilterConfig = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .and_then(|s| text.get(s))
                .map(|k| k.trim().trim_matches('"').to_string())
                .unwrap_or_default();
            vec![ConfigIssue {
                key,
                message: e.message().trim().to_string(),
            }]
        })?;
        let issues = cfg.validate();
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(issues)
        }
    }

    /// Checks every threshold against its legal range.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut check = |ok: bool, key: &str, message: String| {
            if !ok {
                issues.push(ConfigIssue {
                    key: key.to_string(),
                    message,
                });
            }
        };
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        for (key, v) in [
            ("source_language_floor", self.source_language_floor),
            ("source_safety_ceiling", self.source_safety_ceiling),
            ("language_floor", self.language_floor),
            ("text_safety_ceiling", self.text_safety_ceiling),
            ("low_textual_ceiling", self.low_textual_ceiling),
            ("image_safety_ceiling", self.image_safety_ceiling),
        ] {
            check(unit(v), key, format!("{v} must be in [0, 1]"));
        }
        check(
            self.min_words < self.max_words,
            "min_words",
            format!("min_words ({}) must be < max_words ({})", self.min_words, self.max_words),
        );
        check(
            self.stop_word_ratio > 0.0 && self.stop_word_ratio <= 1.0,
            "stop_word_ratio",
            format!("{} must be in (0, 1]", self.stop_word_ratio),
        );
        for (key, v) in [
            ("intra_entropy_threshold", self.intra_entropy_threshold),
            ("corpus_entropy_threshold", self.corpus_entropy_threshold),
            ("min_pixel_std", self.min_pixel_std),
            ("min_laplacian_var", self.min_laplacian_var),
        ] {
            check(v.is_finite() && v >= 0.0, key, format!("{v} must be finite and >= 0"));
        }
        check(
            (0.0..=8.0).contains(&self.min_image_entropy),
            "min_image_entropy",
            format!("{} must be in [0, 8]", self.min_image_entropy),
        );
        check(
            self.min_aspect_ratio > 0.0 && self.min_aspect_ratio < self.max_aspect_ratio,
            "min_aspect_ratio",
            format!(
                "need 0 < min_aspect_ratio ({}) < max_aspect_ratio ({})",
                self.min_aspect_ratio, self.max_aspect_ratio
            ),
        );
        check(
            self.max_aspect_ratio.is_finite(),
            "max_aspect_ratio",
            "must be finite".into(),
        );
        for (key, v) in [("beta", self.beta), ("cross_batch_beta", self.cross_batch_beta)] {
            check(v > 0.0 && v <= 1.0, key, format!("{v} must be in (0, 1]"));
        }
        check(
            self.l2_low >= 0.0 && self.l2_low < self.l2_high && self.l2_high <= 2.0,
            "l2_low",
            format!(
                "need 0 <= l2_low ({}) < l2_high ({}) <= 2",
                self.l2_low, self.l2_high
            ),
        );
        check(self.workers >= 1, "workers", "must be >= 1".into());
        check(self.shard_size >= 1, "shard_size", "must be >= 1".into());
        if self.entropy_mode == EntropyMode::Corpus && self.ports.unigram_table.is_none() {
            check(
                false,
                "ports.unigram_table",
                "corpus entropy mode needs a unigram table".into(),
            );
        }
        match &self.ports.embeddings {
            Some(EmbeddingBinding::Process { dim, .. } | EmbeddingBinding::Mock { dim, .. }) => {
                check(*dim >= 1, "ports.embeddings.dim", "must be >= 1".into())
            }
            _ => {}
        }
        let a = &self.analysis;
        for (key, b) in [
            ("analysis.word_bins", a.word_bins),
            ("analysis.resolution_bins", a.resolution_bins),
            ("analysis.density_bins", a.density_bins),
            ("analysis.perplexity_bins", a.perplexity_bins),
            ("analysis.similarity_bins", a.similarity_bins),
        ] {
            check(
                b.bins >= 1 && b.lo < b.hi,
                key,
                format!("need bins >= 1 and lo < hi (got {b:?})"),
            );
        }
        check(
            a.perplexity_band[0] < a.perplexity_band[1],
            "analysis.perplexity_band",
            "lower bound must be below upper bound".into(),
        );
        check(a.kmeans_k >= 1, "analysis.kmeans_k", "must be >= 1".into());
        issues
    }

    /// Makes relative port paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.blacklist_file {
            fix(p);
        }
        let ports = &mut self.ports;
        for p in [&mut ports.stopwords, &mut ports.unigram_table].into_iter().flatten() {
            fix(p);
        }
        if let LanguagePort::ScoreFile { path } = &mut ports.language {
            fix(path);
        }
        if let ConverterBinding::Table { path } = &mut ports.converter {
            fix(path);
        }
        for s in [
            &mut ports.source_safety,
            &mut ports.text_safety,
            &mut ports.low_textual,
            &mut ports.image_safety,
            &mut ports.perplexity,
        ] {
            if let ScorerPort::ScoreFile { path } = s {
                fix(path);
            }
        }
        if let DecoderBinding::Pnm { root } = &mut ports.decoder {
            fix(root);
        }
        if let Some(EmbeddingBinding::File { path }) = &mut ports.embeddings {
            fix(path);
        }
    }

    /// Blacklisted domains from `blacklist` and `blacklist_file`.
    pub fn blacklist_domains(&self) -> Result<Vec<String>> {
        let mut out = self.blacklist.clone();
        if let Some(path) = &self.blacklist_file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            out.extend(
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(String::from),
            );
        }
        Ok(out)
    }
}

/// Reads, validates and fully defaults a config file. Relative paths inside
/// it are resolved against the file's directory.
pub fn validate_config(path: impl AsRef<Path>) -> std::result::Result<FilterConfig, Vec<ConfigIssue>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        vec![ConfigIssue {
            key: String::new(),
            message: format!("cannot read {}: {e}", path.display()),
        }]
    })?;
    let mut cfg = FilterConfig::parse(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
