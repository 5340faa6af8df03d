//! Caption filters: language identification, script normalization, noise
//! stripping, length, stop-word share, token quality, entropy and safety.

mod builtin;
mod process;
mod stage;

pub use builtin::{is_han, CjkRatioDetector, LexiconTokenizer, StopWords, TableConverter, UnigramTable};
pub use process::{LanguageFile, ProcessLanguageDetector, ProcessTokenizer};
pub use stage::{run_text_stage, TextStage, TextStep};

use crate::error::{Error, PortFailure, Result};
use crate::record::ReasonCode;
use crate::verdict::{FilterVerdict, TextVerdict};

pub const CHINESE_TAG: &str = "zh";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub unknown: bool,
}

/// Tokenizer, word segmenter and part-of-speech tagger. Implementations
/// must be deterministic.
pub trait TokenizerPort: Send + Sync {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>, PortFailure>;
    fn segment_words(&self, text: &str) -> Result<Vec<String>, PortFailure>;
    fn pos_tags(&self, text: &str) -> Result<Vec<(String, String)>, PortFailure>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageGuess {
    pub tag: String,
    pub confidence: f64,
}

impl LanguageGuess {
    pub fn is_chinese(&self) -> bool {
        self.tag == CHINESE_TAG || self.tag == "zho" || self.tag.starts_with("zh-")
    }
}

pub trait LanguageDetector: Send + Sync {
    fn detect(&self, id: &str, text: &str) -> Result<LanguageGuess, PortFailure>;
}

/// Script normalization (Traditional → Simplified). Must be idempotent and
/// leave codepoints it does not know untouched.
pub trait ScriptConverter: Send + Sync {
    fn convert(&self, text: &str) -> String;
}

pub fn check_word_length(
    text: &str,
    segmenter: &dyn TokenizerPort,
    min: usize,
    max: usize,
) -> Result<TextVerdict, PortFailure> {
    let n = segmenter.segment_words(text)?.len();
    Ok(FilterVerdict::unless(!(min..=max).contains(&n), ReasonCode::WordLength)
        .with("word_count", n as f64))
}

pub fn detect_language(
    id: &str,
    text: &str,
    detector: &dyn LanguageDetector,
) -> Result<LanguageGuess, PortFailure> {
    let guess = detector.detect(id, text)?;
    if !(0.0..=1.0).contains(&guess.confidence) {
        return Err(PortFailure::new(
            "language",
            format!("confidence {} outside [0, 1]", guess.confidence),
        ));
    }
    Ok(guess)
}

/// Keep iff the guess is Chinese with confidence at or above `floor`.
pub fn language_verdict(guess: &LanguageGuess, floor: f64, reason: ReasonCode) -> TextVerdict {
    FilterVerdict::unless(!(guess.is_chinese() && guess.confidence >= floor), reason)
        .with("language_confidence", guess.confidence)
}

pub fn to_simplified(text: &str, converter: &dyn ScriptConverter) -> String {
    converter.convert(text)
}

/// Rejects captions without a noun (`no_noun`, checked first) or with more
/// than `max_unk` unknown tokens (`unk_excess`). Both metrics are recorded.
pub fn check_token_quality(
    text: &str,
    tokenizer: &dyn TokenizerPort,
    max_unk: usize,
) -> Result<TextVerdict, PortFailure> {
    let noun_present = tokenizer
        .pos_tags(text)?
        .iter()
        .any(|(_, tag)| is_noun_tag(tag));
    let unk = tokenizer.tokenize(text)?.iter().filter(|t| t.unknown).count();
    let verdict = if !noun_present {
        FilterVerdict::reject(ReasonCode::NoNoun)
    } else if unk > max_unk {
        FilterVerdict::reject(ReasonCode::UnkExcess)
    } else {
        FilterVerdict::keep()
    };
    Ok(verdict
        .with("noun_present", if noun_present { 1.0 } else { 0.0 })
        .with("unk_count", unk as f64))
}

/// Noun tags in the ICTCLAS/jieba tag set (`n`, `nr`, `ns`, `nt`, `nz`, ...).
pub fn is_noun_tag(tag: &str) -> bool {
    tag.starts_with('n')
}

/// Nouns, verbs and adjectives.
pub fn is_content_tag(tag: &str) -> bool {
    tag.starts_with('n') || tag.starts_with('v') || tag.starts_with('a')
}

/// Rejects when at least `max_ratio` of the words are stop-words. Empty
/// word lists are kept (length checks handle them).
pub fn check_stop_words<S: AsRef<str>>(words: &[S], stop: &StopWords, max_ratio: f64) -> TextVerdict {
    let n = words.len();
    let hits = words.iter().filter(|w| stop.contains(w.as_ref())).count();
    let ratio = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    FilterVerdict::unless(n > 0 && ratio >= max_ratio, ReasonCode::StopWords)
        .with("stop_word_ratio", ratio)
}

/// Characters removed by [`strip_noise`]: control characters, emoji and
/// pictographic symbol blocks, and ASCII/fullwidth symbols outside the
/// punctuation whitelist.
#[derive(Debug, Clone)]
pub struct NoiseFilter {
    pub punctuation: Vec<char>,
}

pub const DEFAULT_PUNCTUATION: &str = "，。！？、；：“”‘’（）《》【】…—·,.!?;:'\"()-";

impl Default for NoiseFilter {
    fn default() -> Self {
        Self {
            punctuation: DEFAULT_PUNCTUATION.chars().collect(),
        }
    }
}

fn in_symbol_block(c: char) -> bool {
    matches!(c as u32,
        0x200B..=0x200F       // zero-width and direction marks
        | 0x2190..=0x21FF     // arrows
        | 0x2300..=0x23FF     // misc technical
        | 0x2460..=0x24FF     // enclosed alphanumerics
        | 0x25A0..=0x27BF     // shapes, misc symbols, dingbats
        | 0x2900..=0x297F
        | 0x2B00..=0x2BFF
        | 0x3030 | 0x303D | 0x3297 | 0x3299
        | 0xE000..=0xF8FF     // private use
        | 0xFE00..=0xFE0F     // variation selectors
        | 0xFFF0..=0xFFFF
        | 0x1F000..=0x1FAFF   // emoji and pictographs
        | 0xE0000..=0xE007F   // tags
        | 0xF0000..=0x10FFFF)
}

impl NoiseFilter {
    pub fn is_noise(&self, c: char) -> bool {
        if c == ' ' || c.is_alphanumeric() {
            return false;
        }
        if c.is_control() || in_symbol_block(c) {
            return true;
        }
        let symbolish = c.is_ascii_punctuation() || matches!(c as u32, 0xFF01..=0xFF0F | 0xFF1A..=0xFF20 | 0xFF3B..=0xFF40 | 0xFF5B..=0xFF65);
        symbolish && !self.punctuation.contains(&c)
    }

    pub fn strip(&self, text: &str) -> String {
        text.chars().filter(|&c| !self.is_noise(c)).collect()
    }
}

pub fn strip_noise(text: &str) -> String {
    NoiseFilter::default().strip(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// Token probabilities estimated from the caption itself.
    #[default]
    Intra,
    /// Token probabilities looked up in a corpus unigram table.
    Corpus,
}

/// Shannon entropy in bits over caption tokens.
///
/// Intra mode uses in-caption frequencies, giving a value in `[0, log2 L]`.
/// Corpus mode sums `-P(c) log2 P(c)` over every token occurrence with
/// `P` from `table`.
pub fn text_entropy<S: AsRef<str>>(
    tokens: &[S],
    mode: EntropyMode,
    table: Option<&UnigramTable>,
) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::Degenerate("entropy of an empty token list".into()));
    }
    match mode {
        EntropyMode::Intra => {
            let mut counts: std::collections::HashMap<&str, usize> = Default::default();
            for t in tokens {
                *counts.entry(t.as_ref()).or_default() += 1;
            }
            let l = tokens.len() as f64;
            // sort so the float sum does not depend on hash order
            let mut cs: Vec<usize> = counts.into_values().collect();
            cs.sort_unstable();
            let h: f64 = cs
                .into_iter()
                .map(|c| {
                    let p = c as f64 / l;
                    -p * p.log2()
                })
                .sum();
            Ok(h.max(0.0))
        }
        EntropyMode::Corpus => {
            let table = table.ok_or_else(|| {
                Error::Config("corpus-mode entropy needs a unigram table".into())
            })?;
            Ok(tokens
                .iter()
                .map(|t| {
                    let p = table.probability(t.as_ref());
                    -p * p.log2()
                })
                .sum())
        }
    }
}

/// Rejects iff `h < threshold`.
pub fn filter_by_entropy(h: f64, threshold: f64) -> TextVerdict {
    FilterVerdict::unless(h < threshold, ReasonCode::LowEntropy).with("entropy", h)
}

/// Applies a safety ceiling: reject iff the score is strictly above it.
///
/// Unscored records are kept with `unscored = 1`. Port failures are
/// returned in strict mode and treated as unscored otherwise.
pub fn apply_ceiling(
    score: Result<Option<f64>, PortFailure>,
    ceiling: f64,
    strict: bool,
    reason: ReasonCode,
) -> Result<(Option<f64>, FilterVerdict), PortFailure> {
    let score = match score {
        Ok(s) => s,
        Err(e) if strict => return Err(e),
        Err(e) => {
            log::warn!("{e}; treating record as unscored");
            None
        }
    };
    Ok(match score {
        Some(s) => (
            Some(s),
            FilterVerdict::unless(s > ceiling, reason).with("safety_score", s),
        ),
        None => (None, FilterVerdict::keep().with("unscored", 1.0)),
    })
}

pub fn score_safety(
    id: &str,
    text: &str,
    scorer: &dyn crate::ports::TextScorer,
    ceiling: f64,
    strict: bool,
) -> Result<(Option<f64>, TextVerdict), PortFailure> {
    apply_ceiling(scorer.score(id, text), ceiling, strict, ReasonCode::TextUnsafe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ports::ConstantScorer;

    /// Tokenizer fixture driven by whitespace-separated `word/TAG` or
    /// `word/TAG/unk` items.
    struct Fixture;

    impl Fixture {
        fn items(text: &str) -> Vec<(String, String, bool)> {
            text.split_whitespace()
                .map(|item| {
                    let mut parts = item.split('/');
                    let w = parts.next().unwrap().to_string();
                    let t = parts.next().unwrap_or("n").to_string();
                    (w, t, parts.next() == Some("unk"))
                })
                .collect()
        }
    }

    impl TokenizerPort for Fixture {
        fn tokenize(&self, text: &str) -> Result<Vec<Token>, PortFailure> {
            Ok(Self::items(text)
                .into_iter()
                .map(|(w, _, unknown)| Token { text: w, unknown })
                .collect())
        }
        fn segment_words(&self, text: &str) -> Result<Vec<String>, PortFailure> {
            Ok(Self::items(text).into_iter().map(|(w, _, _)| w).collect())
        }
        fn pos_tags(&self, text: &str) -> Result<Vec<(String, String)>, PortFailure> {
            Ok(Self::items(text).into_iter().map(|(w, t, _)| (w, t)).collect())
        }
    }

    struct Broken;
    impl TokenizerPort for Broken {
        fn tokenize(&self, _: &str) -> Result<Vec<Token>, PortFailure> {
            Err(PortFailure::new("tokenizer", "down"))
        }
        fn segment_words(&self, _: &str) -> Result<Vec<String>, PortFailure> {
            Err(PortFailure::new("tokenizer", "down"))
        }
        fn pos_tags(&self, _: &str) -> Result<Vec<(String, String)>, PortFailure> {
            Err(PortFailure::new("tokenizer", "down"))
        }
    }

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn word_length_bounds_are_inclusive() {
        let v = |n| check_word_length(&words(n), &Fixture, 5, 60).unwrap();
        assert_eq!(v(4).reason, Some(ReasonCode::WordLength));
        assert!(v(5).is_keep());
        assert!(v(60).is_keep());
        assert_eq!(v(61).reason, Some(ReasonCode::WordLength));
        assert_eq!(v(5).metric("word_count"), Some(5.0));
    }

    #[test]
    fn sixty_one_words_with_builtin_segmenter() {
        // 61 distinct single-character Han words separated by spaces
        let text: String = (0..61)
            .map(|i| char::from_u32(0x4E00 + 2 * i).unwrap().to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let tok = LexiconTokenizer::bundled();
        assert_eq!(tok.segment_words(&text).unwrap().len(), 61);
        let v = check_word_length(&text, tok, 5, 60).unwrap();
        assert_eq!(v.reason, Some(ReasonCode::WordLength));
    }

    #[test]
    fn segmenter_failure_carries_record_id() {
        let err = check_word_length("x", &Broken, 5, 60).unwrap_err().for_record("rec-7");
        assert!(err.to_string().contains("rec-7"));
    }

    #[test]
    fn fallback_language_detection() {
        let d = CjkRatioDetector;
        let en = detect_language("a", "A plain English sentence", &d).unwrap();
        assert!(!language_verdict(&en, 0.5, ReasonCode::LowLanguageConfidence).is_keep());
        let zh = detect_language("b", "这是一句中文", &d).unwrap();
        assert!(language_verdict(&zh, 0.5, ReasonCode::LowLanguageConfidence).is_keep());
        // 4 Latin letters, 4 Han characters
        let mixed = detect_language("c", "abcd 你好世界", &d).unwrap();
        assert_eq!(mixed.confidence, 0.5);
        assert!(language_verdict(&mixed, 0.5, ReasonCode::LowLanguageConfidence).is_keep());
    }

    #[test]
    fn simplified_conversion() {
        let conv = TableConverter::bundled();
        assert_eq!(to_simplified("简体中文", conv), "简体中文");
        assert_eq!(to_simplified("0123456789", conv), "0123456789");
        assert_eq!(to_simplified("圖書館", conv), "图书馆");
    }

    #[test]
    fn token_quality_rules() {
        let v = check_token_quality("跑/v 了/ul 吃/v", &Fixture, 5).unwrap();
        assert_eq!(v.reason, Some(ReasonCode::NoNoun));
        assert_eq!(v.metric("noun_present"), Some(0.0));

        let five = "猫/n a/x/unk b/x/unk c/x/unk d/x/unk e/x/unk";
        let v = check_token_quality(five, &Fixture, 5).unwrap();
        assert!(v.is_keep());
        assert_eq!(v.metric("unk_count"), Some(5.0));

        let six = format!("{five} f/x/unk");
        let v = check_token_quality(&six, &Fixture, 5).unwrap();
        assert_eq!(v.reason, Some(ReasonCode::UnkExcess));
    }

    #[test]
    fn noise_stripping() {
        assert_eq!(strip_noise("纯文本 abc 123"), "纯文本 abc 123");
        assert_eq!(strip_noise("你好😀"), "你好");
        let s = "a😀b\u{1}c🎉d\u{7f}e🚀";
        let before = s.chars().count();
        assert_eq!(strip_noise(s).chars().count(), before - 5);
        assert_eq!(strip_noise("价格#$%：100元，好！"), "价格：100元，好！");
    }

    #[test]
    fn entropy_examples() {
        let h = |t: &[&str]| text_entropy(t, EntropyMode::Intra, None).unwrap();
        assert_eq!(h(&["猫", "猫", "猫", "猫"]), 0.0);
        assert!((h(&["a", "b", "c", "d"]) - 2.0).abs() < 1e-12);
        assert!((h(&["a", "a", "b", "c"]) - 1.5).abs() < 1e-12);
        assert!(matches!(
            text_entropy::<&str>(&[], EntropyMode::Intra, None),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            text_entropy(&["a"], EntropyMode::Corpus, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn corpus_entropy_sums_over_occurrences() {
        let table = UnigramTable::from_counts([("a", 1u64)]);
        // P(a) = 2/3, P(other) = 1/3
        let pa: f64 = 2.0 / 3.0;
        let pz: f64 = 1.0 / 3.0;
        let expected = 2.0 * (-pa * pa.log2()) + (-pz * pz.log2());
        let got = text_entropy(&["a", "a", "z"], EntropyMode::Corpus, Some(&table)).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn entropy_threshold_is_strict() {
        assert!(!filter_by_entropy(0.0, 6e-4).is_keep());
        assert!(filter_by_entropy(6e-4, 6e-4).is_keep());
        assert!(filter_by_entropy(1.5, 6e-4).is_keep());
    }

    #[test]
    fn safety_ceiling() {
        let stub = ConstantScorer::default();
        let (s, v) = score_safety("a", "x", &stub, 0.5, true).unwrap();
        assert_eq!(s, Some(0.0));
        assert!(v.is_keep());
        assert!(!score_safety("a", "x", &ConstantScorer(0.9), 0.5, true).unwrap().1.is_keep());
        assert!(score_safety("a", "x", &ConstantScorer(0.5), 0.5, true).unwrap().1.is_keep());
    }

    #[test]
    fn safety_port_failure_modes() {
        struct Down;
        impl crate::ports::TextScorer for Down {
            fn score(&self, _: &str, _: &str) -> Result<Option<f64>, PortFailure> {
                Err(PortFailure::new("text_safety", "unreachable"))
            }
        }
        assert!(score_safety("a", "x", &Down, 0.5, true).is_err());
        let (s, v) = score_safety("a", "x", &Down, 0.5, false).unwrap();
        assert_eq!(s, None);
        assert!(v.is_keep());
        assert_eq!(v.metric("unscored"), Some(1.0));
    }

    #[test]
    fn stop_word_share() {
        let stop = StopWords::parse("的\n了\n是\n");
        assert!(!check_stop_words(&["的", "了", "是", "的", "了"], &stop, 0.9).is_keep());
        assert!(check_stop_words(&["的", "了", "是", "猫", "狗"], &stop, 0.9).is_keep());
        assert!(check_stop_words::<&str>(&[], &stop, 0.9).is_keep());
    }
}
