//! Hermetic built-in text components: lexicon segmenter/tagger, CJK-ratio
//! language detector, Traditional→Simplified table, stop-word list.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, PortFailure, Result};

use super::{LanguageDetector, LanguageGuess, ScriptConverter, Token, TokenizerPort, CHINESE_TAG};

const LEXICON: &str = include_str!("../../data/lexicon.txt");
const TRAD_SIMP: &str = include_str!("../../data/trad_simp.txt");
const STOPWORDS: &str = include_str!("../../data/stopwords.txt");

const MAX_WORD_CHARS: usize = 4;

/// Han ideographs, including the supplementary-plane extensions.
pub fn is_han(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x30000..=0x3134F)
}

/// Codepoints the built-in tokenizer has vocabulary for; anything else
/// becomes an unknown token.
fn in_vocabulary(c: char) -> bool {
    matches!(c as u32,
        0x20..=0x7E
        | 0xA0..=0xFF
        | 0x2000..=0x206F
        | 0x3000..=0x303F
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xFF00..=0xFFEF)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Han,
    Alnum,
    Space,
    Other,
}

fn classify(c: char) -> CharClass {
    if is_han(c) {
        CharClass::Han
    } else if c.is_alphanumeric() {
        CharClass::Alnum
    } else if c.is_whitespace() {
        CharClass::Space
    } else {
        CharClass::Other
    }
}

/// Greedy longest-match segmenter over a bundled word/POS lexicon with
/// per-character fallback. Han characters outside the lexicon are tagged as
/// nouns; Latin runs are tagged `eng`, digit runs `m`.
#[derive(Debug, Clone)]
pub struct LexiconTokenizer {
    words: HashMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Piece {
    text: String,
    tag: String,
    word: bool,
}

impl LexiconTokenizer {
    pub fn bundled() -> &'static Self {
        static TOK: OnceLock<LexiconTokenizer> = OnceLock::new();
        TOK.get_or_init(|| Self::from_lexicon(LEXICON))
    }

    /// Parses `word<TAB>pos` lines.
    pub fn from_lexicon(text: &str) -> Self {
        let words = text
            .lines()
            .filter_map(|l| l.split_once('\t'))
            .map(|(w, t)| (w.to_string(), t.trim().to_string()))
            .collect();
        Self { words }
    }

    pub fn tag_of(&self, word: &str) -> Option<&str> {
        self.words.get(word).map(String::as_str)
    }

    fn pieces(&self, text: &str) -> Vec<Piece> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            match classify(chars[i]) {
                CharClass::Han => {
                    let mut j = i;
                    while j < chars.len() && classify(chars[j]) == CharClass::Han {
                        j += 1;
                    }
                    self.segment_han(&chars[i..j], &mut out);
                    i = j;
                }
                CharClass::Alnum => {
                    let mut j = i;
                    while j < chars.len() && classify(chars[j]) == CharClass::Alnum {
                        j += 1;
                    }
                    let run: String = chars[i..j].iter().collect();
                    let tag = if run.chars().all(|c| c.is_numeric()) { "m" } else { "eng" };
                    out.push(Piece {
                        text: run,
                        tag: tag.into(),
                        word: true,
                    });
                    i = j;
                }
                CharClass::Space => i += 1,
                CharClass::Other => {
                    out.push(Piece {
                        text: chars[i].to_string(),
                        tag: "x".into(),
                        word: false,
                    });
                    i += 1;
                }
            }
        }
        out
    }

    fn segment_han(&self, run: &[char], out: &mut Vec<Piece>) {
        let mut i = 0;
        while i < run.len() {
            let longest = (2..=MAX_WORD_CHARS.min(run.len() - i))
                .rev()
                .find_map(|len| {
                    let cand: String = run[i..i + len].iter().collect();
                    self.words.get(&cand).map(|tag| (len, cand, tag.clone()))
                });
            let (len, text, tag) = longest.unwrap_or_else(|| {
                let single = run[i].to_string();
                let tag = self.words.get(&single).cloned().unwrap_or_else(|| "n".into());
                (1, single, tag)
            });
            out.push(Piece {
                text,
                tag,
                word: true,
            });
            i += len;
        }
    }
}

impl TokenizerPort for LexiconTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>, PortFailure> {
        Ok(self
            .pieces(text)
            .into_iter()
            .map(|p| Token {
                unknown: !p.text.chars().all(in_vocabulary),
                text: p.text,
            })
            .collect())
    }

    fn segment_words(&self, text: &str) -> Result<Vec<String>, PortFailure> {
        Ok(self
            .pieces(text)
            .into_iter()
            .filter(|p| p.word)
            .map(|p| p.text)
            .collect())
    }

    fn pos_tags(&self, text: &str) -> Result<Vec<(String, String)>, PortFailure> {
        Ok(self
            .pieces(text)
            .into_iter()
            .filter(|p| p.word)
            .map(|p| (p.text, p.tag))
            .collect())
    }
}

impl TokenizerPort for &LexiconTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>, PortFailure> {
        (**self).tokenize(text)
    }
    fn segment_words(&self, text: &str) -> Result<Vec<String>, PortFailure> {
        (**self).segment_words(text)
    }
    fn pos_tags(&self, text: &str) -> Result<Vec<(String, String)>, PortFailure> {
        (**self).pos_tags(text)
    }
}

/// Fallback language detector: the share of Han characters among
/// alphanumeric characters.
///
/// Text with any Han character is tagged Chinese with that share as
/// confidence; text without any is tagged `und` with confidence 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct CjkRatioDetector;

impl CjkRatioDetector {
    pub fn ratio(text: &str) -> f64 {
        let (mut han, mut letters) = (0usize, 0usize);
        for c in text.chars() {
            if c.is_alphanumeric() {
                letters += 1;
                if is_han(c) {
                    han += 1;
                }
            }
        }
        if letters == 0 {
            0.0
        } else {
            han as f64 / letters as f64
        }
    }
}

impl LanguageDetector for CjkRatioDetector {
    fn detect(&self, _id: &str, text: &str) -> Result<LanguageGuess, PortFailure> {
        let ratio = Self::ratio(text);
        Ok(if ratio > 0.0 {
            LanguageGuess {
                tag: CHINESE_TAG.into(),
                confidence: ratio,
            }
        } else {
            LanguageGuess {
                tag: "und".into(),
                confidence: 1.0,
            }
        })
    }
}

/// Per-character Traditional→Simplified mapping table.
#[derive(Debug, Clone)]
pub struct TableConverter {
    map: HashMap<char, char>,
}

impl TableConverter {
    pub fn bundled() -> &'static Self {
        static CONV: OnceLock<TableConverter> = OnceLock::new();
        CONV.get_or_init(|| Self::parse(TRAD_SIMP).expect("bundled table is well-formed"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// `traditional<TAB>simplified` per line, single characters each.
    /// Chains (a→b, b→c) are resolved so that conversion is idempotent.
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split('\t').map(|f| {
                let mut cs = f.trim().chars();
                match (cs.next(), cs.next()) {
                    (Some(c), None) => Some(c),
                    _ => None,
                }
            });
            match (it.next().flatten(), it.next().flatten()) {
                (Some(t), Some(s)) => {
                    raw.insert(t, s);
                }
                _ => {
                    return Err(Error::Format(format!(
                        "conversion table line {}: expected `char<TAB>char`",
                        i + 1
                    )))
                }
            }
        }
        let mut map = HashMap::with_capacity(raw.len());
        for (&from, &first) in &raw {
            let mut to = first;
            let mut hops = 0;
            while let Some(&next) = raw.get(&to) {
                if next == to || hops > raw.len() {
                    break;
                }
                to = next;
                hops += 1;
            }
            if from != to && !raw.contains_key(&to) {
                map.insert(from, to);
            }
        }
        Ok(Self { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl ScriptConverter for TableConverter {
    fn convert(&self, text: &str) -> String {
        text.chars()
            .map(|c| self.map.get(&c).copied().unwrap_or(c))
            .collect()
    }
}

impl ScriptConverter for &TableConverter {
    fn convert(&self, text: &str) -> String {
        (**self).convert(text)
    }
}

/// Stop-word list, one word per line.
#[derive(Debug, Clone, Default)]
pub struct StopWords {
    words: HashSet<String>,
}

impl StopWords {
    pub fn bundled() -> Self {
        Self::parse(STOPWORDS)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn parse(text: &str) -> Self {
        Self {
            words: text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Word frequencies used by corpus-mode entropy: `word<TAB>count` lines.
#[derive(Debug, Clone, Default)]
pub struct UnigramTable {
    counts: HashMap<String, u64>,
    total: u64,
}

impl UnigramTable {
    pub fn from_counts<I, S>(counts: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let counts: HashMap<String, u64> = counts.into_iter().map(|(w, c)| (w.into(), c)).collect();
        let total = counts.values().sum();
        Self { counts, total }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (w, c) = line
                .split_once('\t')
                .and_then(|(w, c)| Some((w, c.trim().parse::<u64>().ok()?)))
                .ok_or_else(|| {
                    Error::Format(format!("{}:{}: expected `word<TAB>count`", path.display(), i + 1))
                })?;
            counts.push((w.to_string(), c));
        }
        Ok(Self::from_counts(counts))
    }

    /// Add-one smoothed probability, so unseen words get a small nonzero mass.
    pub fn probability(&self, word: &str) -> f64 {
        let c = self.counts.get(word).copied().unwrap_or(0);
        (c + 1) as f64 / (self.total + self.counts.len() as u64 + 1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_known_words_greedily() {
        let tok = LexiconTokenizer::bundled();
        let words = tok.segment_words("北京城市风景").unwrap();
        assert_eq!(words.concat(), "北京城市风景");
        assert!(words.len() <= 3, "{words:?}");
        let tags = tok.pos_tags("城市 手机 photo 2024").unwrap();
        assert_eq!(tags[0], ("城市".to_string(), tok.tag_of("城市").unwrap().to_string()));
        assert_eq!(tags[2].1, "eng");
        assert_eq!(tags[3].1, "m");
    }

    #[test]
    fn punctuation_and_emoji_are_not_words() {
        let tok = LexiconTokenizer::bundled();
        let words = tok.segment_words("猫，狗！😀 cat").unwrap();
        assert_eq!(words, ["猫", "狗", "cat"]);
        let tokens = tok.tokenize("猫😀").unwrap();
        assert_eq!(tokens.len(), 2);
        assert!(!tokens[0].unknown);
        assert!(tokens[1].unknown);
    }

    #[test]
    fn supplementary_han_is_unknown_noun() {
        let tok = LexiconTokenizer::bundled();
        let tokens = tok.tokenize("𠀀").unwrap();
        assert!(tokens[0].unknown);
        assert_eq!(tok.pos_tags("𠀀").unwrap()[0].1, "n");
    }

    #[test]
    fn detector_ratios() {
        let d = CjkRatioDetector;
        assert_eq!(d.detect("", "hello world").unwrap().tag, "und");
        let zh = d.detect("", "你好世界").unwrap();
        assert_eq!((zh.tag.as_str(), zh.confidence), (CHINESE_TAG, 1.0));
        assert_eq!(d.detect("", "ab你好").unwrap().confidence, 0.5);
    }

    #[test]
    fn bundled_table_maps_and_is_idempotent() {
        let conv = TableConverter::bundled();
        assert!(conv.len() > 4000);
        assert_eq!(conv.convert("風景漢語"), "风景汉语");
        let once = conv.convert("臺灣的風景與書籍");
        assert_eq!(conv.convert(&once), once);
    }

    #[test]
    fn table_chains_resolve() {
        let conv = TableConverter::parse("甲\t乙\n乙\t丙\n").unwrap();
        assert_eq!(conv.convert("甲乙"), "丙丙");
        assert!(TableConverter::parse("ab\tc\n").is_err());
    }

    #[test]
    fn unigram_smoothing() {
        let t = UnigramTable::from_counts([("a", 3u64), ("b", 1)]);
        assert_eq!(t.probability("a"), 4.0 / 7.0);
        assert_eq!(t.probability("zz"), 1.0 / 7.0);
    }
}
