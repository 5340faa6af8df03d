use std::collections::HashMap;
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, PortFailure, Result};
use crate::ports::ProcessClient;

use super::{LanguageDetector, LanguageGuess, Token, TokenizerPort};

/// Language detector backed by an external process.
#[derive(Debug)]
pub struct ProcessLanguageDetector(pub ProcessClient);

impl LanguageDetector for ProcessLanguageDetector {
    fn detect(&self, id: &str, text: &str) -> Result<LanguageGuess, PortFailure> {
        let v = self.0.call(&json!({ "id": id, "text": text }))?;
        let tag = v.get("tag").and_then(Value::as_str);
        let conf = v.get("confidence").and_then(Value::as_f64);
        match (tag, conf) {
            (Some(tag), Some(confidence)) => Ok(LanguageGuess {
                tag: tag.to_string(),
                confidence,
            }),
            _ => Err(PortFailure::new(self.0.port(), format!("bad response {v}"))),
        }
    }
}

/// Precomputed language guesses: `id<TAB>tag<TAB>confidence` per line.
/// Records absent from the file are reported as undetermined.
#[derive(Debug, Clone, Default)]
pub struct LanguageFile {
    guesses: HashMap<String, LanguageGuess>,
}

impl LanguageFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut guesses = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let parsed = match fields.as_slice() {
                [id, tag, conf] => conf.trim().parse::<f64>().ok().map(|c| (id, tag, c)),
                _ => None,
            };
            let (id, tag, confidence) = parsed.ok_or_else(|| {
                Error::Format(format!(
                    "{}:{}: expected `id<TAB>tag<TAB>confidence`",
                    path.display(),
                    i + 1
                ))
            })?;
            guesses.insert(
                id.to_string(),
                LanguageGuess {
                    tag: tag.trim().to_string(),
                    confidence,
                },
            );
        }
        Ok(Self { guesses })
    }
}

impl LanguageDetector for LanguageFile {
    fn detect(&self, id: &str, _text: &str) -> Result<LanguageGuess, PortFailure> {
        Ok(self.guesses.get(id).cloned().unwrap_or(LanguageGuess {
            tag: "und".into(),
            confidence: 0.0,
        }))
    }
}

/// Tokenizer/segmenter/tagger backed by an external process.
///
/// Requests carry `op` = `tokenize` | `segment` | `pos`; responses carry
/// `tokens` (list of `{text, unknown}`), `words` (list of strings) or `pos`
/// (list of `[word, tag]`).
#[derive(Debug)]
pub struct ProcessTokenizer(pub ProcessClient);

impl ProcessTokenizer {
    fn call(&self, op: &str, text: &str) -> Result<Value, PortFailure> {
        let id = self.0.next_seq();
        self.0.call(&json!({ "id": id, "op": op, "text": text }))
    }

    fn bad(&self, v: &Value) -> PortFailure {
        PortFailure::new(self.0.port(), format!("bad response {v}"))
    }
}

impl TokenizerPort for ProcessTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>, PortFailure> {
        let v = self.call("tokenize", text)?;
        let items = v.get("tokens").and_then(Value::as_array).ok_or_else(|| self.bad(&v))?;
        items
            .iter()
            .map(|t| {
                Some(Token {
                    text: t.get("text")?.as_str()?.to_string(),
                    unknown: t.get("unknown")?.as_bool()?,
                })
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| self.bad(&v))
    }

    fn segment_words(&self, text: &str) -> Result<Vec<String>, PortFailure> {
        let v = self.call("segment", text)?;
        v.get("words")
            .and_then(Value::as_array)
            .and_then(|ws| ws.iter().map(|w| w.as_str().map(String::from)).collect())
            .ok_or_else(|| self.bad(&v))
    }

    fn pos_tags(&self, text: &str) -> Result<Vec<(String, String)>, PortFailure> {
        let v = self.call("pos", text)?;
        v.get("pos")
            .and_then(Value::as_array)
            .and_then(|ps| {
                ps.iter()
                    .map(|p| {
                        let pair = p.as_array()?;
                        Some((pair.first()?.as_str()?.to_string(), pair.get(1)?.as_str()?.to_string()))
                    })
                    .collect()
            })
            .ok_or_else(|| self.bad(&v))
    }
}
