use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::ports::ProcessClient;

use super::ImageBuffer;

/// Why an image could not be loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadError {
    /// This record's image is unreadable or corrupt; the record is rejected.
    Decode(String),
    /// The loader itself is broken; the stage aborts.
    Systemic(String),
}

impl std::fmt::Display for LoadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoadError::Decode(m) => write!(f, "decode failure: {m}"),
            LoadError::Systemic(m) => write!(f, "loader failure: {m}"),
        }
    }
}

/// Resolves an `image_ref` to pixels.
pub trait ImageLoader: Send + Sync {
    fn load(&self, image_ref: &str) -> Result<ImageBuffer, LoadError>;
}

/// Loads binary PGM (`P5`) and PPM (`P6`) files under a root directory.
/// Samples are returned exactly as stored; `maxval` must be at most 255.
#[derive(Debug, Clone)]
pub struct PnmLoader {
    root: PathBuf,
}

impl PnmLoader {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl ImageLoader for PnmLoader {
    fn load(&self, image_ref: &str) -> Result<ImageBuffer, LoadError> {
        if !self.root.is_dir() {
            return Err(LoadError::Systemic(format!(
                "image root {} is not a directory",
                self.root.display()
            )));
        }
        let path = self.root.join(image_ref);
        let bytes = std::fs::read(&path).map_err(|e| LoadError::Decode(format!("{}: {e}", path.display())))?;
        decode_pnm(&bytes).map_err(|m| LoadError::Decode(format!("{}: {m}", path.display())))
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.b.len() {
            match self.b[self.pos] {
                b'#' => {
                    while self.pos < self.b.len() && self.b[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.b.len() && self.b[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.b[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad {what} in header"))
    }
}

/// Parses a binary PGM/PPM byte stream.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer, String> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1u8,
        Some(b"P6") => 3u8,
        _ => return Err("not a binary PGM/PPM file".into()),
    };
    let mut c = Cursor { b: bytes, pos: 2 };
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err("missing separator after header".into()),
    }
    let need = width as usize * height as usize * channels as usize;
    let data = &bytes[c.pos..];
    if data.len() < need {
        return Err(format!("truncated raster: need {need} bytes, have {}", data.len()));
    }
    ImageBuffer::new(width, height, channels, data[..need].to_vec()).map_err(|e| e.to_string())
}

/// Encodes as binary PGM or PPM depending on the channel count.
pub fn encode_pnm(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

/// Decoder backed by an external process: request `{id, image_ref}`,
/// response `{id, width, height, channels}` followed by the raw samples, or
/// `{id, error}` for an undecodable image.
#[derive(Debug)]
pub struct ProcessImageLoader(pub ProcessClient);

impl ImageLoader for ProcessImageLoader {
    fn load(&self, image_ref: &str) -> Result<ImageBuffer, LoadError> {
        let id = self.0.next_seq();
        let dims = |v: &Value| -> Option<(u32, u32, u8)> {
            Some((
                v.get("width")?.as_u64()? as u32,
                v.get("height")?.as_u64()? as u32,
                v.get("channels")?.as_u64()? as u8,
            ))
        };
        let (v, payload) = self
            .0
            .call_with_payload(&json!({ "id": id, "image_ref": image_ref }), |v| {
                dims(v).map(|(w, h, c)| w as usize * h as usize * c as usize)
            })
            .map_err(|e| LoadError::Systemic(e.to_string()))?;
        if let Some(err) = v.get("error") {
            return Err(LoadError::Decode(format!("{image_ref}: {err}")));
        }
        let (w, h, c) = dims(&v).ok_or_else(|| LoadError::Systemic(format!("bad decoder response {v}")))?;
        ImageBuffer::new(w, h, c, payload).map_err(|e| LoadError::Decode(e.to_string()))
    }
}

impl From<LoadError> for Error {
    fn from(e: LoadError) -> Self {
        Error::Loader(e.to_string())
    }
}
