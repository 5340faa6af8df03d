//! Embedding vectors, the in-memory store, the `DQEM` file format and the
//! distance algebra used by deduplication and alignment banding.
//!
//! File layout (little-endian): magic `DQEM`, `u32` version, `u32` dim,
//! `u64` count, then per vector a `u16` id length, the UTF-8 id, a `u8`
//! modality (0 image, 1 text) and `dim` IEEE-754 `f32` values.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, PortFailure, Result};
use crate::ports::ProcessClient;
use crate::record::Record;

pub const MAGIC: &[u8; 4] = b"DQEM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::Image => 0,
            Modality::Text => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Modality::Image),
            1 => Some(Modality::Text),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub record_id: String,
    pub modality: Modality,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(record_id: impl Into<String>, modality: Modality, values: Vec<f64>) -> Result<Self> {
        let record_id = record_id.into();
        if values.is_empty() {
            return Err(Error::Shape { expected: 1, found: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(record_id));
        }
        Ok(Self {
            record_id,
            modality,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(v: &[f64], id: &str) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate(format!("cannot normalize zero vector `{id}`")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Scales `v` to unit L2 norm.
pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    Ok(EmbeddingVector {
        record_id: v.record_id.clone(),
        modality: v.modality,
        values: unit(&v.values, &v.record_id)?,
    })
}

fn same_dim(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    same_dim(a, b)?;
    Ok(dot_unchecked(a, b))
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 - a.b` for unit vectors, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok((1.0 - dot(a, b)?).clamp(0.0, 2.0))
}

/// Euclidean distance.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    same_dim(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Cosine similarity corresponding to an L2 distance between unit vectors.
pub fn l2_to_cosine(l2: f64) -> f64 {
    1.0 - l2 * l2 / 2.0
}

/// L2 distance corresponding to a cosine similarity between unit vectors.
pub fn cosine_to_l2(c: f64) -> f64 {
    (2.0 - 2.0 * c).max(0.0).sqrt()
}

type Key = (String, Modality);

/// Immutable-after-build set of same-dimension vectors keyed by
/// `(record id, modality)`. Raw values are kept exactly as loaded; a unit
/// copy is kept for distance computations.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dim: usize,
    keys: Vec<Key>,
    index: HashMap<Key, usize>,
    raw: Vec<f32>,
    unit: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn insert(&mut self, id: &str, modality: Modality, values: &[f32]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(id.to_string()));
        }
        let key = (id.to_string(), modality);
        if self.index.contains_key(&key) {
            return Err(Error::Duplicate(format!("{id}/{}", modality.as_str())));
        }
        let wide: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let u = unit(&wide, id)?;
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.raw.extend_from_slice(values);
        self.unit.extend(u);
        Ok(())
    }

    /// Inserts an `f64` vector, storing it at `f32` precision.
    pub fn insert_vector(&mut self, v: &EmbeddingVector) -> Result<()> {
        let vals: Vec<f32> = v.values.iter().map(|&x| x as f32).collect();
        self.insert(&v.record_id, v.modality, &vals)
    }

    fn slot(&self, id: &str, modality: Modality) -> Option<usize> {
        self.index.get(&(id.to_string(), modality)).copied()
    }

    /// Stored values, bit-exact.
    pub fn raw(&self, id: &str, modality: Modality) -> Option<&[f32]> {
        self.slot(id, modality)
            .map(|i| &self.raw[i * self.dim..(i + 1) * self.dim])
    }

    /// Unit-normalized values.
    pub fn unit(&self, id: &str, modality: Modality) -> Option<&[f64]> {
        self.slot(id, modality)
            .map(|i| &self.unit[i * self.dim..(i + 1) * self.dim])
    }

    pub fn require(&self, id: &str, modality: Modality) -> Result<&[f64]> {
        self.unit(id, modality)
            .ok_or_else(|| Error::Lookup(format!("{id}/{}", modality.as_str())))
    }

    pub fn contains(&self, id: &str, modality: Modality) -> bool {
        self.slot(id, modality).is_some()
    }

    /// Ids in `ids` lacking a vector of `modality`.
    pub fn missing<'a>(&self, ids: impl IntoIterator<Item = &'a str>, modality: Modality) -> Vec<String> {
        ids.into_iter()
            .filter(|id| !self.contains(id, modality))
            .map(String::from)
            .collect()
    }

    /// Keys in insertion order.
    pub fn keys(&self) -> impl Iterator<Item = (&str, Modality)> {
        self.keys.iter().map(|(id, m)| (id.as_str(), *m))
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated {what}: expected {n} bytes at offset {}, found {}",
                self.pos,
                self.b.len() - self.pos
            )));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a `DQEM` byte buffer.
pub fn parse_embeddings(bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut r = Reader { b: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, expected DQEM".into()));
    }
    let version = r.u32("header")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let dim = r.u32("header")? as usize;
    let count = r.u64("header")?;
    if dim == 0 && count > 0 {
        return Err(Error::Format("dim 0 with non-empty payload".into()));
    }
    let mut store = EmbeddingStore::new(dim);
    let mut vals = vec![0f32; dim];
    for i in 0..count {
        let what = format!("record {i}");
        let len = r.u16(&what)? as usize;
        let id = std::str::from_utf8(r.take(len, &what)?)
            .map_err(|_| Error::Format(format!("record {i}: id is not UTF-8")))?;
        let m = r.take(1, &what)?[0];
        let modality = Modality::from_code(m)
            .ok_or_else(|| Error::Format(format!("record {i}: unknown modality {m}")))?;
        let payload = r.take(dim * 4, &what)?;
        for (v, c) in vals.iter_mut().zip(payload.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().unwrap());
        }
        store.insert(id, modality, &vals)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - r.pos
        )));
    }
    Ok(store)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&bytes)
}

/// Serializes the store in insertion order.
pub fn encode_embeddings(store: &EmbeddingStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + store.len() * (store.dim * 4 + 16));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.dim as u32).to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (i, (id, m)) in store.keys.iter().enumerate() {
        let len = u16::try_from(id.len()).map_err(|_| Error::Format(format!("id `{id}` longer than 65535 bytes")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.push(m.code());
        for v in &store.raw[i * store.dim..(i + 1) * store.dim] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embeddings(store)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Seeded ChaCha stream for `(seed, id, modality)`.
pub fn seeded_rng(seed: u64, id: &str, modality: Modality) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((id.len() as u64).to_le_bytes());
    h.update(id.as_bytes());
    h.update([modality.code()]);
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// Uniform draw in `[-1, 1)` from the top 53 bits of a `u64`.
pub fn uniform_signed(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Deterministic pseudo-random unit vector for tests and demos. Only integer
/// hashing and exact float arithmetic go into the draw, so output is the
/// same on every platform.
pub fn mock_provider(record_id: &str, modality: Modality, dim: usize, seed: u64) -> EmbeddingVector {
    assert!(dim >= 1, "mock embeddings need dim >= 1");
    let mut rng = seeded_rng(seed, record_id, modality);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| uniform_signed(&mut rng)).collect();
        if let Ok(u) = unit(&v, record_id) {
            return EmbeddingVector {
                record_id: record_id.to_string(),
                modality,
                values: u,
            };
        }
    }
}

/// Embedding provider process: request `{id, modality}`, response
/// `{id, dim}` followed by `dim` little-endian `f32` values.
#[derive(Debug)]
pub struct ProcessEmbeddings {
    client: ProcessClient,
    dim: usize,
}

impl ProcessEmbeddings {
    pub fn new(client: ProcessClient, dim: usize) -> Self {
        Self { client, dim }
    }

    pub fn fetch(&self, id: &str, modality: Modality) -> Result<Vec<f32>, PortFailure> {
        let (v, payload) = self.client.call_with_payload(
            &json!({ "id": id, "modality": modality.as_str() }),
            |v| v.get("dim").and_then(|d| d.as_u64()).map(|d| d as usize * 4),
        )?;
        let dim = v.get("dim").and_then(|d| d.as_u64()).unwrap_or(0) as usize;
        if dim != self.dim {
            return Err(PortFailure::new(
                self.client.port(),
                format!("expected dim {}, got {v}", self.dim),
            ));
        }
        Ok(payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Builds a store holding both modalities for `records` from a binding.
/// File bindings load the whole file; missing records are detected by the
/// consuming stage.
pub fn store_for(binding: &crate::config::EmbeddingBinding, records: &[Record]) -> Result<EmbeddingStore> {
    use crate::config::EmbeddingBinding::*;
    match binding {
        File { path } => load_embeddings(path),
        Mock { dim, seed } => {
            let mut s = EmbeddingStore::new(*dim);
            for r in records {
                for m in [Modality::Image, Modality::Text] {
                    s.insert_vector(&mock_provider(&r.id, m, *dim, *seed))?;
                }
            }
            Ok(s)
        }
        Process { command, dim } => {
            let p = ProcessEmbeddings::new(ProcessClient::spawn("embeddings", command)?, *dim);
            let mut s = EmbeddingStore::new(*dim);
            for r in records {
                for m in [Modality::Image, Modality::Text] {
                    let v = p.fetch(&r.id, m).map_err(|e| e.for_record(&r.id))?;
                    s.insert(&r.id, m, &v)?;
                }
            }
            Ok(s)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store3() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(4);
        s.insert("a", Modality::Image, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        s.insert("b", Modality::Text, &[0.1, -2.5, 3.0, 1e-7]).unwrap();
        s.insert("猫", Modality::Image, &[0.0, 0.0, 0.0, 7.0]).unwrap();
        s
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let s = store3();
        let back = parse_embeddings(&encode_embeddings(&s).unwrap()).unwrap();
        assert_eq!(back.len(), 3);
        for (id, m) in s.keys() {
            let a: Vec<u32> = s.raw(id, m).unwrap().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.raw(id, m).unwrap().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(encode_embeddings(&back).unwrap(), encode_embeddings(&s).unwrap());
    }

    #[test]
    fn empty_file() {
        let s = parse_embeddings(&encode_embeddings(&EmbeddingStore::new(8)).unwrap()).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.dim(), 8);
    }

    #[test]
    fn truncated_payload_names_sizes() {
        let bytes = encode_embeddings(&store3()).unwrap();
        let err = parse_embeddings(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("expected 16 bytes") && err.contains("found 13"), "{err}");
    }

    #[test]
    fn duplicate_and_nonfinite() {
        let mut s = store3();
        assert!(matches!(s.insert("a", Modality::Image, &[1.0; 4]), Err(Error::Duplicate(_))));
        assert!(s.insert("a", Modality::Text, &[1.0; 4]).is_ok());
        assert!(matches!(s.insert("n", Modality::Text, &[f32::NAN, 0.0, 0.0, 1.0]), Err(Error::NonFinite(_))));
        assert!(matches!(s.insert("z", Modality::Text, &[0.0; 3]), Err(Error::Shape { .. })));
        let mut bytes = encode_embeddings(&store3()).unwrap();
        let nan = f32::NAN.to_le_bytes();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&nan);
        assert!(matches!(parse_embeddings(&bytes), Err(Error::NonFinite(_))));
    }

    #[test]
    fn normalize_examples() {
        let v = EmbeddingVector::new("x", Modality::Text, vec![3.0, 4.0]).unwrap();
        assert_eq!(normalize(&v).unwrap().values, [0.6, 0.8]);
        let e = EmbeddingVector::new("e", Modality::Text, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(normalize(&e).unwrap(), e);
        let z = EmbeddingVector::new("z", Modality::Text, vec![0.0, 0.0]).unwrap();
        assert!(matches!(normalize(&z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn distance_examples() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let c = [-1.0, 0.0];
        assert_eq!(cosine_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(cosine_distance(&a, &b).unwrap(), 1.0);
        assert_eq!(cosine_distance(&a, &c).unwrap(), 2.0);
        assert_eq!(l2_distance(&a, &a).unwrap(), 0.0);
        assert!((cosine_to_l2(0.4382) - 1.06).abs() < 1e-4);
        assert!((cosine_to_l2(0.2312) - 1.24).abs() < 1e-4);
        assert!(matches!(l2_distance(&a, &[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn mock_is_deterministic_unit_and_distinct() {
        let a = mock_provider("r1", Modality::Image, 16, 7);
        assert_eq!(a, mock_provider("r1", Modality::Image, 16, 7));
        assert_ne!(a, mock_provider("r1", Modality::Text, 16, 7));
        assert_ne!(a, mock_provider("r1", Modality::Image, 16, 8));
        assert!((norm(&a.values) - 1.0).abs() < 1e-12);
        let vs: Vec<_> = (0..200).map(|i| mock_provider(&format!("id{i}"), Modality::Text, 4, 0)).collect();
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                assert_ne!(vs[i].values, vs[j].values);
            }
        }
    }
}
