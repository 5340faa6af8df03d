//! Dataset diagnostics: length and resolution histograms, semantic word
//! density, perplexity band mass, k-means cluster balance, image-text
//! similarity, the sigmoid contrastive loss probe and frequency tables.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{AnalysisConfig, BinSpec};
use crate::embed::{dot_unchecked, EmbeddingStore, Modality};
use crate::error::{Error, PortFailure, Result};
use crate::image::{ImageLoader, LoadError};
use crate::ports::TextScorer;
use crate::record::Record;
use crate::report::{Percent, Ratio};
use crate::text::{is_content_tag, StopWords, TokenizerPort};

/// Fixed-width histogram. Values outside the range land in the first or
/// last bin, so `counts` always sums to `total`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn new(spec: BinSpec) -> Self {
        let bins = spec.bins.max(1);
        let w = (spec.hi - spec.lo) / bins as f64;
        let mut bin_edges: Vec<f64> = (0..bins).map(|i| spec.lo + w * i as f64).collect();
        bin_edges.push(spec.hi);
        Self {
            bin_edges,
            counts: vec![0; bins],
            total: 0,
        }
    }

    pub fn from_values(spec: BinSpec, values: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Self::new(spec);
        for v in values {
            h.add(v);
        }
        h
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let n = self.counts.len();
        let (lo, hi) = (self.bin_edges[0], self.bin_edges[n]);
        if v <= lo {
            return 0;
        }
        if v >= hi {
            return n - 1;
        }
        let i = ((v - lo) / (hi - lo) * n as f64) as usize;
        // guard against rounding at bin edges
        let mut i = i.min(n - 1);
        while i > 0 && v < self.bin_edges[i] {
            i -= 1;
        }
        while i + 1 < n && v >= self.bin_edges[i + 1] {
            i += 1;
        }
        i
    }

    /// Adds one value; NaN is ignored.
    pub fn add(&mut self, v: f64) {
        if v.is_nan() {
            return;
        }
        let i = self.bin_of(v);
        self.counts[i] += 1;
        self.total += 1;
    }

    /// Indices of non-empty bins.
    pub fn occupied(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&i| self.counts[i] > 0).collect()
    }

    /// CSV with header `bin_lo,bin_hi,count`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Format(e.to_string());
        wr.write_record(["bin_lo", "bin_hi", "count"]).map_err(err)?;
        for (i, c) in self.counts.iter().enumerate() {
            wr.write_record([
                self.bin_edges[i].to_string(),
                self.bin_edges[i + 1].to_string(),
                c.to_string(),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(|e| Error::io("<histogram>", e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthStats {
    pub words: Histogram,
    pub width: Histogram,
    pub height: Histogram,
    pub min_edge: Histogram,
    pub total_words: u64,
    pub mean_words: f64,
    pub decode_failures: u64,
}

/// Caption word counts and image dimensions. Pass no decoder to skip the
/// resolution histograms.
pub fn length_resolution_stats(
    records: &[Record],
    segmenter: &dyn TokenizerPort,
    decoder: Option<&dyn ImageLoader>,
    cfg: &AnalysisConfig,
) -> Result<LengthStats> {
    let counts: Vec<usize> = records
        .par_iter()
        .map(|r| segmenter.segment_words(&r.text).map(|w| w.len()).map_err(|e| e.for_record(&r.id)))
        .collect::<Result<_>>()?;
    let total_words: u64 = counts.iter().map(|&c| c as u64).sum();
    let mut s = LengthStats {
        words: Histogram::from_values(cfg.word_bins, counts.iter().map(|&c| c as f64)),
        width: Histogram::new(cfg.resolution_bins),
        height: Histogram::new(cfg.resolution_bins),
        min_edge: Histogram::new(cfg.resolution_bins),
        total_words,
        mean_words: if records.is_empty() { 0.0 } else { total_words as f64 / records.len() as f64 },
        decode_failures: 0,
    };
    if let Some(dec) = decoder {
        let dims: Vec<Result<(u32, u32), LoadError>> = records
            .par_iter()
            .map(|r| dec.load(&r.image_ref).map(|i| (i.width(), i.height())))
            .collect();
        for d in dims {
            match d {
                Ok((w, h)) => {
                    s.width.add(w as f64);
                    s.height.add(h as f64);
                    s.min_edge.add(w.min(h) as f64);
                }
                Err(LoadError::Decode(_)) => s.decode_failures += 1,
                Err(e @ LoadError::Systemic(_)) => return Err(e.into()),
            }
        }
    }
    Ok(s)
}

/// Share of nouns, verbs and adjectives among a caption's tagged words.
/// Captions without words have density 0.
pub fn word_density(text: &str, tagger: &dyn TokenizerPort) -> Result<f64, PortFailure> {
    let tags = tagger.pos_tags(text)?;
    if tags.is_empty() {
        return Ok(0.0);
    }
    let content = tags.iter().filter(|(_, t)| is_content_tag(t)).count();
    Ok(content as f64 / tags.len() as f64)
}

pub fn semantic_word_density(records: &[Record], tagger: &dyn TokenizerPort, bins: BinSpec) -> Result<Histogram> {
    let d: Vec<f64> = records
        .par_iter()
        .map(|r| word_density(&r.text, tagger).map_err(|e| e.for_record(&r.id)))
        .collect::<Result<_>>()?;
    Ok(Histogram::from_values(bins, d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerplexityStats {
    pub histogram: Histogram,
    /// Share of scored records inside the band (inclusive); `None` when
    /// nothing was scored.
    pub band_fraction: Option<f64>,
    pub unscored: u64,
}

pub fn perplexity_stats(
    records: &[Record],
    lm: &dyn TextScorer,
    bins: BinSpec,
    band: [f64; 2],
) -> Result<PerplexityStats> {
    let scores: Vec<Option<f64>> = records
        .par_iter()
        .map(|r| lm.score(&r.id, &r.text).map_err(|e| e.for_record(&r.id)))
        .collect::<Result<_>>()?;
    let scored: Vec<f64> = scores.iter().flatten().copied().collect();
    let inside = scored.iter().filter(|&&p| p >= band[0] && p <= band[1]).count();
    Ok(PerplexityStats {
        band_fraction: (!scored.is_empty()).then(|| inside as f64 / scored.len() as f64),
        unscored: (scores.len() - scored.len()) as u64,
        histogram: Histogram::from_values(bins, scored),
    })
}

/// Gini coefficient of sizes: `sum_i sum_j |x_i - x_j| / (2 k sum x)`.
pub fn gini(sizes: &[u64]) -> f64 {
    let k = sizes.len() as i128;
    let total: i128 = sizes.iter().map(|&x| x as i128).sum();
    if k == 0 || total == 0 {
        return 0.0;
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    // sum_i sum_j |x_i - x_j| = 2 sum_i (2i - k - 1) x_(i), 1-based ascending
    let num: i128 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2 * (i as i128 + 1) - k - 1) * x as i128)
        .sum();
    num as f64 / (k * total) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBalance {
    /// Descending.
    pub cluster_sizes: Vec<u64>,
    pub gini: f64,
}

impl ClusterBalance {
    pub fn from_sizes(mut sizes: Vec<u64>) -> Self {
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        Self {
            gini: gini(&sizes),
            cluster_sizes: sizes,
        }
    }
}

/// Lloyd's k-means result over unit image embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Point ids, sorted.
    pub ids: Vec<String>,
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties prefer `current`, then the lowest index.
pub fn nearest(p: &[f64], centroids: &[Vec<f64>], current: Option<usize>) -> usize {
    let mut best = current.unwrap_or(0);
    let mut best_d = sq_dist(p, &centroids[best]);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best_d || (d == best_d && Some(best) != current && c < best) {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Deterministic k-means: initial centroids are `k` distinct ids drawn by a
/// seeded shuffle of the sorted ids; exactly `iters` update rounds follow.
/// An empty cluster is re-seeded with the point farthest from its own
/// centroid among clusters that can spare one.
pub fn kmeans<S: AsRef<str>>(store: &EmbeddingStore, ids: &[S], k: usize, iters: usize, seed: u64) -> Result<KMeans> {
    let mut ids: Vec<String> = ids.iter().map(|s| s.as_ref().to_string()).collect();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("k = {k} must be in 1..={n}")));
    }
    let points: Vec<&[f64]> = ids
        .iter()
        .map(|id| store.require(id, Modality::Image))
        .collect::<Result<_>>()?;
    let dim = store.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut centroids: Vec<Vec<f64>> = order[..k].iter().map(|&i| points[i].to_vec()).collect();
    let mut assignment: Vec<usize> = points.par_iter().map(|p| nearest(p, &centroids, None)).collect();
    for _ in 0..iters {
        reseed_empty(&points, &mut centroids, &mut assignment, k);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            sizes[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            }
        }
        assignment = points
            .par_iter()
            .zip(assignment.par_iter())
            .map(|(p, &a)| nearest(p, &centroids, Some(a)))
            .collect();
    }
    Ok(KMeans {
        ids,
        assignment,
        centroids,
    })
}

fn reseed_empty(points: &[&[f64]], centroids: &mut [Vec<f64>], assignment: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let a = assignment[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[a]);
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else {
            return;
        };
        assignment[i] = empty;
        centroids[empty] = points[i].to_vec();
    }
}

pub fn kmeans_balance<S: AsRef<str>>(
    store: &EmbeddingStore,
    ids: &[S],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<ClusterBalance> {
    let km = kmeans(store, ids, k, iters, seed)?;
    let mut sizes = vec![0u64; k];
    for &a in &km.assignment {
        sizes[a] += 1;
    }
    Ok(ClusterBalance::from_sizes(sizes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityStats {
    pub histogram: Histogram,
    /// Share of measured pairs with cosine strictly above the threshold.
    pub above_fraction: Option<f64>,
    pub missing: u64,
}

pub fn similarity_distribution(
    records: &[Record],
    store: &EmbeddingStore,
    bins: BinSpec,
    threshold: f64,
) -> SimilarityStats {
    let sims: Vec<f64> = records
        .iter()
        .filter_map(|r| {
            let i = store.unit(&r.id, Modality::Image)?;
            let t = store.unit(&r.id, Modality::Text)?;
            Some(dot_unchecked(i, t).clamp(-1.0, 1.0))
        })
        .collect();
    let above = sims.iter().filter(|&&s| s > threshold).count();
    SimilarityStats {
        above_fraction: (!sims.is_empty()).then(|| above as f64 / sims.len() as f64),
        missing: (records.len() - sims.len()) as u64,
        histogram: Histogram::from_values(bins, sims),
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Sigmoid contrastive loss summed over every image/text combination:
/// `-sum_ij [i = j] log sig(s_ij) + [i != j] log(1 - sig(s_ij))` with
/// `s_ij = v_i . t_j / tau + b`.
pub fn sigmoid_loss_probe<A: AsRef<[f64]>, B: AsRef<[f64]>>(img: &[A], txt: &[B], tau: f64, b: f64) -> Result<f64> {
    if img.len() != txt.len() {
        return Err(Error::Shape {
            expected: img.len(),
            found: txt.len(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("temperature {tau} must be > 0")));
    }
    let dim = img.first().map_or(0, |v| v.as_ref().len());
    if let Some(bad) = img.iter().map(|v| v.as_ref().len()).chain(txt.iter().map(|v| v.as_ref().len())).find(|&d| d != dim) {
        return Err(Error::Shape {
            expected: dim,
            found: bad,
        });
    }
    let mut loss = 0.0;
    for (i, v) in img.iter().enumerate() {
        for (j, t) in txt.iter().enumerate() {
            let s = dot_unchecked(v.as_ref(), t.as_ref()) / tau + b;
            loss += if i == j { softplus(-s) } else { softplus(s) };
        }
    }
    Ok(loss)
}

/// Most frequent words, ties in lexicographic order. Stop-words are
/// excluded when a list is given.
pub fn word_frequency(
    records: &[Record],
    segmenter: &dyn TokenizerPort,
    top_n: usize,
    exclude: Option<&StopWords>,
) -> Result<Vec<(String, u64)>> {
    let per: Vec<Vec<String>> = records
        .par_iter()
        .map(|r| segmenter.segment_words(&r.text).map_err(|e| e.for_record(&r.id)))
        .collect::<Result<_>>()?;
    let mut counts: HashMap<String, u64> = HashMap::new();
    for w in per.into_iter().flatten() {
        if exclude.is_some_and(|s| s.contains(&w)) {
            continue;
        }
        *counts.entry(w).or_default() += 1;
    }
    Ok(top(counts, top_n))
}

fn top(counts: HashMap<String, u64>, n: usize) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(n);
    v
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainRow {
    pub domain: String,
    pub count: u64,
    pub pct: Percent,
}

/// Most common source domains with their share of all records.
pub fn domain_frequency(records: &[Record], top_n: usize) -> Vec<DomainRow> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for r in records {
        let d = if r.domain.is_empty() { "(unknown)" } else { r.domain.as_str() };
        *counts.entry(d.to_string()).or_default() += 1;
    }
    let total = records.len() as u64;
    top(counts, top_n)
        .into_iter()
        .map(|(domain, count)| DomainRow {
            pct: Percent(Ratio::new(count, total).hundredths().unwrap_or(0)),
            domain,
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_edges_and_total() {
        let spec = BinSpec::new(0.0, 1.0, 10);
        let h = Histogram::from_values(spec, [0.0, 0.1, 0.3, 0.999, 1.0, 5.0, -2.0, f64::NAN]);
        assert_eq!(h.total, 7);
        assert_eq!(h.counts.iter().sum::<u64>(), 7);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[9], 3);
        let e = Histogram::new(spec);
        assert_eq!(e.total, 0);
        assert_eq!(e.bin_edges.len(), 11);
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[3, 3, 3]), 0.0);
        assert_eq!(gini(&[0, 0, 4]), 2.0 / 3.0);
        assert!(gini(&[1, 4]) > gini(&[2, 3]));
        assert_eq!(gini(&[]), 0.0);
    }

    #[test]
    fn sigmoid_examples() {
        let one = [vec![1.0, 0.0]];
        assert!((sigmoid_loss_probe(&one, &one, 1.0, 0.0).unwrap() - 0.313_261_687_518_222_8).abs() < 1e-12);
        let t = [vec![0.0, 1.0]];
        assert!((sigmoid_loss_probe(&one, &t, 1.0, 0.0).unwrap() - 2f64.ln()).abs() < 1e-12);
        let v = [vec![1.0, 0.0], vec![-1.0, 0.0]];
        let loss = sigmoid_loss_probe(&v, &v, 1.0, 0.0).unwrap();
        assert!((loss - 4.0 * softplus(-1.0)).abs() < 1e-12);
        assert!((loss - 1.253_047).abs() < 1e-6);
        assert!(sigmoid_loss_probe(&v, &one, 1.0, 0.0).is_err());
        assert!(sigmoid_loss_probe(&v, &v, 0.0, 0.0).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn domain_examples() {
        let r = |d: &str| Record::new("x", format!("http://{d}/"), "t", "i", 0);
        let rows = domain_frequency(&[r("a.com"), r("a.com"), r("b.com"), r("a.com")], 40);
        assert_eq!(rows[0].domain, "a.com");
        assert_eq!(rows[0].pct.to_string(), "75.00");
        assert_eq!(rows[1].pct.to_string(), "25.00");
        assert!(domain_frequency(&[], 40).is_empty());
    }

    #[test]
    fn kmeans_identical_points_keeps_k_clusters() {
        let mut s = EmbeddingStore::new(2);
        for i in 0..5 {
            s.insert(&format!("p{i}"), Modality::Image, &[1.0, 0.0]).unwrap();
        }
        let ids: Vec<String> = (0..5).map(|i| format!("p{i}")).collect();
        let b = kmeans_balance(&s, &ids, 2, 5, 0).unwrap();
        assert_eq!(b.cluster_sizes, [4, 1]);
        let b = kmeans_balance(&s, &ids, 5, 3, 0).unwrap();
        assert_eq!(b.cluster_sizes, [1; 5]);
        assert_eq!(b.gini, 0.0);
        assert!(kmeans_balance(&s, &ids, 6, 3, 0).is_err());
    }
}
