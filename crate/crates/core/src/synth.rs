//! Synthetic corpus generator with ground truth. Every injected fault is
//! built to trip exactly one substep, so the expected report left-counts
//! follow from the fault counts alone.
//!
//! Output layout:
//!
//! ```text
//! batch-<k>.jsonl      input manifests
//! images/*.pgm         a small shared image pool
//! scores/*.tsv         safety and low-textual score files
//! blacklist.txt
//! embeddings.dqem      image and text vectors for every record
//! config.toml          filter config wired to the files above
//! truth.json           expected rejections per report row
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DecoderBinding, EmbeddingBinding, FilterConfig, ScorerPort};
use crate::embed::{seeded_rng, uniform_signed, write_embeddings, EmbeddingStore, Modality};
use crate::error::{Error, Result};
use crate::image::{encode_pnm, ImageBuffer, ImageStep};
use crate::pipeline::{ALIGN_HIGH_ROW, ALIGN_LOW_ROW, CROSS_BATCH_ROW, DOWNLOAD_ROW, REDUNDANCY_ROW};
use crate::record::{write_manifest, Manifest, Record};
use crate::source::SOURCE_SUBSTEPS;
use crate::text::TextStep;

/// Faults that each reject a single record at one substep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    NotChinese,
    SourceUnsafe,
    Blacklisted,
    TooShort,
    TooLong,
    MixedLanguage,
    StopWords,
    NoNoun,
    Unk,
    RepeatedToken,
    TextUnsafe,
    BadAspect,
    SmallEdge,
    Corrupt,
    Flat,
    LowTextual,
    Blurry,
    FewGrayLevels,
    ImageUnsafe,
    AlignLow,
    AlignHigh,
}

impl Fault {
    pub const ALL: [Fault; 21] = [
        Fault::NotChinese,
        Fault::SourceUnsafe,
        Fault::Blacklisted,
        Fault::TooShort,
        Fault::TooLong,
        Fault::MixedLanguage,
        Fault::StopWords,
        Fault::NoNoun,
        Fault::Unk,
        Fault::RepeatedToken,
        Fault::TextUnsafe,
        Fault::BadAspect,
        Fault::SmallEdge,
        Fault::Corrupt,
        Fault::Flat,
        Fault::LowTextual,
        Fault::Blurry,
        Fault::FewGrayLevels,
        Fault::ImageUnsafe,
        Fault::AlignLow,
        Fault::AlignHigh,
    ];

    /// Report row `(stage, substep)` where the fault is rejected.
    pub fn row(self) -> (&'static str, &'static str) {
        use Fault::*;
        const SRC: &str = "Data Source Selection";
        const TXT: &str = "Text Refinement";
        const VIS: &str = "Visual Diversification";
        match self {
            NotChinese => (SRC, SOURCE_SUBSTEPS[0]),
            SourceUnsafe => (SRC, SOURCE_SUBSTEPS[1]),
            Blacklisted => (SRC, SOURCE_SUBSTEPS[2]),
            TooShort | TooLong => (SRC, SOURCE_SUBSTEPS[3]),
            MixedLanguage => (TXT, TextStep::Language.label()),
            StopWords => (TXT, TextStep::StopWords.label()),
            NoNoun => (TXT, TextStep::Nouns.label()),
            Unk => (TXT, TextStep::Unk.label()),
            RepeatedToken => (TXT, TextStep::Entropy.label()),
            TextUnsafe => (TXT, TextStep::Safety.label()),
            BadAspect | SmallEdge | Corrupt => (VIS, ImageStep::Geometry.label()),
            Flat => (VIS, ImageStep::Flat.label()),
            LowTextual => (VIS, ImageStep::LowTextual.label()),
            Blurry => (VIS, ImageStep::Blurry.label()),
            FewGrayLevels => (VIS, ImageStep::Entropy.label()),
            ImageUnsafe => (VIS, ImageStep::Safety.label()),
            AlignLow => ALIGN_LOW_ROW,
            AlignHigh => ALIGN_HIGH_ROW,
        }
    }

    /// Alignment faults need a clean record that reaches the band stage.
    fn needs_clean_caption(self) -> bool {
        !matches!(
            self,
            Fault::NotChinese
                | Fault::TooShort
                | Fault::TooLong
                | Fault::MixedLanguage
                | Fault::StopWords
                | Fault::NoNoun
                | Fault::Unk
                | Fault::RepeatedToken
        )
    }
}

/// Report rows of a full pipeline run in order.
pub fn report_rows() -> Vec<(&'static str, &'static str)> {
    let mut rows: Vec<(&str, &str)> = SOURCE_SUBSTEPS.iter().map(|s| ("Data Source Selection", *s)).collect();
    rows.push(DOWNLOAD_ROW);
    rows.extend(TextStep::steps(false).into_iter().map(|s| ("Text Refinement", s.label())));
    rows.extend(ImageStep::ALL.iter().map(|s| ("Visual Diversification", s.label())));
    rows.push(REDUNDANCY_ROW);
    rows.push(ALIGN_LOW_ROW);
    rows.push(ALIGN_HIGH_ROW);
    rows.push(CROSS_BATCH_ROW);
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub records: usize,
    pub batches: u32,
    pub dim: usize,
    pub seed: u64,
    /// Records per single-record fault.
    pub per_fault: usize,
    /// Within-batch duplicate groups; sizes alternate 2 and 3.
    pub dup_groups: usize,
    /// Near-duplicate pairs split across two batches.
    pub cross_pairs: usize,
    /// Share of clean captions written partly in Traditional script.
    pub traditional_share: f64,
    /// Share of clean captions carrying emoji or symbols.
    pub emoji_share: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            records: 10_000,
            batches: 7,
            dim: 64,
            seed: 7,
            per_fault: 60,
            dup_groups: 150,
            cross_pairs: 90,
            traditional_share: 0.1,
            emoji_share: 0.1,
        }
    }
}

impl SynthSpec {
    /// Default spec resized to `records`, with plant counts shrunk in
    /// proportion (at least one of each).
    pub fn scaled(records: usize) -> Self {
        let d = Self::default();
        let part = |n: usize| (n * records / d.records).max(1);
        Self {
            records,
            per_fault: part(d.per_fault),
            dup_groups: part(d.dup_groups),
            cross_pairs: part(d.cross_pairs),
            ..d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRow {
    pub stage: String,
    pub substep: String,
    /// `None` for informational rows.
    pub rejections: Option<u64>,
}

/// Expected accounting for a generated corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub initial: u64,
    pub rows: Vec<TruthRow>,
}

impl SynthTruth {
    /// Expected left count per row; `None` where the row is informational.
    pub fn expected_left(&self) -> Vec<Option<u64>> {
        let mut left = self.initial;
        self.rows
            .iter()
            .map(|r| {
                r.rejections.map(|n| {
                    left -= n;
                    left
                })
            })
            .collect()
    }

    pub fn final_count(&self) -> u64 {
        self.initial - self.rows.iter().filter_map(|r| r.rejections).sum::<u64>()
    }
}

/// A generated corpus on disk.
#[derive(Debug, Clone)]
pub struct Synthesized {
    pub dir: PathBuf,
    pub config_path: PathBuf,
    pub manifest_paths: Vec<PathBuf>,
    pub manifests: Vec<Manifest>,
    pub truth: SynthTruth,
}

const NOUNS: &[&str] = &[
    "城市", "夜景", "灯光", "街道", "建筑", "山脉", "湖泊", "森林", "天空", "云朵", "花园", "公园", "桥梁", "河流",
    "草地", "房屋", "汽车", "火车", "飞机", "孩子", "老人", "学生", "老师", "医生", "厨房", "餐桌", "水果", "蔬菜",
    "面包", "咖啡", "茶叶", "书籍", "电脑", "手机", "衣服", "帽子", "鞋子", "风景", "月亮", "瀑布", "村庄", "寺庙",
    "市场", "商店", "广场", "博物馆", "图书馆",
];
/// Traditional spellings and the Simplified nouns they convert to.
const TRADITIONAL: &[(&str, &str)] = &[("燈光", "灯光"), ("建築", "建筑"), ("風景", "风景"), ("書籍", "书籍"), ("電腦", "电脑")];
const VERBS: &[&str] = &["跳舞", "奔跑", "思考", "学习", "休息"];
const STOP: &str = "我们 的 是 了 在 和";
const DECOR: &[&str] = &["😀", "🌸", "★", "✨", "♥"];
const BLACKLISTED: &str = "spam-images.com";

const CLEAN_POOL: usize = 8;
const CLEAN_EDGE: u32 = 112;

fn image_ref(fault: Option<Fault>, i: usize) -> String {
    match fault {
        Some(Fault::BadAspect) => "aspect.pgm".into(),
        Some(Fault::SmallEdge) => "edge100.pgm".into(),
        Some(Fault::Corrupt) => "corrupt.pgm".into(),
        Some(Fault::Flat) => "flat.pgm".into(),
        Some(Fault::Blurry) => "gradient.pgm".into(),
        Some(Fault::FewGrayLevels) => "checker.pgm".into(),
        _ => format!("clean-{}.pgm", i % CLEAN_POOL),
    }
}

fn noise_image(w: u32, h: u32, rng: &mut impl RngCore) -> ImageBuffer {
    let mut data = vec![0u8; (w * h) as usize];
    rng.fill_bytes(&mut data);
    ImageBuffer::gray(w, h, data).expect("sized buffer")
}

fn write_image_pool(dir: &Path, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a6e);
    let mut files: Vec<(String, Vec<u8>)> = (0..CLEAN_POOL)
        .map(|i| (format!("clean-{i}.pgm"), encode_pnm(&noise_image(CLEAN_EDGE, CLEAN_EDGE, &mut rng))))
        .collect();
    // ratio 3.2 with both edges above the minimum
    files.push(("aspect.pgm".into(), encode_pnm(&noise_image(352, 110, &mut rng))));
    files.push(("edge100.pgm".into(), encode_pnm(&noise_image(100, 140, &mut rng))));
    files.push(("corrupt.pgm".into(), b"P5\n112 112\n255\n\x01\x02".to_vec()));
    files.push(("flat.pgm".into(), encode_pnm(&ImageBuffer::from_fn(120, 120, |_, _| 128))));
    // linear ramp: zero Laplacian, wide spread of values
    files.push(("gradient.pgm".into(), encode_pnm(&ImageBuffer::from_fn(120, 120, |x, _| (x * 2) as u8))));
    files.push((
        "checker.pgm".into(),
        encode_pnm(&ImageBuffer::from_fn(120, 120, |x, y| if (x + y) % 2 == 0 { 0 } else { 255 })),
    ));
    for (name, bytes) in files {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn clean_caption(rng: &mut impl Rng, spec: &SynthSpec) -> String {
    let n = rng.random_range(6..=12);
    let mut words: Vec<&str> = NOUNS.choose_multiple(rng, n).copied().collect();
    if rng.random_bool(spec.traditional_share) {
        let (trad, simp) = TRADITIONAL[rng.random_range(0..TRADITIONAL.len())];
        match words.iter().position(|w| *w == simp) {
            Some(i) => words[i] = trad,
            None => words.push(trad),
        }
    }
    let mut s = words.join(" ");
    if rng.random_bool(spec.emoji_share) {
        s.push_str(DECOR[rng.random_range(0..DECOR.len())]);
    }
    s
}

fn fault_caption(fault: Fault, rng: &mut impl Rng, spec: &SynthSpec) -> String {
    match fault {
        Fault::NotChinese => "a quiet street with lights at night".into(),
        Fault::TooShort => "城市 夜景".into(),
        Fault::TooLong => NOUNS.iter().cycle().take(61).copied().collect::<Vec<_>>().join(" "),
        Fault::MixedLanguage => "城市 night street lights photo".into(),
        Fault::StopWords => STOP.into(),
        Fault::NoNoun => VERBS.join(" "),
        Fault::Unk => format!("城市 夜景 {}", ('\u{20000}'..='\u{20005}').collect::<String>()),
        Fault::RepeatedToken => "猫 猫 猫 猫 猫 猫".into(),
        _ => clean_caption(rng, spec),
    }
}

fn random_unit(rng: &mut impl RngCore, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| uniform_signed(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random unit vector orthogonal to unit `v`.
fn orthogonal_unit(rng: &mut impl RngCore, v: &[f64]) -> Vec<f64> {
    loop {
        let r = random_unit(rng, v.len());
        let d: f64 = r.iter().zip(v).map(|(a, b)| a * b).sum();
        let p: Vec<f64> = r.iter().zip(v).map(|(a, b)| a - d * b).collect();
        let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return p.into_iter().map(|x| x / n).collect();
        }
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Image-text cosine inside, below and above the default band.
pub const COS_IN_BAND: f64 = 0.33;
pub const COS_BELOW_BAND: f64 = 0.6;
pub const COS_ABOVE_BAND: f64 = 0.0;
/// Perturbation size for near-duplicates: cosine distance about 0.005.
pub const DUP_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Fault(Fault),
    Clean,
}

/// Writes a corpus into `dir` and returns its ground truth.
pub fn generate(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<Synthesized> {
    let dir = dir.as_ref();
    let n = spec.records;
    let b = spec.batches.max(1) as usize;
    let single = Fault::ALL.len() * spec.per_fault;
    let group_extra: usize = (0..spec.dup_groups).map(|g| 1 + g % 2).sum();
    let needed = single + spec.dup_groups + group_extra + 2 * spec.cross_pairs;
    if needed + b > n {
        return Err(Error::Argument(format!("{n} records cannot hold {needed} planted cases")));
    }
    if spec.dim < 2 {
        return Err(Error::Argument("dim must be >= 2".into()));
    }
    if spec.cross_pairs > 0 && b < 2 {
        return Err(Error::Argument("cross-batch pairs need at least two batches".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // ids and batches: contiguous, near-equal batch sizes
    let batch_of: Vec<usize> = (0..b).flat_map(|k| std::iter::repeat_n(k, n / b + usize::from(k < n % b))).collect();
    let ids: Vec<String> = (0..n).map(|i| format!("b{}-{i:05}", batch_of[i])).collect();

    // per-record faults scattered over the corpus; alignment faults are
    // placed below together with the duplicate plants
    let mut roles = vec![Role::Clean; n];
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);
    let mut next = 0;
    for f in Fault::ALL {
        if matches!(f, Fault::AlignLow | Fault::AlignHigh) {
            continue;
        }
        for _ in 0..spec.per_fault {
            roles[slots[next]] = Role::Fault(f);
            next += 1;
        }
    }
    let mut free: Vec<Vec<usize>> = vec![Vec::new(); b];
    for &i in &slots[next..] {
        free[batch_of[i]].push(i);
    }
    let mut take = |k: usize| -> Result<usize> {
        free[k]
            .pop()
            .ok_or_else(|| Error::Argument(format!("batch {k} has no clean records left to plant")))
    };

    // duplicate plants: member -> base it perturbs
    let mut dup_of: Vec<Option<usize>> = vec![None; n];
    let mut redundant = 0u64;
    for g in 0..spec.dup_groups {
        let k = g % b;
        let base = take(k)?;
        for _ in 0..1 + g % 2 {
            dup_of[take(k)?] = Some(base);
            redundant += 1;
        }
    }
    for p in 0..spec.cross_pairs {
        let base = take(p % b)?;
        dup_of[take((p + 1) % b)?] = Some(base);
    }
    for f in [Fault::AlignLow, Fault::AlignHigh] {
        for j in 0..spec.per_fault {
            roles[take(j % b)?] = Role::Fault(f);
        }
    }

    // captions and image refs
    let mut records: Vec<Vec<Record>> = vec![Vec::new(); b];
    let mut scores: [Vec<String>; 4] = Default::default();
    for i in 0..n {
        let fault = match roles[i] {
            Role::Fault(f) => Some(f),
            Role::Clean => None,
        };
        let text = match fault {
            Some(f) if !f.needs_clean_caption() => fault_caption(f, &mut rng, spec),
            _ => clean_caption(&mut rng, spec),
        };
        let url = match fault {
            Some(Fault::Blacklisted) => format!("http://cdn.{BLACKLISTED}/{i}.jpg"),
            _ => format!("http://img{}.site{}.com/{i}.jpg", i % 5, i % 37),
        };
        let slot = match fault {
            Some(Fault::SourceUnsafe) => Some(0),
            Some(Fault::TextUnsafe) => Some(1),
            Some(Fault::LowTextual) => Some(2),
            Some(Fault::ImageUnsafe) => Some(3),
            _ => None,
        };
        if let Some(s) = slot {
            scores[s].push(format!("{}\t0.9", ids[i]));
        } else if i % 11 == 0 {
            // scored but safe
            for s in &mut scores {
                s.push(format!("{}\t0.1", ids[i]));
            }
        }
        let k = batch_of[i];
        records[k].push(Record::new(&ids[i], url, text, image_ref(fault, i), k as u32));
    }

    // embeddings
    let mut store = EmbeddingStore::new(spec.dim);
    let mut image_vecs: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| random_unit(&mut seeded_rng(spec.seed, id, Modality::Image), spec.dim))
        .collect();
    // bases are never members themselves
    for (i, id) in ids.iter().enumerate() {
        if let Some(base) = dup_of[i] {
            let v = &image_vecs[base];
            let u = orthogonal_unit(&mut seeded_rng(spec.seed, id, Modality::Image), v);
            image_vecs[i] = v.iter().zip(&u).map(|(a, b)| a + DUP_NOISE * b).collect();
        }
    }
    for (i, id) in ids.iter().enumerate() {
        let v = &image_vecs[i];
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let c = match roles[i] {
            Role::Fault(Fault::AlignLow) => COS_BELOW_BAND,
            Role::Fault(Fault::AlignHigh) => COS_ABOVE_BAND,
            _ => COS_IN_BAND,
        };
        let w = orthogonal_unit(&mut seeded_rng(spec.seed, id, Modality::Text), &v);
        let s = (1.0 - c * c).sqrt();
        let t: Vec<f64> = v.iter().zip(&w).map(|(a, b)| c * a + s * b).collect();
        store.insert(id, Modality::Image, &to_f32(&v))?;
        store.insert(id, Modality::Text, &to_f32(&t))?;
    }

    // files
    write_image_pool(&dir.join("images"), spec.seed)?;
    let score_dir = dir.join("scores");
    fs::create_dir_all(&score_dir).map_err(|e| Error::io(&score_dir, e))?;
    let names = ["source_safety.tsv", "text_safety.tsv", "low_textual.tsv", "image_safety.tsv"];
    for (name, lines) in names.iter().zip(&scores) {
        let p = score_dir.join(name);
        fs::write(&p, lines.join("\n") + "\n").map_err(|e| Error::io(&p, e))?;
    }
    let bl = dir.join("blacklist.txt");
    fs::write(&bl, format!("# planted\n{BLACKLISTED}\n")).map_err(|e| Error::io(&bl, e))?;
    write_embeddings(&store, dir.join("embeddings.dqem"))?;

    let mut cfg = FilterConfig {
        blacklist_file: Some("blacklist.txt".into()),
        ..FilterConfig::default()
    };
    let file = |name: &str| ScorerPort::ScoreFile {
        path: PathBuf::from("scores").join(name),
    };
    cfg.ports.source_safety = file(names[0]);
    cfg.ports.text_safety = file(names[1]);
    cfg.ports.low_textual = file(names[2]);
    cfg.ports.image_safety = file(names[3]);
    cfg.ports.decoder = DecoderBinding::Pnm { root: "images".into() };
    cfg.ports.embeddings = Some(EmbeddingBinding::File {
        path: "embeddings.dqem".into(),
    });
    let config_path = dir.join("config.toml");
    fs::write(&config_path, cfg.to_toml()).map_err(|e| Error::io(&config_path, e))?;

    let mut manifests = Vec::with_capacity(b);
    let mut manifest_paths = Vec::with_capacity(b);
    for (k, recs) in records.into_iter().enumerate() {
        let m = Manifest::new(k as u32, recs)?;
        let p = dir.join(format!("batch-{k}.jsonl"));
        write_manifest(&m, &p)?;
        manifests.push(m);
        manifest_paths.push(p);
    }

    let truth = SynthTruth {
        initial: n as u64,
        rows: report_rows()
            .into_iter()
            .map(|(stage, substep)| {
                let rejections = if (stage, substep) == DOWNLOAD_ROW {
                    None
                } else if (stage, substep) == REDUNDANCY_ROW {
                    Some(redundant)
                } else if (stage, substep) == CROSS_BATCH_ROW {
                    Some(spec.cross_pairs as u64)
                } else {
                    let faults = Fault::ALL.iter().filter(|f| f.row() == (stage, substep)).count();
                    Some((faults * spec.per_fault) as u64)
                };
                TruthRow {
                    stage: stage.into(),
                    substep: substep.into(),
                    rejections,
                }
            })
            .collect(),
    };
    let tp = dir.join("truth.json");
    let json = serde_json::to_string_pretty(&truth).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&tp, json + "\n").map_err(|e| Error::io(&tp, e))?;
    Ok(Synthesized {
        dir: dir.to_path_buf(),
        config_path,
        manifest_paths,
        manifests,
        truth,
    })
}
