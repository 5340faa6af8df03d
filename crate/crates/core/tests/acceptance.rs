//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use dq_core::analyze::sigmoid_loss_probe;
use dq_core::config::validate_config;
use dq_core::crossmodal::{band_filter, score_alignment, AlignmentScore, Band, BandVerdict};
use dq_core::dedup::{cluster_duplicates, find_duplicate_pairs, run_dedup_stage, select_representatives, DedupScope};
use dq_core::embed::{cosine_distance, l2_distance, l2_to_cosine, normalize, EmbeddingStore, EmbeddingVector, Modality};
use dq_core::image::{check_entropy, check_flat, check_geometry, check_sharpness, image_entropy, laplacian_variance, pixel_std, Geometry, ImageBuffer};
use dq_core::pipeline::{run_pipeline, RunOptions};
use dq_core::report::build_stage_report;
use dq_core::source::run_source_stage;
use dq_core::stage::with_workers;
use dq_core::synth::{generate, SynthSpec, Synthesized};
use dq_core::text::{check_token_quality, check_word_length, run_text_stage, strip_noise, text_entropy, to_simplified, EntropyMode};
use dq_core::{Error, FilterConfig, Ports, Record};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// (substep, left, total %, stage %, left %). Stage % is None for the three
// printed cells that disagree with the printed counts: the merged source
// row and download row show left shares (69.37, 67.29), and visual content
// safety shows 3.25 where its counts give 3.99.
const TABLE: &[(&str, u64, &str, Option<&str>, &str)] = &[
    ("Language Control / Content Safety / Source Reliability", 726_334_674, "30.63", None, "69.37"),
    ("Text Constraints", 706_069_936, "32.57", Some("2.79"), "67.43"),
    ("Download Success", 475_104_485, "54.63", None, "45.37"),
    ("CN-Detect", 467_455_303, "55.36", Some("1.61"), "44.64"),
    ("Font conversion", 467_455_303, "55.36", Some("0.00"), "44.64"),
    ("Stop words", 442_680_171, "57.72", Some("5.30"), "42.28"),
    ("Nouns", 431_878_774, "58.75", Some("2.44"), "41.25"),
    ("[UNK]", 431_619_647, "58.78", Some("0.06"), "41.22"),
    ("Entropy", 400_068_251, "61.79", Some("7.31"), "38.21"),
    ("Emoji&special chars", 400_068_251, "61.79", Some("0.00"), "38.21"),
    ("Text Content Safety", 397_187_759, "62.07", Some("0.72"), "37.93"),
    ("Visual Fidelity", 352_663_012, "66.32", Some("11.21"), "33.68"),
    ("Low-textual images", 352_204_550, "66.36", Some("0.13"), "33.64"),
    ("Blurry images", 333_255_945, "68.17", Some("5.38"), "31.83"),
    ("Information Density", 316_359_868, "69.79", Some("5.07"), "30.21"),
    ("Perceptual and Semantic Redundancy", 186_019_602, "82.23", Some("41.20"), "17.77"),
    ("Visual Content Safety", 178_601_215, "82.94", None, "17.06"),
    ("Cross-Modal Alignment Assessment", 154_293_590, "85.26", Some("13.61"), "14.74"),
    ("Cross-Batch Redundancy Removal", 99_892_381, "90.46", Some("35.26"), "9.54"),
];

fn pct_close(got: Option<dq_core::report::Percent>, want: &str) -> bool {
    let want: f64 = want.parse().unwrap();
    got.is_some_and(|p| (p.as_f64() - want).abs() <= 0.01 + 1e-9)
}

fn c1_report_arithmetic() -> Check {
    let counts: Vec<(&str, &str, u64)> = TABLE.iter().map(|&(s, n, ..)| ("table", s, n)).collect();
    let rows = build_stage_report(&counts, 1_047_085_609).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (row, &(name, _, total, stage, left)) in rows.iter().zip(TABLE) {
        ensure(pct_close(row.total_filter_pct(), total), || {
            format!("{name}: total {:?} vs {total}", row.total_filter_pct())
        })?;
        ensure(pct_close(row.left_pct(), left), || format!("{name}: left {:?} vs {left}", row.left_pct()))?;
        checked += 2;
        if let Some(stage) = stage {
            ensure(pct_close(row.stage_filter_pct(), stage), || {
                format!("{name}: stage {:?} vs {stage}", row.stage_filter_pct())
            })?;
            checked += 1;
        }
    }
    let last = rows.last().unwrap();
    ensure(
        last.total_filter_pct().unwrap().to_string() == "90.46" && last.left_pct().unwrap().to_string() == "9.54",
        || "final row".into(),
    )?;
    Ok(format!("{checked} printed percentages reproduced"))
}

fn close(a: f64, b: f64) -> bool {
    rel_close(a, b, 1e-9) || (a - b).abs() < 1e-12
}

fn random_image(r: &mut impl Rng, w: u32, h: u32) -> ImageBuffer {
    let levels = r.random_range(1..=256u32);
    let data = (0..w * h).map(|_| r.random_range(0..levels) as u8).collect();
    ImageBuffer::gray(w, h, data).unwrap()
}

fn c2_formula_oracles() -> Check {
    let mut r = rng(2002);
    let n = 200;
    for i in 0..n {
        let vocab = r.random_range(1..30);
        let len = r.random_range(1..80);
        let tokens: Vec<String> = (0..len).map(|_| format!("t{}", r.random_range(0..vocab))).collect();
        let h = text_entropy(&tokens, EntropyMode::Intra, None).map_err(|e| e.to_string())?;
        ensure(close(h, entropy_oracle(&tokens)), || format!("text_entropy #{i}"))?;

        let (w, ht) = (r.random_range(3..64), r.random_range(3..64));
        let img = random_image(&mut r, w, ht);
        ensure(close(image_entropy(&img), image_entropy_oracle(img.data())), || format!("image_entropy #{i}"))?;
        ensure(close(pixel_std(&img), std_oracle(img.data())), || format!("pixel_std #{i}"))?;
        let lap = laplacian_variance(&img).map_err(|e| e.to_string())?;
        ensure(close(lap, laplacian_oracle(w as usize, ht as usize, img.data())), || {
            format!("laplacian_variance #{i}")
        })?;

        let dim = r.random_range(2..64);
        let (a, b) = (random_unit(&mut r, dim), random_unit(&mut r, dim));
        ensure(close(cosine_distance(&a, &b).unwrap(), 1.0 - dot_oracle(&a, &b)), || format!("cosine #{i}"))?;
        ensure(close(l2_distance(&a, &b).unwrap(), l2_oracle(&a, &b)), || format!("l2 #{i}"))?;

        let batch = r.random_range(1..8);
        let img: Vec<Vec<f64>> = (0..batch).map(|_| random_unit(&mut r, dim)).collect();
        let txt: Vec<Vec<f64>> = (0..batch).map(|_| random_unit(&mut r, dim)).collect();
        let (tau, bias) = (r.random_range(0.05..2.0), r.random_range(-10.0..10.0));
        let got = sigmoid_loss_probe(&img, &txt, tau, bias).map_err(|e| e.to_string())?;
        ensure(close(got, sigmoid_loss_oracle(&img, &txt, tau, bias)), || format!("sigmoid loss #{i}"))?;
    }
    Ok(format!("7 formulas x {n} instances"))
}

fn store_of(vs: &[Vec<f64>]) -> (EmbeddingStore, Vec<String>) {
    let mut s = EmbeddingStore::new(vs[0].len());
    let ids: Vec<String> = (0..vs.len()).map(|i| format!("v{i:04}")).collect();
    for (id, v) in ids.iter().zip(vs) {
        let f: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        s.insert(id, Modality::Image, &f).unwrap();
    }
    (s, ids)
}

fn as_index_sets(sets: &[Vec<String>], n: usize) -> Vec<Vec<usize>> {
    let mut covered = vec![false; n];
    let mut out: Vec<Vec<usize>> = sets
        .iter()
        .map(|s| {
            let mut v: Vec<usize> = s.iter().map(|id| id[1..].parse().unwrap()).collect();
            v.sort_unstable();
            v.iter().for_each(|&i| covered[i] = true);
            v
        })
        .collect();
    // singletons, so both sides list every vector once
    out.extend((0..n).filter(|&i| !covered[i]).map(|i| vec![i]));
    out.sort();
    out
}

fn c3_dedup_oracle() -> Check {
    let mut r = rng(3003);
    let mut nontrivial = 0;
    for inst in 0..200 {
        let n = r.random_range(2..=1000);
        let dim = r.random_range(4..24);
        let (store, ids) = store_of(&clustered_vectors(&mut r, n, dim));
        let pairs = find_duplicate_pairs(&store, &ids, 0.1).map_err(|e| e.to_string())?;
        let sets = cluster_duplicates(&pairs, &ids).map_err(|e| e.to_string())?;
        let units: Vec<&[f64]> = ids.iter().map(|id| store.unit(id, Modality::Image).unwrap()).collect();
        let want = components_oracle(&units, 0.1);
        ensure(as_index_sets(&sets, n) == want, || format!("instance {inst}: components differ (n = {n})"))?;
        nontrivial += want.iter().filter(|c| c.len() > 1).count();

        if inst % 20 == 0 {
            let base = with_workers(1, || select_representatives(&sets, &store)).unwrap().unwrap();
            for w in [2, 4] {
                let mut shuffled = ids.clone();
                shuffled.shuffle(&mut r);
                let sel = with_workers(w, || {
                    let p = find_duplicate_pairs(&store, &shuffled, 0.1)?;
                    let s = cluster_duplicates(&p, &shuffled)?;
                    select_representatives(&s, &store)
                })
                .unwrap()
                .map_err(|e| e.to_string())?;
                ensure(sel.kept == base.kept && sel.dropped == base.dropped, || {
                    format!("instance {inst}: selection changed at {w} workers")
                })?;
            }
        }
    }
    Ok(format!("200 instances, {nontrivial} duplicate sets"))
}

fn c4_band_algebra() -> Check {
    let band = Band::default();
    // independent conversion: cos = 1 - l2^2 / 2 for unit vectors
    let (lo, hi) = (1.0 - 1.24f64.powi(2) / 2.0, 1.0 - 1.06f64.powi(2) / 2.0);
    ensure((lo - 0.2312).abs() <= 1e-6 && (hi - 0.4382).abs() <= 1e-6, || format!("bounds {lo} {hi}"))?;
    ensure((l2_to_cosine(1.24) - lo).abs() <= 1e-12 && (l2_to_cosine(1.06) - hi).abs() <= 1e-12, || {
        "library conversion".into()
    })?;
    let mut r = rng(4004);
    let (mut kept, mut skipped) = (0, 0);
    for i in 0..10_000 {
        let dim = r.random_range(2..5);
        let (a, b) = (random_unit(&mut r, dim), random_unit(&mut r, dim));
        let c = dot_oracle(&a, &b);
        if (c - lo).abs() < 1e-9 || (c - hi).abs() < 1e-9 {
            skipped += 1;
            continue;
        }
        let by_l2 = band_filter(score_alignment("p", &a, &b).unwrap(), band).verdict == Some(BandVerdict::Keep);
        let by_cos = (lo..=hi).contains(&c);
        ensure(by_l2 == by_cos, || format!("pair {i}: l2 says {by_l2}, cosine {c} says {by_cos}"))?;
        kept += by_l2 as usize;
    }
    Ok(format!("10000 pairs agree ({kept} kept, {skipped} at the boundary skipped)"))
}

fn artifacts(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out.join("final"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    for f in ["report.csv", "report.txt", "rejected.jsonl"] {
        files.push((f.to_string(), std::fs::read(out.join(f)).unwrap()));
    }
    files.sort();
    files
}

fn run_synth(s: &Synthesized, out: &Path, workers: usize, opts: &RunOptions) -> dq_core::Result<dq_core::pipeline::RunSummary> {
    let mut cfg = validate_config(&s.config_path).map_err(|e| Error::Config(format!("{e:?}")))?;
    cfg.workers = workers;
    let ports = Ports::from_config(&cfg)?;
    run_pipeline(&cfg, &ports, &s.manifests, out, opts)
}

const TRANSFORMS: [&str; 2] = ["Linguistic Structure (Font conversion)", "Information Density (Emoji&special chars)"];

fn c5_end_to_end(s: &Synthesized, tmp: &Path) -> Check {
    let idle: Vec<&str> = s
        .truth
        .rows
        .iter()
        .filter(|r| r.rejections == Some(0) && !TRANSFORMS.contains(&r.substep.as_str()))
        .map(|r| r.substep.as_str())
        .collect();
    ensure(idle.is_empty(), || format!("substeps without a planted violation: {idle:?}"))?;

    let base_dir = tmp.join("w1");
    let sum = run_synth(s, &base_dir, 1, &RunOptions::default()).map_err(|e| e.to_string())?;
    let got: Vec<Option<u64>> = sum.report.rows.iter().map(|r| r.left_count()).collect();
    ensure(got == s.truth.expected_left(), || format!("left counts {got:?} vs {:?}", s.truth.expected_left()))?;
    ensure(sum.kept as u64 == s.truth.final_count(), || format!("final {} vs {}", sum.kept, s.truth.final_count()))?;
    let base = artifacts(&base_dir);
    for w in [4, 8] {
        let dir = tmp.join(format!("w{w}"));
        run_synth(s, &dir, w, &RunOptions::default()).map_err(|e| e.to_string())?;
        ensure(artifacts(&dir) == base, || format!("outputs differ at {w} workers"))?;
    }

    let dir = tmp.join("resumed");
    let cut = RunOptions {
        interrupt_after: Some(5),
        ..RunOptions::default()
    };
    match run_synth(s, &dir, 4, &cut) {
        Err(Error::Interrupted(_)) => {}
        other => return Err(format!("expected an interrupted run, got {:?}", other.map(|s| s.kept))),
    }
    let resume = RunOptions {
        resume: true,
        ..RunOptions::default()
    };
    run_synth(s, &dir, 2, &resume).map_err(|e| e.to_string())?;
    ensure(artifacts(&dir) == base, || "resumed outputs differ".into())?;
    Ok(format!(
        "{} records -> {} kept; identical at 1/4/8 workers and after resume",
        s.truth.initial, sum.kept
    ))
}

fn verdict_ok(v: &dq_core::verdict::FilterVerdict, keep: bool) -> bool {
    v.reason.is_none() == keep
}

fn c6_boundaries() -> Check {
    let ports = Ports::builtin(".");
    let cfg = FilterConfig::default();
    let nouns = ["城市", "夜景", "灯光", "街道", "建筑", "山脉", "湖泊", "森林", "天空", "云朵"];
    let caption = |n: usize| (0..n).map(|i| nouns[i % nouns.len()]).collect::<Vec<_>>().join(" ");
    for (n, keep) in [(4, false), (5, true), (60, true), (61, false)] {
        let v = check_word_length(&caption(n), ports.tokenizer.as_ref(), cfg.min_words, cfg.max_words).unwrap();
        ensure(verdict_ok(&v, keep), || format!("{n}-word caption"))?;
    }
    // supplementary-plane ideographs are outside the lexicon
    let rare = ['𠀀', '𠀁', '𠀂', '𠀃', '𠀄', '𠀅'];
    for (n, keep) in [(5, true), (6, false)] {
        let text = format!("城市{}", rare[..n].iter().collect::<String>());
        let v = check_token_quality(&text, ports.tokenizer.as_ref(), cfg.max_unk).unwrap();
        ensure(verdict_ok(&v, keep), || format!("{n} unknown tokens: {:?}", v.reason))?;
    }
    let band = Band::default();
    for (l2, keep) in [(1.06, true), (1.24, true), (1.0599, false), (1.2401, false)] {
        let s = AlignmentScore {
            record_id: "b".into(),
            l2,
            cosine: l2_to_cosine(l2),
            verdict: None,
        };
        ensure((band_filter(s, band).verdict == Some(BandVerdict::Keep)) == keep, || format!("l2 = {l2}"))?;
    }
    // one interior spike of height d on a flat 10x5 field: var = 20 d^2 / 50
    for (d, keep) in [(50u8, true), (49, false)] {
        let img = ImageBuffer::from_fn(10, 5, |x, y| if (x, y) == (4, 2) { 100 + d } else { 100 });
        let var = laplacian_variance(&img).unwrap();
        ensure(verdict_ok(&check_sharpness(&img, cfg.min_laplacian_var), keep), || format!("laplacian {var}"))?;
    }
    for (lo, hi, keep) in [(98u8, 102u8, true), (99, 101, false)] {
        let img = ImageBuffer::from_fn(8, 8, |x, _| if x % 2 == 0 { lo } else { hi });
        ensure(verdict_ok(&check_flat(&img, cfg.min_pixel_std), keep), || format!("std {}", pixel_std(&img)))?;
    }
    for (levels, keep) in [(8u32, true), (7, false)] {
        let img = ImageBuffer::from_fn(56, 8, |x, _| (x % levels * 30) as u8);
        ensure(verdict_ok(&check_entropy(&img, cfg.min_image_entropy), keep), || {
            format!("entropy {}", image_entropy(&img))
        })?;
    }
    let g = Geometry {
        min_ratio: cfg.min_aspect_ratio,
        max_ratio: cfg.max_aspect_ratio,
        min_edge: cfg.min_edge,
    };
    for (w, keep) in [(100, false), (101, true)] {
        ensure(verdict_ok(&check_geometry(w, 150, g), keep), || format!("min edge {w}"))?;
    }
    Ok("18 boundary fixtures".into())
}

fn ids(recs: &[Record]) -> Vec<&str> {
    recs.iter().map(|r| r.id.as_str()).collect()
}

fn is_subsequence(sub: &[&str], of: &[&str]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|o| o == s))
}

fn c7_properties(s: &Synthesized) -> Check {
    let mut r = rng(7007);
    for _ in 0..10 {
        let (store, vid) = store_of(&clustered_vectors(&mut r, 300, 8));
        let recs: Vec<Record> = vid.iter().map(|id| Record::new(id, "http://a.cn/", "t", "i", 0)).collect();
        let once = run_dedup_stage(recs.clone(), &store, 0.1, DedupScope::WithinBatch).map_err(|e| e.to_string())?;
        ensure(is_subsequence(&ids(&once.kept), &ids(&recs)), || "dedup output not a subset".into())?;
        let fresh: Vec<Record> = once.kept.iter().map(|k| Record::new(&k.id, "http://a.cn/", "t", "i", 0)).collect();
        let twice = run_dedup_stage(fresh, &store, 0.1, DedupScope::WithinBatch).map_err(|e| e.to_string())?;
        ensure(twice.dropped.is_empty(), || "dedup not idempotent".into())?;

        let mut last = usize::MAX;
        for beta in [0.01, 0.05, 0.1, 0.2, 0.4, 0.8] {
            let kept = run_dedup_stage(recs.clone(), &store, beta, DedupScope::WithinBatch).unwrap().kept.len();
            ensure(kept <= last, || format!("kept count rose at beta {beta}"))?;
            last = kept;
        }
    }

    let cfg = validate_config(&s.config_path).map_err(|e| format!("{e:?}"))?;
    let ports = Ports::from_config(&cfg).map_err(|e| e.to_string())?;
    for m in &s.manifests {
        let (src, _) = run_source_stage(m, &cfg, &ports).map_err(|e| e.to_string())?;
        ensure(is_subsequence(&ids(&src.records), &ids(&m.records)), || "source output not a subset".into())?;
        let mut clean = src.clone();
        clean.records.iter_mut().for_each(|r| r.verdicts.clear());
        let (txt, _) = run_text_stage(&clean, &cfg, &ports, false).map_err(|e| e.to_string())?;
        ensure(is_subsequence(&ids(&txt.records), &ids(&src.records)), || "text output not a subset".into())?;
    }

    for m in &s.manifests {
        for rec in &m.records {
            let once = strip_noise(&rec.text);
            ensure(strip_noise(&once) == once, || format!("strip_noise on {}", rec.id))?;
            let simp = to_simplified(&rec.text, ports.converter.as_ref());
            ensure(to_simplified(&simp, ports.converter.as_ref()) == simp, || format!("to_simplified on {}", rec.id))?;
        }
    }
    for _ in 0..500 {
        let dim = r.random_range(1..64);
        let v: Vec<f64> = (0..dim).map(|_| r.random_range(-5.0..5.0)).collect();
        let Ok(e) = EmbeddingVector::new("n", Modality::Text, v) else { continue };
        let Ok(u) = normalize(&e) else { continue };
        let uu = normalize(&u).unwrap();
        ensure(u.values.iter().zip(&uu.values).all(|(a, b)| (a - b).abs() <= 1e-15), || "normalize".into())?;
    }
    Ok("dedup idempotent and monotone, stages shrink, normalizers idempotent".into())
}

fn metrics(img: &ImageBuffer) -> f64 {
    pixel_std(img) + laplacian_variance(img).unwrap() + image_entropy(img)
}

fn c8_throughput() -> Check {
    let mut r = rng(8008);
    let imgs: Vec<ImageBuffer> = (0..64)
        .map(|_| ImageBuffer::gray(256, 256, (0..256 * 256).map(|_| r.random::<u8>()).collect()).unwrap())
        .collect();
    let rounds = 16;
    let rate = |workers: usize| -> f64 {
        with_workers(workers, || {
            let t = Instant::now();
            let mut sink = 0.0;
            for _ in 0..rounds {
                sink += imgs.par_iter().map(metrics).sum::<f64>();
            }
            std::hint::black_box(sink);
            (rounds * imgs.len()) as f64 / t.elapsed().as_secs_f64()
        })
        .unwrap()
    };
    let single = rate(1);
    let four = rate(4);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    ensure(single >= 500.0, || format!("{single:.0} img/s single-threaded"))?;
    let scaling = four / single;
    if cores >= 4 {
        ensure(scaling >= 3.0, || format!("{single:.0} img/s, only {scaling:.2}x at 4 workers"))?;
        Ok(format!("{single:.0} img/s single-threaded, {scaling:.2}x at 4 workers"))
    } else {
        Ok(format!(
            "{single:.0} img/s single-threaded; {scaling:.2}x at 4 workers on {cores} core(s), scaling UNVERIFIED"
        ))
    }
}

fn run(name: &str, limit: Duration, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let res = f();
    let took = t.elapsed();
    let res = res.and_then(|m| {
        if took <= limit {
            Ok(m)
        } else {
            Err(format!("{m}; took {took:.2?}, limit {limit:?}"))
        }
    });
    match &res {
        Ok(m) => println!("PASS {name} [{took:.2?}] {m}"),
        Err(m) => println!("FAIL {name} [{took:.2?}] {m}"),
    }
    res.is_ok()
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let synth = generate(&SynthSpec::default(), tmp.path().join("corpus")).expect("synthetic corpus");
    let secs = Duration::from_secs;
    let results = [
        run("1 report arithmetic", secs(1), c1_report_arithmetic),
        run("2 formula oracles", secs(10), c2_formula_oracles),
        run("3 dedup oracle equivalence", secs(60), c3_dedup_oracle),
        run("4 band algebra", secs(5), c4_band_algebra),
        run("5 end-to-end determinism", secs(300), || c5_end_to_end(&synth, tmp.path())),
        run("6 threshold boundaries", secs(10), c6_boundaries),
        run("7 idempotence and monotonicity", secs(60), || c7_properties(&synth)),
        run("8 throughput", secs(60), c8_throughput),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
