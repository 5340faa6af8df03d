//! `dq analyze`: one metric per call, CSV on stdout or `--output`, summary
//! figures on stderr.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use dq_core::analyze::{
    domain_frequency, kmeans_balance, length_resolution_stats, perplexity_stats, semantic_word_density,
    sigmoid_loss_probe, similarity_distribution, word_frequency, Histogram,
};
use dq_core::embed::{store_for, Modality};
use dq_core::{FilterConfig, Ports, Record};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Lengths,
    Density,
    Ppl,
    Balance,
    Similarity,
    LossProbe,
    Wordfreq,
    Domains,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    metric: Metric,
    /// Manifest files, or directories of `*.jsonl` manifests.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// lengths: also decode images for resolution histograms.
    #[arg(long)]
    resolution: bool,
    /// wordfreq: drop stop-words.
    #[arg(long)]
    exclude_stopwords: bool,
    /// wordfreq, domains: rows to emit (config `analysis.top_n` by default).
    #[arg(long)]
    top_n: Option<usize>,
    /// loss-probe: temperature.
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// loss-probe: logit bias.
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    bias: f64,
    /// loss-probe: records per batch.
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
}

type Rows = Vec<Vec<String>>;

fn histogram_rows(series: Option<&str>, h: &Histogram) -> Rows {
    h.counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut row: Vec<String> = series.map(String::from).into_iter().collect();
            row.extend([h.bin_edges[i].to_string(), h.bin_edges[i + 1].to_string(), c.to_string()]);
            row
        })
        .collect()
}

fn fraction(f: Option<f64>) -> String {
    f.map_or_else(|| "n/a".into(), |f| format!("{f:.4}"))
}

fn compute(args: &AnalyzeArgs, cfg: &FilterConfig, records: &[Record]) -> Result<(Vec<&'static str>, Rows)> {
    let a = &cfg.analysis;
    let hist_header = vec!["bin_lo", "bin_hi", "count"];
    let top_n = args.top_n.unwrap_or(a.top_n);
    let ports = || Ports::from_config(cfg);
    let store = || -> Result<_> {
        let binding = cfg.ports.embeddings.as_ref().context("this metric needs ports.embeddings in the config")?;
        Ok(store_for(binding, records)?)
    };
    Ok(match args.metric {
        Metric::Lengths => {
            let p = ports()?;
            let decoder = args.resolution.then_some(p.decoder.as_ref());
            let s = length_resolution_stats(records, p.tokenizer.as_ref(), decoder, a)?;
            eprintln!("records {}, words {}, mean words {:.2}", records.len(), s.total_words, s.mean_words);
            let mut rows = histogram_rows(Some("words"), &s.words);
            if args.resolution {
                eprintln!("decode failures {}", s.decode_failures);
                rows.extend(histogram_rows(Some("width"), &s.width));
                rows.extend(histogram_rows(Some("height"), &s.height));
                rows.extend(histogram_rows(Some("min_edge"), &s.min_edge));
            }
            (vec!["series", "bin_lo", "bin_hi", "count"], rows)
        }
        Metric::Density => {
            let p = ports()?;
            let h = semantic_word_density(records, p.tokenizer.as_ref(), a.density_bins)?;
            (hist_header, histogram_rows(None, &h))
        }
        Metric::Ppl => {
            let p = ports()?;
            let s = perplexity_stats(records, p.perplexity.as_ref(), a.perplexity_bins, a.perplexity_band)?;
            eprintln!(
                "in band [{}, {}]: {}; unscored {}",
                a.perplexity_band[0],
                a.perplexity_band[1],
                fraction(s.band_fraction),
                s.unscored
            );
            (hist_header, histogram_rows(None, &s.histogram))
        }
        Metric::Balance => {
            let store = store()?;
            let ids: Vec<&str> = records
                .iter()
                .map(|r| r.id.as_str())
                .filter(|id| store.contains(id, Modality::Image))
                .collect();
            let k = a.kmeans_k.min(ids.len());
            if k == 0 {
                bail!("no records with image embeddings");
            }
            let b = kmeans_balance(&store, &ids, k, a.kmeans_iters, a.kmeans_seed)?;
            eprintln!("k {k}, gini {:.4}", b.gini);
            let rows = b
                .cluster_sizes
                .iter()
                .enumerate()
                .map(|(i, s)| vec![(i + 1).to_string(), s.to_string()])
                .collect();
            (vec!["rank", "size"], rows)
        }
        Metric::Similarity => {
            let s = similarity_distribution(records, &store()?, a.similarity_bins, a.similarity_threshold);
            eprintln!(
                "above {}: {}; missing {}",
                a.similarity_threshold,
                fraction(s.above_fraction),
                s.missing
            );
            (hist_header, histogram_rows(None, &s.histogram))
        }
        Metric::LossProbe => {
            let store = store()?;
            let pairs: Vec<(&[f64], &[f64])> = records
                .iter()
                .filter_map(|r| Some((store.unit(&r.id, Modality::Image)?, store.unit(&r.id, Modality::Text)?)))
                .collect();
            let mut rows = Vec::new();
            for (b, chunk) in pairs.chunks(args.batch_size.max(1)).enumerate() {
                let (img, txt): (Vec<&[f64]>, Vec<&[f64]>) = chunk.iter().copied().unzip();
                let loss = sigmoid_loss_probe(&img, &txt, args.tau, args.bias)?;
                let n = chunk.len() as f64;
                rows.push(vec![b.to_string(), chunk.len().to_string(), loss.to_string(), (loss / (n * n)).to_string()]);
            }
            eprintln!("{} pair(s) in {} batch(es)", pairs.len(), rows.len());
            (vec!["batch", "size", "loss", "mean_loss"], rows)
        }
        Metric::Wordfreq => {
            let p = ports()?;
            let stop = args.exclude_stopwords.then_some(&p.stopwords);
            let rows = word_frequency(records, p.tokenizer.as_ref(), top_n, stop)?
                .into_iter()
                .map(|(w, c)| vec![w, c.to_string()])
                .collect();
            (vec!["word", "count"], rows)
        }
        Metric::Domains => {
            let rows = domain_frequency(records, top_n)
                .into_iter()
                .map(|d| vec![d.domain, d.count.to_string(), d.pct.to_string()])
                .collect();
            (vec!["domain", "count", "pct"], rows)
        }
    })
}

fn write_csv(w: impl Write, header: &[&str], rows: &Rows) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header)?;
    for r in rows {
        wr.write_record(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn run(args: &AnalyzeArgs, cfg: &FilterConfig) -> Result<()> {
    let records: Vec<Record> = crate::load_inputs(&args.input)?
        .into_iter()
        .flat_map(|m| m.records)
        .collect();
    let (header, rows) = compute(args, cfg, &records)?;
    match &args.output {
        Some(p) => {
            let f = File::create(p).map_err(|source| dq_core::Error::Io { path: p.clone(), source })?;
            write_csv(f, &header, &rows)
        }
        None => write_csv(std::io::stdout().lock(), &header, &rows),
    }
}
