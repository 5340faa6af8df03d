//! `dq`: curate image-text corpora from the command line.

mod analyze;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dq_core::pipeline::{read_inputs, run_pipeline, run_stage, RunOptions, PLAN};
use dq_core::synth::{generate, SynthSpec};
use dq_core::{ConfigIssue, FilterConfig, Manifest, Ports, Report};

#[derive(Parser)]
#[command(name = "dq", version, about = "Filter, deduplicate and audit image-text corpora")]
struct Cli {
    /// TOML config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (overrides the config).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Records per checkpoint shard (overrides the config).
    #[arg(long, global = true)]
    shard_size: Option<usize>,
    /// Print the default config and exit.
    #[arg(long)]
    print_default_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Io {
    /// Manifest files, or directories of `*.jsonl` manifests.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write final manifests, rejections and the report.
    Run {
        #[command(flatten)]
        io: Io,
        /// Continue from checkpoints left by an interrupted run.
        #[arg(long)]
        resume: bool,
        /// Also write survivors after every stage.
        #[arg(long)]
        emit_intermediate: bool,
        /// Externally measured download success count for the report.
        #[arg(long)]
        download_count: Option<u64>,
    },
    /// Run one stage on its own.
    Stage {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PLAN))]
        name: String,
        #[command(flatten)]
        io: Io,
    },
    /// Verify a report CSV and print it as a table.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// Write the table here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Corpus diagnostics as CSV.
    Analyze(analyze::AnalyzeArgs),
    /// Generate a synthetic corpus with planted faults and its ground truth.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        records: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 7)]
        batches: u32,
    },
}

#[derive(Debug)]
struct ConfigErrors(Vec<ConfigIssue>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config")?;
        for i in &self.0 {
            write!(f, "\n  {i}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Exit {
    Failure = 1,
    Config = 2,
    Port = 3,
    Io = 4,
}

fn classify(err: &anyhow::Error) -> Exit {
    for cause in err.chain() {
        if cause.is::<ConfigErrors>() {
            return Exit::Config;
        }
        if let Some(e) = cause.downcast_ref::<dq_core::Error>() {
            return match e {
                dq_core::Error::Config(_) => Exit::Config,
                dq_core::Error::Port { .. } => Exit::Port,
                dq_core::Error::Io { .. } => Exit::Io,
                _ => Exit::Failure,
            };
        }
        if cause.is::<std::io::Error>() {
            return Exit::Io;
        }
    }
    Exit::Failure
}

fn load_config(cli: &Cli) -> Result<FilterConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|source| dq_core::Error::Io { path: path.clone(), source })?;
            let mut cfg = FilterConfig::parse(&text).map_err(ConfigErrors)?;
            cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
            cfg
        }
        None => FilterConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.shard_size {
        cfg.shard_size = s;
    }
    let issues = cfg.validate();
    if !issues.is_empty() {
        return Err(ConfigErrors(issues).into());
    }
    Ok(cfg)
}

fn manifest_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|source| dq_core::Error::Io { path: p.clone(), source })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no input manifests found");
    }
    Ok(out)
}

pub(crate) fn load_inputs(inputs: &[PathBuf]) -> Result<Vec<Manifest>> {
    let paths = manifest_paths(inputs)?;
    log::info!("reading {} manifest(s)", paths.len());
    Ok(read_inputs(&paths)?)
}

fn print_summary(report: &Report, kept: usize, rejected: usize, out: &Path) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    write!(stdout, "{}", report.render_table())?;
    writeln!(stdout, "kept {kept}, rejected {rejected}; artifacts in {}", out.display())?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    if cli.print_default_config {
        print!("{}", FilterConfig::default_toml());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        bail!("no command given; see `dq --help`");
    };
    match command {
        Command::Run {
            io,
            resume,
            emit_intermediate,
            download_count,
        } => {
            let cfg = load_config(cli)?;
            let ports = Ports::from_config(&cfg)?;
            let inputs = load_inputs(&io.input)?;
            let opts = RunOptions {
                resume: *resume,
                emit_intermediate: *emit_intermediate,
                download_count: *download_count,
                interrupt_after: None,
            };
            let sum = run_pipeline(&cfg, &ports, &inputs, &io.output, &opts)?;
            print_summary(&sum.report, sum.kept, sum.rejected, &io.output)
        }
        Command::Stage { name, io } => {
            let cfg = load_config(cli)?;
            let ports = Ports::from_config(&cfg)?;
            let inputs = load_inputs(&io.input)?;
            let sum = run_stage(name, &cfg, &ports, &inputs, &io.output)?;
            print_summary(&sum.report, sum.kept, sum.rejected, &io.output)
        }
        Command::Report { input, output } => {
            let file = fs::File::open(input).map_err(|source| dq_core::Error::Io {
                path: input.clone(),
                source,
            })?;
            let report = Report::from_csv_verified(file).with_context(|| format!("checking {}", input.display()))?;
            let table = report.render_table();
            match output {
                Some(p) => fs::write(p, table).map_err(|source| dq_core::Error::Io { path: p.clone(), source })?,
                None => print!("{table}"),
            }
            Ok(())
        }
        Command::Analyze(args) => {
            let cfg = load_config(cli)?;
            analyze::run(args, &cfg)
        }
        Command::Synth {
            output,
            records,
            seed,
            batches,
        } => {
            let spec = SynthSpec {
                seed: *seed,
                batches: *batches,
                ..SynthSpec::scaled(*records)
            };
            let s = generate(&spec, output)?;
            println!(
                "{} records in {} batch(es); expect {} kept. Config: {}",
                s.truth.initial,
                s.manifest_paths.len(),
                s.truth.final_count(),
                s.config_path.display()
            );
            Ok(())
        }
    }
}

/// The error chain joined with ": ", skipping causes already quoted by the
/// message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DQ_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(classify(&e) as u8)
        }
    }
}
