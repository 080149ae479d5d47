//! `dejavu`: déjà vu memorization audits from the command line.

mod commands;
mod error;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dejavu_core::SortKey;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "dejavu",
    version,
    about = "Measure déjà vu memorization in two-tower embedding models"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Master seed; a random one is drawn and recorded when omitted.
    #[arg(long, global = true, value_name = "S")]
    pub seed: Option<u64>,

    /// Suppress summaries on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an embedding file (and optionally its annotations) and print statistics.
    Ingest(IngestArgs),
    /// Caption and semantic deduplication, optionally followed by a disjoint split.
    Dedup(DedupArgs),
    /// Exact top-k cosine neighbors of every query among the public rows.
    Knn(KnnArgs),
    /// Population-level audit: PPG, PRG and AUCG with bootstrap spread.
    Audit(AuditArgs),
    /// Sample-level audit: gap curve over the most vulnerable records.
    SampleAudit(SampleAuditArgs),
    /// Train target and reference toy models on a synthetic corpus and audit them.
    TrainToy(TrainToyArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Embedding header file.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Annotation file whose IDs must cover the embeddings.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Fail unless every row can be normalized.
    #[arg(long)]
    pub check: bool,
    /// Also write the statistics as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    /// JSON lines of {"id": .., "caption": ..}.
    #[arg(long)]
    pub captions: PathBuf,
    /// Embeddings for semantic dedup of the caption-dedup survivors.
    #[arg(long, requires = "threshold")]
    pub embeddings: Option<PathBuf>,
    /// Cosine similarity at or above which a record counts as a duplicate.
    #[arg(long, requires = "embeddings", allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    /// Kept IDs, one per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Sizes of the disjoint A, B and public sets, e.g. 1000,1000,5000.
    #[arg(long, value_delimiter = ',', requires = "split_dir")]
    pub split: Option<Vec<usize>>,
    /// Directory receiving a.txt, b.txt, public.txt and split.json.
    #[arg(long, requires = "split")]
    pub split_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KnnArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub public: PathBuf,
    #[arg(short, long, default_value_t = dejavu_core::knn::DEFAULT_K)]
    pub k: usize,
    /// Output JSON lines; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Audit manifest (JSON).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Neighbors per caption (overrides the manifest).
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Score the m top-voted objects instead of the neighbor union.
    #[arg(long)]
    pub top_m: Option<usize>,
    /// Bootstrap repetitions (overrides the manifest).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Fraction of records drawn per bootstrap repetition.
    #[arg(long)]
    pub frac: Option<f64>,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// Per-record CSV; next to the report when omitted.
    #[arg(long)]
    pub per_record: Option<PathBuf>,
    /// Also write every neighbor set as JSON lines.
    #[arg(long)]
    pub neighbors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleAuditArgs {
    /// Audit manifest (JSON).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "min_dist", value_parser = parse_sort_key)]
    pub sort: SortKey,
    /// Strictly increasing list of L values.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
    pub grid: Vec<usize>,
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Objects predicted per record (manifest value, else 10).
    #[arg(long)]
    pub top_m: Option<usize>,
    #[arg(long, default_value = "curve.csv")]
    pub out: PathBuf,
    /// Ranked records with their scores as CSV.
    #[arg(long)]
    pub order: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; one subdirectory per grid point.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_sort_key(s: &str) -> Result<SortKey, String> {
    s.parse().map_err(|e: dejavu_core::Error| e.to_string())
}

/// Where a run's seed came from, recorded with its outputs.
#[derive(Debug, Clone, Copy)]
pub struct SeedChoice {
    pub value: u64,
    pub source: &'static str,
}

impl Cli {
    /// `--seed`, else `fallback` (e.g. from a manifest), else entropy.
    pub fn seed_or(&self, fallback: Option<u64>, fallback_source: &'static str) -> SeedChoice {
        match (self.seed, fallback) {
            (Some(value), _) => SeedChoice { value, source: "flag" },
            (None, Some(value)) => SeedChoice {
                value,
                source: fallback_source,
            },
            (None, None) => SeedChoice {
                value: rand::random(),
                source: "entropy",
            },
        }
    }

    pub fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Ingest(a) => commands::ingest::run(cli, a),
        Command::Dedup(a) => commands::dedup::run(cli, a),
        Command::Knn(a) => commands::knn::run(cli, a),
        Command::Audit(a) => commands::audit::run(cli, a),
        Command::SampleAudit(a) => commands::audit::run_sample(cli, a),
        Command::TrainToy(a) => commands::train_toy::run(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
