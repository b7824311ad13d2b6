mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_STAGE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "termscope", version, about = "Collect, classify and measure unfavorable financial terms on shopping websites")]
pub struct Cli {
    /// Corpus root directory.
    #[arg(long, global = true, env = "TERMSCOPE_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long, global = true, env = "TERMSCOPE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Seed for sampling and splits.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SiteListArgs {
    /// CSV site list (`rank,domain`, or one domain per line).
    #[arg(long)]
    pub input: PathBuf,
    /// Keep only the first N entries.
    #[arg(long)]
    pub top: Option<usize>,
    /// Website classification input: url_only, url_html or url_screenshot.
    #[arg(long)]
    pub mode: Option<String>,
    /// Source tag recorded on each website (tranco, fcw, flos, custom).
    #[arg(long, default_value = "custom")]
    pub source: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch homepages of a site list and classify them as shopping or not.
    Harvest(SiteListArgs),
    /// Classify stored homepages that have no verdict yet.
    ClassifySites {
        #[arg(long)]
        mode: Option<String>,
    },
    /// Find and fetch terms-and-conditions pages of English shopping sites.
    DiscoverTc,
    /// Split fetched terms pages into individual terms.
    Extract,
    /// Label terms with the financial and unfavorable passes.
    Classify {
        /// financial, unfavorable or both.
        #[arg(long, default_value = "both")]
        stage: String,
        /// Model identifier (overrides config).
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        financial_template: Option<PathBuf>,
    },
    /// Embed financial-positive terms and cluster them.
    Cluster {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        min_pts: Option<usize>,
        /// Output file (default: clusters.json in the corpus).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the topic induction loop with review.
    Topics {
        /// Starting template (default: seeded from the financial categories).
        #[arg(long)]
        template: Option<PathBuf>,
        /// Review proposals interactively on the terminal (the default).
        #[arg(long, conflicts_with_all = ["auto_accept", "script"])]
        review: bool,
        /// Accept every proposal without asking.
        #[arg(long, conflicts_with = "script")]
        auto_accept: bool,
        /// Replay review answers from a file, one per line.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        min_pts: Option<usize>,
        #[arg(long)]
        include_noise: bool,
        /// Also write the final template here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute corpus statistics.
    Measure {
        #[arg(long, default_value = "stats.json")]
        out: PathBuf,
        /// Directory for CDF and rank-bucket CSV series.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Compare binary predictions with gold labels.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Stratified fine-tuning / validation split of labeled terms.
    Split {
        /// JSONL of `{term_id, text, label}`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write fine-tuning records for one half of a split.
    ExportFinetune {
        /// Split JSON written by `split`, or JSONL of labeled terms.
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// fine_tuning or validation.
        #[arg(long, default_value = "fine_tuning")]
        part: String,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Serve the per-URL analysis API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Run every measurement stage, then write stats.json into the corpus.
    Run(SiteListArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("TERMSCOPE_LOG").unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(commands::CliError::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_STAGE)
        }
    }
}
