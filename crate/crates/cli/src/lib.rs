//! `sonify`: batch workflows over an embedding store.
//!
//! Every subcommand writes a versioned JSON report to `--out` (or to
//! standard output when `--out` is absent) and a short human summary.
//! Exit status is 0 on success, 1 for invalid input and 2 for failures
//! while doing the work.

mod commands;
mod config;

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use sonify_core::eval::Component;
use sonify_core::metrics::DistanceKind;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sonify",
    version,
    about = "Image-guided sonification in a shared embedding space"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    /// JSON-lines asset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// EMB1 embedding archive.
    #[arg(long)]
    pub archive: PathBuf,
    /// Keep stored vectors as they are instead of scaling them to unit norm.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Report path. Without it the report goes to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Omit `generated_at` so identical inputs give identical reports.
    #[arg(long)]
    pub no_timestamp: bool,
    /// TOML run configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a manifest and archive and summarize the store.
    Ingest {
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Generate a synthetic manifest and archive.
    Synth {
        /// Manifest to write.
        #[arg(long)]
        manifest: PathBuf,
        /// Archive to write.
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        frames_per_scene: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Rank library audio for frames by embedding distance.
    Rank {
        #[command(flatten)]
        store: StoreArgs,
        /// Comma-separated frame ids; every frame when omitted.
        #[arg(long, value_delimiter = ',')]
        frames: Vec<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        distance: Option<DistanceKind>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Caption a frame, generate audio per caption, encode and rank.
    Sonorize2 {
        /// Manifest holding the frame record.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        frame: String,
        /// TOML with [captioner], [audio_generator] and [encoder] tables.
        #[arg(long)]
        adapters: PathBuf,
        /// Directory for adapter inputs, outputs and logs.
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        /// Archive with the reference pair; enables distance-to-target ranking.
        #[arg(long, requires_all = ["reference_frame", "reference_audio"])]
        archive: Option<PathBuf>,
        #[arg(long, requires = "archive")]
        reference_frame: Option<String>,
        #[arg(long, requires = "archive")]
        reference_audio: Option<String>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        distance: Option<DistanceKind>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Inconsistency of every (frame, caption, audio) sibling triple.
    Inc {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long, value_delimiter = ',')]
        frames: Vec<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Related/unrelated distance statistics to projected audio targets.
    SlerpEval {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        distance: Option<DistanceKind>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Histograms of the inconsistency components.
    Hist {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        bins: Option<usize>,
        /// d_image_text, d_image_audio or inc; all three when omitted.
        #[arg(long)]
        component: Vec<Component>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Aggregate MOS ratings per scene or per pair.
    Mos {
        #[arg(long)]
        ratings: PathBuf,
        /// Needed to group by scene; groups by pair without it.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Correlate an objective metric with MOS ratings.
    Correlate {
        #[arg(long)]
        ratings: PathBuf,
        /// A rank/sonorize2/inc report, or a CSV with frame_id,audio_id,value.
        #[arg(long)]
        metrics: PathBuf,
        /// Treat every rating as its own point instead of averaging per pair.
        #[arg(long)]
        independent: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the rating service.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ratings: PathBuf,
        /// Session journal; defaults to the ratings path with `.journal.jsonl`.
        #[arg(long)]
        journal: Option<PathBuf>,
        /// Directory served under /media/.
        #[arg(long)]
        media_root: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
