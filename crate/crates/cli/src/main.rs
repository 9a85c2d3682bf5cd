mod artifacts;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lmrec_core::compaction::CompactionMethod;
use lmrec_core::recognition::ScoringMethod;
use lmrec_core::ErrorClass;

#[derive(Parser)]
#[command(name = "lmrec", version, about = "Landmark object discovery and recognition pipeline")]
struct Cli {
    /// Pipeline configuration, TOML or JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for all artifacts.
    #[arg(long, global = true, default_value = "lmrec-run")]
    out: PathBuf,
    /// Overrides the seed of every stochastic stage.
    #[arg(long, global = true)]
    rng_seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, env = "LMREC_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Synthesize a dataset, queries and ground truth.
    Generate,
    /// Copy an existing dataset directory into the run.
    Ingest {
        /// Dataset directory; defaults to `data.path`.
        #[arg(long)]
        path: Option<PathBuf>,
    },
    /// Train the visual vocabulary.
    Vocab,
    /// Build the inverted index, or query it.
    Index(IndexArgs),
    /// Build the matching graph, or prune an existing one.
    Graph {
        /// Drop edges with fewer inliers from the stored graph.
        #[arg(long)]
        min_inliers: Option<usize>,
    },
    /// Discover object clusters.
    Cluster {
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Cluster with growing numbers of seeds.
    SeedsSweep,
    /// Reduce clusters to representative images.
    Compact(CompactArgs),
    /// Name clusters from user tags.
    Tags,
    /// Recognize query images.
    Recognize(RecognizeArgs),
    /// Evaluate recognition and naming.
    Evaluate(EvaluateArgs),
    /// Run every stage in order.
    EndToEnd,
}

#[derive(Args)]
pub struct IndexArgs {
    /// Print the ranking for this image id instead of building.
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}

#[derive(Args)]
pub struct CompactArgs {
    #[arg(long)]
    pub method: Option<CompactionMethod>,
    /// Inlier threshold, or radius for KVQ.
    #[arg(long)]
    pub threshold: Option<usize>,
    /// Also evaluate every configured method against random reductions.
    #[arg(long)]
    pub tradeoff: bool,
}

#[derive(Args)]
pub struct RecognizeArgs {
    #[arg(long)]
    pub method: Option<ScoringMethod>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Dataset directory of query images; defaults to the run's query set.
    pub queries: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub method: Option<ScoringMethod>,
    /// Cluster-level relevance ratings (`query_id,object_id,rating`).
    #[arg(long)]
    pub annotations: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<lmrec_core::Error>().map(lmrec_core::Error::class) {
        Some(ErrorClass::Validation) => 3,
        Some(ErrorClass::Format) => 4,
        Some(ErrorClass::Dependency) => 5,
        Some(ErrorClass::Io) => 6,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = stages::Context::new(cli.config.as_deref(), &cli.out, cli.rng_seed)
        .and_then(|mut ctx| ctx.run(&cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
