//! `itemgraph`: runs the retrieval pipeline stage by stage from one TOML config.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::{EvalFlags, RetrieveFlags, TailFlags};
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "itemgraph", version, about = "Item-to-item retrieval on a behavioral item graph")]
struct Cli {
    /// TOML run configuration; every section is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-cluster synthetic dataset under <out>/data.
    GenSynth,
    /// Build the training graph and the relaxed inference graph.
    BuildGraph {
        /// Direct click edges only.
        #[arg(long)]
        no_cf: bool,
    },
    /// Train the model; write the checkpoint, loss curve and seed embeddings.
    Train {
        /// Graph to train on instead of <out>/graph/train_graph.tsv.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Give every item in the feature store an embedding.
    InferTail {
        #[arg(long)]
        no_graph: bool,
        #[arg(long)]
        no_content: bool,
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact top-K cosine retrieval for every embedded item.
    Retrieve {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write Swing top-K lists from the training clicks as a baseline.
        #[arg(long)]
        swing: bool,
    },
    /// Link-prediction AUC and/or (tail) unique recall; both when neither flag is given.
    Evaluate {
        #[arg(long)]
        auc: bool,
        #[arg(long)]
        recall: bool,
        /// Retrieval lists to evaluate instead of <out>/retrieval/knn.tsv.
        #[arg(long)]
        retrieval: Option<PathBuf>,
        /// Baseline retrieval lists; repeatable.
        #[arg(long)]
        baseline: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    cfg.resolve();
    match cli.command {
        Command::GenSynth => commands::gen_synth(&cfg),
        Command::BuildGraph { no_cf } => {
            cfg.graph.use_cf &= !no_cf;
            commands::build_graphs(&cfg)
        }
        Command::Train { graph } => commands::train_cmd(&cfg, graph.as_deref()),
        Command::InferTail { no_graph, no_content, seeds, output } => commands::infer_tail(
            &cfg,
            &TailFlags { no_graph, no_content, seeds: seeds.as_deref(), output: output.as_deref() },
        ),
        Command::Retrieve { embeddings, output, swing } => commands::retrieve(
            &cfg,
            &RetrieveFlags { embeddings: embeddings.as_deref(), output: output.as_deref(), swing },
        ),
        Command::Evaluate { auc, recall, retrieval, baseline } => {
            commands::evaluate(&cfg, &EvalFlags { auc, recall, retrieval: retrieval.as_deref(), baselines: &baseline })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
