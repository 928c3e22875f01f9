//! Experiment runner for the word segmentation sampler.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime error.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::SweepGrids;
use config::CommonOpts;

#[derive(Parser)]
#[command(
    name = "wordseg",
    version,
    about = "Unsupervised word segmentation of phonemic transcripts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a corpus with the Gibbs sampler and score it against gold.
    Segment {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run a parameter grid (one row of metrics per run).
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated alpha0 values.
        #[arg(long)]
        alpha0_grid: Option<String>,
        /// Comma-separated p_hash values.
        #[arg(long)]
        p_hash_grid: Option<String>,
        /// Comma-separated alpha1 values.
        #[arg(long)]
        alpha1_grid: Option<String>,
        /// Runs per grid point, with seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Worker threads (default: one per CPU).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Start from gold boundaries, toggle k random positions, then sample.
    Perturb {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of random boundary toggles (with replacement).
        #[arg(long)]
        k: usize,
        /// Seed for the toggle positions (default: --seed).
        #[arg(long)]
        perturb_seed: Option<u64>,
    },
    /// Sample with a partial known vocabulary boosting its words.
    Vocab {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of gold word types to sample into the vocabulary.
        #[arg(long)]
        vocab_size: usize,
        /// Boost factor (a number, or "inf").
        #[arg(long, default_value = "1000")]
        boost: String,
        /// Seed for vocabulary sampling (default: --seed).
        #[arg(long)]
        vocab_seed: Option<u64>,
    },
    /// Forward-generate a synthetic corpus from either model.
    Generate {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of utterances to generate.
        #[arg(long, default_value_t = 100)]
        n_utterances: usize,
        /// Utterance-termination probability, or "prior" to draw it from
        /// the Beta prior.
        #[arg(long, default_value = "0.3")]
        p_dollar: String,
        /// Alphabet for a uniform phoneme distribution (default: a-z, or
        /// the --corpus distribution when one is given).
        #[arg(long)]
        alphabet: Option<String>,
    },
    /// Exact enumeration vs Gibbs marginals on a tiny corpus.
    Oracle {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Corpus statistics, phoneme distribution, and top gold words.
    Stats {
        #[command(flatten)]
        common: CommonOpts,
        /// How many top words to report.
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version print to stdout and exit 0; real usage
            // errors exit 1
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match &cli.command {
        Command::Segment { common } => commands::cmd_segment(common),
        Command::Sweep {
            common,
            alpha0_grid,
            p_hash_grid,
            alpha1_grid,
            seeds,
            jobs,
        } => commands::cmd_sweep(
            common,
            &SweepGrids {
                alpha0: alpha0_grid.clone(),
                p_hash: p_hash_grid.clone(),
                alpha1: alpha1_grid.clone(),
                seeds: *seeds,
                jobs: *jobs,
            },
        ),
        Command::Perturb {
            common,
            k,
            perturb_seed,
        } => commands::cmd_perturb(common, *k, *perturb_seed),
        Command::Vocab {
            common,
            vocab_size,
            boost,
            vocab_seed,
        } => commands::cmd_vocab(common, *vocab_size, boost, *vocab_seed),
        Command::Generate {
            common,
            n_utterances,
            p_dollar,
            alphabet,
        } => commands::cmd_generate(common, *n_utterances, p_dollar, alphabet.as_deref()),
        Command::Oracle { common } => commands::cmd_oracle(common),
        Command::Stats { common, top } => commands::cmd_stats(common, *top),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
