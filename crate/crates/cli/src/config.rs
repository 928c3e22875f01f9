//! Flag and config-file resolution.
//!
//! Every run setting can come from a command-line flag or a plain-text
//! `key=value` config file; flags override file values, and built-in
//! defaults fill the rest. The resolved settings are echoed verbatim into
//! each run's `manifest.json` so any output can be reproduced.

use anyhow::{anyhow, Context};
use clap::Args;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use wordseg::{AggregateMode, AnnealSchedule, Corpus, Model, ModelParams, PhonemeDist, VisitOrder};

/// Configuration and usage problems exit with code 1; failures during a
/// run exit with code 2.
#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Config(e) | CliError::Runtime(e) => format!("{e:#}"),
        }
    }
}

pub fn config_err<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Config(e.into())
}

pub fn runtime_err<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DistChoice {
    Uniform,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitChoice {
    Random,
    Gold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Unigram,
    Bigram,
}

impl std::fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelChoice::Unigram => write!(f, "unigram"),
            ModelChoice::Bigram => write!(f, "bigram"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateChoice {
    Final,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisitChoice {
    Sequential,
    RandomScan,
}

/// Flags shared by every experiment command. All optional so that a config
/// file can supply them; see [`Resolved`] for the defaults.
#[derive(Debug, Args, Clone, Default)]
pub struct CommonOpts {
    /// Plain-text config file with key=value lines (keys are these flag
    /// names); flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Generative model driving the sampler.
    #[arg(long, value_enum)]
    pub model: Option<ModelChoice>,
    /// Corpus file: one utterance per line, single-space word separators.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Use only the first N utterances.
    #[arg(long)]
    pub slice: Option<usize>,
    /// Word-level concentration.
    #[arg(long)]
    pub alpha0: Option<f64>,
    /// Bigram-level concentration (bigram model only).
    #[arg(long)]
    pub alpha1: Option<f64>,
    /// Word-final phoneme probability.
    #[arg(long)]
    pub p_hash: Option<f64>,
    /// Symmetric Beta parameter for the utterance-final prior.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Phoneme base distribution.
    #[arg(long, value_enum)]
    pub phoneme_dist: Option<DistChoice>,
    /// Burn-in iterations before sample collection.
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Sampling iterations after burn-in.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Collect one sample every this many sampling iterations.
    #[arg(long)]
    pub sample_every: Option<usize>,
    /// Starting temperature of the annealing schedule.
    #[arg(long)]
    pub gamma_max: Option<f64>,
    /// Number of temperature plateaus during burn-in.
    #[arg(long)]
    pub gamma_steps: Option<usize>,
    /// Master seed; every stochastic component derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// How collected samples become the reported segmentation.
    #[arg(long, value_enum)]
    pub aggregate: Option<AggregateChoice>,
    /// Boundary initialization.
    #[arg(long, value_enum)]
    pub init: Option<InitChoice>,
    /// Boundary rate for random initialization.
    #[arg(long)]
    pub p_init: Option<f64>,
    /// Site visit order within a sweep.
    #[arg(long, value_enum)]
    pub visit_order: Option<VisitChoice>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fully resolved run settings (flag > config file > default).
#[derive(Debug, Clone, serde::Serialize)]
pub struct Resolved {
    pub model: ModelChoice,
    pub corpus: Option<PathBuf>,
    pub slice: Option<usize>,
    pub alpha0: f64,
    pub alpha1: f64,
    pub p_hash: f64,
    pub rho: f64,
    pub phoneme_dist: DistChoice,
    pub burn_in: usize,
    pub iters: usize,
    pub sample_every: usize,
    pub gamma_max: f64,
    pub gamma_steps: usize,
    pub seed: u64,
    pub aggregate: AggregateChoice,
    pub init: InitChoice,
    pub p_init: f64,
    pub visit_order: VisitChoice,
    pub out: PathBuf,
}

fn parse_kv_file(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))
        .map_err(CliError::Config)?;
    let mut map = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            config_err(anyhow!(
                "{}:{}: expected key=value, got {line:?}",
                path.display(),
                idx + 1
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn file_get<T: std::str::FromStr>(
    file: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    match file.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
            config_err(anyhow!("config key {key}: cannot parse {raw:?}: {e}"))
        }),
    }
}

fn file_enum<T: clap::ValueEnum>(
    file: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    match file.get(key) {
        None => Ok(None),
        Some(raw) => T::from_str(raw, true).map(Some).map_err(|e| {
            config_err(anyhow!("config key {key}: cannot parse {raw:?}: {e}"))
        }),
    }
}

impl CommonOpts {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let file = match &self.config {
            Some(path) => parse_kv_file(path)?,
            None => HashMap::new(),
        };
        let resolved = Resolved {
            model: self
                .model
                .or(file_enum(&file, "model")?)
                .unwrap_or(ModelChoice::Unigram),
            corpus: self
                .corpus
                .clone()
                .or(file_get::<PathBuf>(&file, "corpus")?),
            slice: self.slice.or(file_get(&file, "slice")?),
            alpha0: self.alpha0.or(file_get(&file, "alpha0")?).unwrap_or(20.0),
            alpha1: self.alpha1.or(file_get(&file, "alpha1")?).unwrap_or(100.0),
            p_hash: self.p_hash.or(file_get(&file, "p_hash")?).unwrap_or(0.5),
            rho: self.rho.or(file_get(&file, "rho")?).unwrap_or(2.0),
            phoneme_dist: self
                .phoneme_dist
                .or(file_enum(&file, "phoneme_dist")?)
                .unwrap_or(DistChoice::Empirical),
            burn_in: self.burn_in.or(file_get(&file, "burn_in")?).unwrap_or(1000),
            iters: self.iters.or(file_get(&file, "iters")?).unwrap_or(10000),
            sample_every: self
                .sample_every
                .or(file_get(&file, "sample_every")?)
                .unwrap_or(10),
            gamma_max: self
                .gamma_max
                .or(file_get(&file, "gamma_max")?)
                .unwrap_or(10.0),
            gamma_steps: self
                .gamma_steps
                .or(file_get(&file, "gamma_steps")?)
                .unwrap_or(10),
            seed: self.seed.or(file_get(&file, "seed")?).unwrap_or(1),
            aggregate: self
                .aggregate
                .or(file_enum(&file, "aggregate")?)
                .unwrap_or(AggregateChoice::Final),
            init: self
                .init
                .or(file_enum(&file, "init")?)
                .unwrap_or(InitChoice::Random),
            p_init: self.p_init.or(file_get(&file, "p_init")?).unwrap_or(0.5),
            visit_order: self
                .visit_order
                .or(file_enum(&file, "visit_order")?)
                .unwrap_or(VisitChoice::Sequential),
            out: self
                .out
                .clone()
                .or(file_get::<PathBuf>(&file, "out")?)
                .unwrap_or_else(|| PathBuf::from("out")),
        };
        Ok(resolved)
    }
}

impl Resolved {
    pub fn model(&self) -> Model {
        match self.model {
            ModelChoice::Unigram => Model::Unigram,
            ModelChoice::Bigram => Model::Bigram,
        }
    }

    pub fn aggregate_mode(&self) -> AggregateMode {
        match self.aggregate {
            AggregateChoice::Final => AggregateMode::Final,
            AggregateChoice::Marginal => AggregateMode::Marginal,
        }
    }

    pub fn visit(&self) -> VisitOrder {
        match self.visit_order {
            VisitChoice::Sequential => VisitOrder::Sequential,
            VisitChoice::RandomScan => VisitOrder::RandomScan,
        }
    }

    pub fn schedule(&self) -> AnnealSchedule {
        AnnealSchedule {
            burn_in: self.burn_in,
            total_sampling: self.iters,
            sample_every: self.sample_every,
            gamma_max: self.gamma_max,
            gamma_steps: self.gamma_steps,
        }
    }

    /// Loads, parses, and slices the corpus.
    pub fn load_corpus(&self) -> Result<Corpus, CliError> {
        let path = self
            .corpus
            .as_ref()
            .ok_or_else(|| config_err(anyhow!("--corpus is required for this command")))?;
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read corpus {}", path.display()))
            .map_err(CliError::Config)?;
        let corpus = Corpus::parse(&text)
            .with_context(|| format!("cannot parse corpus {}", path.display()))
            .map_err(CliError::Config)?;
        Ok(match self.slice {
            Some(n) => corpus.head(n),
            None => corpus,
        })
    }

    pub fn dist_for(&self, corpus: &Corpus) -> Result<PhonemeDist, CliError> {
        let dist = match self.phoneme_dist {
            DistChoice::Uniform => PhonemeDist::uniform(&corpus.alphabet()),
            DistChoice::Empirical => PhonemeDist::empirical(corpus),
        };
        dist.map_err(config_err)
    }

    pub fn params_for(&self, corpus: &Corpus) -> Result<ModelParams, CliError> {
        let params = ModelParams {
            alpha0: self.alpha0,
            alpha1: self.alpha1,
            p_hash: self.p_hash,
            rho: self.rho,
            phoneme_dist: self.dist_for(corpus)?,
        };
        params.validate(self.model()).map_err(config_err)?;
        Ok(params)
    }
}

/// Seed for random initialization, decorrelated from the chain stream.
pub fn init_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}
