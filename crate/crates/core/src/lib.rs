//! Unsupervised word segmentation of phonemic transcripts.
//!
//! Utterance boundaries are observed; word boundaries are latent. Two
//! generative models are provided — a unigram model in which word tokens are
//! exchangeable draws from a Dirichlet process, and a bigram model in which
//! each word is drawn from a context-specific distribution that backs off to
//! a shared word-type level — together with a collapsed Gibbs sampler over
//! boundary positions, simulated annealing, forward generators for both
//! models, and a segmentation scorer (token / boundary / lexicon P, R, F).

pub mod corpus;
pub mod eval;
pub mod generator;
pub mod model;
pub mod sampler;

pub use corpus::{Corpus, CorpusStats, ParseError, PhonemeDist, SegState};
pub use eval::{EvalError, EvalReport, Prf};
pub use generator::{GenConfig, PDollar};
pub use model::{
    bigram::BigramCounts, unigram::UnigramCounts, HypothesisWeights, Model, ModelError,
    ModelParams,
};
pub use sampler::{
    AggregateMode, AnnealSchedule, Boost, ExactPosterior, GibbsSampler, SamplerError,
    SamplerOutput, TraceRow, VisitOrder, VocabPrior,
};
