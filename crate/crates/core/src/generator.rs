//! Forward simulation of the unigram and bigram generative processes,
//! producing synthetic gold-segmented corpora for property tests and
//! sampler-recovery experiments.
//!
//! The generators share no probability code with the sampler beyond the
//! parameter struct, so generator-vs-sampler agreement is a genuine
//! cross-check.

use crate::corpus::Corpus;
use crate::model::bigram::BigramCounts;
use crate::model::unigram::UnigramCounts;
use crate::model::{ModelError, ModelParams};
use rand::distributions::Distribution;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

/// Utterance-termination probability: fixed, or drawn once per corpus from
/// the symmetric Beta prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PDollar {
    Fixed(f64),
    SampleFromPrior,
}

impl Default for PDollar {
    fn default() -> PDollar {
        PDollar::Fixed(0.3)
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub params: ModelParams,
    pub n_utterances: usize,
    pub p_dollar: PDollar,
    pub seed: u64,
}

impl GenConfig {
    /// Generation accepts `p_hash = 1` (all words one phoneme long), unlike
    /// the inference gate.
    fn validate(&self, bigram: bool) -> Result<(), ModelError> {
        if self.n_utterances == 0 {
            return Err(ModelError::InvalidParams(
                "n_utterances must be >= 1".into(),
            ));
        }
        if let PDollar::Fixed(p) = self.p_dollar {
            if !(p > 0.0 && p < 1.0) {
                return Err(ModelError::InvalidParams(format!(
                    "fixed p_dollar must lie strictly between 0 and 1, got {p}"
                )));
            }
        }
        let p = &self.params;
        if !(p.alpha0 >= 0.0 && p.alpha0.is_finite()) {
            return Err(ModelError::InvalidParams("alpha0 must be >= 0".into()));
        }
        if bigram && !(p.alpha1 >= 0.0 && p.alpha1.is_finite()) {
            return Err(ModelError::InvalidParams("alpha1 must be >= 0".into()));
        }
        if !(p.p_hash > 0.0 && p.p_hash <= 1.0) {
            return Err(ModelError::InvalidParams(format!(
                "p_hash must lie in (0, 1], got {}",
                p.p_hash
            )));
        }
        if !(p.rho > 0.0 && p.rho.is_finite()) {
            return Err(ModelError::InvalidParams("rho must be > 0".into()));
        }
        Ok(())
    }
}

/// Phoneme-process word sampler: phonemes by their distribution, stop after
/// each with probability `p_hash`.
struct WordSampler {
    alphabet: Vec<u8>,
    cdf: Vec<f64>,
    p_hash: f64,
}

impl WordSampler {
    fn new(params: &ModelParams) -> WordSampler {
        let alphabet = params.phoneme_dist.alphabet().to_vec();
        let mut cdf = Vec::with_capacity(alphabet.len());
        let mut acc = 0.0;
        for &b in &alphabet {
            acc += params.phoneme_dist.prob(b);
            cdf.push(acc);
        }
        WordSampler {
            alphabet,
            cdf,
            p_hash: params.p_hash,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let mut word = Vec::with_capacity(4);
        loop {
            let r: f64 = rng.gen();
            let idx = self
                .cdf
                .partition_point(|&c| c <= r)
                .min(self.alphabet.len() - 1);
            word.push(self.alphabet[idx]);
            if rng.gen::<f64>() < self.p_hash {
                break;
            }
        }
        word
    }
}

fn resolve_p_dollar(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> f64 {
    match cfg.p_dollar {
        PDollar::Fixed(p) => p,
        PDollar::SampleFromPrior => {
            let half = cfg.params.rho / 2.0;
            let beta = rand_distr::Beta::new(half, half).expect("rho > 0");
            beta.sample(rng).clamp(1e-9, 1.0 - 1e-9)
        }
    }
}

struct TypeTable {
    types: Vec<Box<[u8]>>,
    ids: FxHashMap<Box<[u8]>, u32>,
}

impl TypeTable {
    fn new() -> TypeTable {
        TypeTable {
            types: Vec::new(),
            ids: FxHashMap::default(),
        }
    }

    fn intern(&mut self, word: Vec<u8>) -> u32 {
        if let Some(&id) = self.ids.get(word.as_slice()) {
            return id;
        }
        let id = self.types.len() as u32;
        let boxed: Box<[u8]> = word.into_boxed_slice();
        self.types.push(boxed.clone());
        self.ids.insert(boxed, id);
        id
    }

    fn word(&self, id: u32) -> &[u8] {
        &self.types[id as usize]
    }
}

fn materialize(words: &[u32], table: &TypeTable) -> (Vec<u8>, Vec<bool>) {
    let mut phonemes = Vec::new();
    let mut boundaries = Vec::new();
    for (i, &tid) in words.iter().enumerate() {
        if i > 0 {
            *boundaries.last_mut().expect("previous word") = true;
        }
        for &b in table.word(tid) {
            phonemes.push(b);
            boundaries.push(false);
        }
    }
    boundaries.pop();
    (phonemes, boundaries)
}

/// Generates a corpus from the unigram process. Words are drawn
/// sequentially by the two-branch rule (a new word with probability
/// `alpha0 / (n + alpha0)`, otherwise an existing token's type uniformly);
/// each word ends its utterance with probability `p_dollar`.
pub fn gen_unigram(cfg: &GenConfig) -> Result<Corpus, ModelError> {
    gen_unigram_full(cfg).map(|(c, _)| c)
}

/// As [`gen_unigram`], also returning the generator's internal final
/// counts (which [`UnigramCounts::rebuild`] must reproduce exactly).
pub fn gen_unigram_full(cfg: &GenConfig) -> Result<(Corpus, UnigramCounts), ModelError> {
    cfg.validate(false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p_dollar = resolve_p_dollar(cfg, &mut rng);
    let sampler = WordSampler::new(&cfg.params);
    let alpha0 = cfg.params.alpha0;

    let mut table = TypeTable::new();
    let mut token_types: Vec<u32> = Vec::new();
    let mut counts = UnigramCounts::new();
    let mut utterances = Vec::with_capacity(cfg.n_utterances);
    let mut gold = Vec::with_capacity(cfg.n_utterances);

    for _ in 0..cfg.n_utterances {
        let mut words: Vec<u32> = Vec::new();
        loop {
            let utterance_final = rng.gen::<f64>() < p_dollar;
            let n = token_types.len();
            let tid = if n == 0 || rng.gen::<f64>() < alpha0 / (n as f64 + alpha0) {
                let word = sampler.draw(&mut rng);
                table.intern(word)
            } else {
                token_types[rng.gen_range(0..n)]
            };
            counts.add(table.word(tid), utterance_final);
            token_types.push(tid);
            words.push(tid);
            if utterance_final {
                break;
            }
        }
        let (phonemes, boundaries) = materialize(&words, &table);
        utterances.push(phonemes);
        gold.push(boundaries);
    }
    Ok((Corpus::from_utterances(utterances).with_gold(gold), counts))
}

/// Generates a corpus from the hierarchical bigram process: the draw for
/// the next word reuses an existing continuation of the current context
/// with probability `n / (n + alpha1)`, otherwise backs off to the shared
/// type level (an existing bigram type's second word with probability
/// `b / (b + alpha0)`, else a fresh word from the phoneme process). The
/// boundary token conditions utterance-initial draws; utterances terminate
/// with probability `p_dollar` per word.
pub fn gen_bigram(cfg: &GenConfig) -> Result<Corpus, ModelError> {
    gen_bigram_full(cfg).map(|(c, _)| c)
}

/// As [`gen_bigram`], also returning the generator's internal final counts.
/// The pair records cover word continuations only (no boundary-target
/// records), so its transition probabilities condition exactly on the events
/// the generator sampled; the embedded token counts are complete and must
/// match a rebuild.
pub fn gen_bigram_full(cfg: &GenConfig) -> Result<(Corpus, BigramCounts), ModelError> {
    cfg.validate(true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p_dollar = resolve_p_dollar(cfg, &mut rng);
    let sampler = WordSampler::new(&cfg.params);
    let alpha0 = cfg.params.alpha0;
    let alpha1 = cfg.params.alpha1;

    let mut table = TypeTable::new();
    let boundary_id = table.intern(Vec::new());
    let mut counts = BigramCounts::new();
    // one entry per continuation event, per context
    let mut pools: FxHashMap<u32, Vec<u32>> = FxHashMap::default();
    // one entry per distinct bigram type (its second word)
    let mut type_pool: Vec<u32> = Vec::new();
    let mut utterances = Vec::with_capacity(cfg.n_utterances);
    let mut gold = Vec::with_capacity(cfg.n_utterances);

    for _ in 0..cfg.n_utterances {
        let mut words: Vec<u32> = Vec::new();
        let mut prev = boundary_id;
        loop {
            let utterance_final = rng.gen::<f64>() < p_dollar;
            let pool_len = pools.get(&prev).map_or(0, Vec::len);
            let reuse = pool_len > 0
                && rng.gen::<f64>() < pool_len as f64 / (pool_len as f64 + alpha1);
            let tid = if reuse {
                let pool = &pools[&prev];
                pool[rng.gen_range(0..pool.len())]
            } else {
                let b = type_pool.len();
                let existing =
                    b > 0 && rng.gen::<f64>() < b as f64 / (b as f64 + alpha0);
                if existing {
                    type_pool[rng.gen_range(0..b)]
                } else {
                    let word = sampler.draw(&mut rng);
                    table.intern(word)
                }
            };
            let is_new_type = counts.add_bigram(table.word(prev), table.word(tid));
            counts.add_token(table.word(tid), utterance_final);
            if is_new_type {
                type_pool.push(tid);
            }
            pools.entry(prev).or_default().push(tid);
            words.push(tid);
            prev = tid;
            if utterance_final {
                break;
            }
        }
        let (phonemes, boundaries) = materialize(&words, &table);
        utterances.push(phonemes);
        gold.push(boundaries);
    }
    Ok((Corpus::from_utterances(utterances).with_gold(gold), counts))
}
