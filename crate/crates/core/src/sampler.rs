//! Annealed collapsed Gibbs sampling over boundary sites.
//!
//! One sampler chain owns its state, counts, and RNG; chains for different
//! seeds or parameter settings are independent and may run concurrently.
//! Given the same seed and configuration a run is bit-identical.

use crate::corpus::{Corpus, SegState};
use crate::model::bigram::{log_joint_bigram, BigramCounts, BOUNDARY, BOUNDARY_BASE_MASS};
use crate::model::unigram::{log_joint_unigram, UnigramCounts};
use crate::model::{sigmoid, HypothesisWeights, Model, ModelError, ModelParams};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("segmentation state shape does not match the corpus")]
    ShapeMismatch,
    #[error("invalid annealing schedule: {0}")]
    InvalidSchedule(String),
    #[error("no samples to aggregate")]
    NoSamples,
    #[error("{positions} internal positions exceed the exact-enumeration limit of {max}")]
    TooManyPositions { positions: usize, max: usize },
    #[error("corpus has no gold boundaries")]
    MissingGold,
    #[error("vocabulary size {v} exceeds the {types} distinct gold word types")]
    VocabTooLarge { v: usize, types: usize },
    #[error("boost must be >= 1, got {0}")]
    InvalidBoost(f64),
}

/// Iteration-indexed temperature and sample-collection cadence.
///
/// During burn-in the temperature descends geometrically from `gamma_max`
/// to 1 over `gamma_steps` equal-length plateaus; from the end of burn-in
/// on it is exactly 1. Samples are collected every `sample_every`
/// iterations after burn-in.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnnealSchedule {
    pub burn_in: usize,
    pub total_sampling: usize,
    pub sample_every: usize,
    pub gamma_max: f64,
    pub gamma_steps: usize,
}

impl Default for AnnealSchedule {
    fn default() -> AnnealSchedule {
        AnnealSchedule {
            burn_in: 1000,
            total_sampling: 10000,
            sample_every: 10,
            gamma_max: 10.0,
            gamma_steps: 10,
        }
    }
}

impl AnnealSchedule {
    /// Constant-temperature schedule (gamma = 1 throughout).
    pub fn flat(burn_in: usize, total_sampling: usize, sample_every: usize) -> AnnealSchedule {
        AnnealSchedule {
            burn_in,
            total_sampling,
            sample_every,
            gamma_max: 1.0,
            gamma_steps: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.gamma_max >= 1.0 && self.gamma_max.is_finite()) {
            return Err(SamplerError::InvalidSchedule(format!(
                "gamma_max must be finite and >= 1, got {}",
                self.gamma_max
            )));
        }
        if self.sample_every == 0 {
            return Err(SamplerError::InvalidSchedule(
                "sample_every must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Temperature at a given iteration. Nonincreasing, `gamma_max` at
    /// iteration 0, exactly 1 from `burn_in` on.
    pub fn gamma(&self, iteration: usize) -> f64 {
        if iteration >= self.burn_in || self.gamma_max <= 1.0 || self.gamma_steps == 0 {
            return 1.0;
        }
        let steps = self.gamma_steps;
        let plateau = iteration * steps / self.burn_in;
        if steps == 1 {
            return self.gamma_max;
        }
        let exponent = (steps - 1 - plateau) as f64 / (steps - 1) as f64;
        self.gamma_max.powf(exponent)
    }

    pub fn total_iterations(&self) -> usize {
        self.burn_in + self.total_sampling
    }

    pub fn expected_samples(&self) -> usize {
        if self.sample_every == 0 {
            0
        } else {
            self.total_sampling / self.sample_every
        }
    }
}

/// Vocabulary-boost factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boost {
    Finite(f64),
    Infinite,
}

/// A partial known vocabulary that amplifies hypotheses whose words all
/// belong to it. With an infinite boost, a site where exactly one
/// hypothesis qualifies picks that hypothesis outright; when both or
/// neither qualify the unboosted choice applies.
#[derive(Debug, Clone)]
pub struct VocabPrior {
    words: FxHashSet<Box<[u8]>>,
    boost: Boost,
}

impl VocabPrior {
    /// Samples `v` distinct gold word types, weighted by gold token
    /// frequency, without replacement; deterministic given `seed`.
    pub fn build(
        corpus: &Corpus,
        v: usize,
        boost: Boost,
        seed: u64,
    ) -> Result<VocabPrior, SamplerError> {
        validate_boost(boost)?;
        let gold = corpus.gold_state().ok_or(SamplerError::MissingGold)?;
        let mut freqs: std::collections::BTreeMap<&[u8], u64> = Default::default();
        for (u, s, e) in gold.token_spans(corpus) {
            *freqs.entry(&corpus.utterance(u)[s..e]).or_insert(0) += 1;
        }
        if v > freqs.len() {
            return Err(SamplerError::VocabTooLarge {
                v,
                types: freqs.len(),
            });
        }
        let mut items: Vec<(&[u8], u64)> = freqs.into_iter().collect();
        let mut total: u64 = items.iter().map(|&(_, f)| f).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut words = FxHashSet::default();
        for _ in 0..v {
            let mut r = rng.gen_range(0..total);
            let idx = items
                .iter()
                .position(|&(_, f)| {
                    if r < f {
                        true
                    } else {
                        r -= f;
                        false
                    }
                })
                .expect("weighted pick in range");
            let (word, f) = items.remove(idx);
            total -= f;
            words.insert(word.into());
        }
        Ok(VocabPrior { words, boost })
    }

    /// Vocabulary prior from an explicit word list.
    pub fn from_words<I, W>(words: I, boost: Boost) -> Result<VocabPrior, SamplerError>
    where
        I: IntoIterator<Item = W>,
        W: AsRef<[u8]>,
    {
        validate_boost(boost)?;
        Ok(VocabPrior {
            words: words.into_iter().map(|w| w.as_ref().into()).collect(),
            boost,
        })
    }

    pub fn contains(&self, word: &[u8]) -> bool {
        self.words.contains(word)
    }

    pub fn boost(&self) -> Boost {
        self.boost
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words in lexicographic order.
    pub fn sorted_words(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .words
            .iter()
            .map(|w| String::from_utf8_lossy(w).into_owned())
            .collect();
        out.sort();
        out
    }
}

fn validate_boost(boost: Boost) -> Result<(), SamplerError> {
    if let Boost::Finite(b) = boost {
        if !(b >= 1.0 && b.is_finite()) {
            return Err(SamplerError::InvalidBoost(b));
        }
    }
    Ok(())
}

/// Boundary bit-vector snapshot, packed, in utterance-major flat order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundarySnapshot {
    bits: Vec<u64>,
    len: usize,
}

impl BoundarySnapshot {
    pub fn from_state(state: &SegState) -> BoundarySnapshot {
        let len: usize = state.boundaries().iter().map(Vec::len).sum();
        let mut snap = BoundarySnapshot {
            bits: vec![0u64; len.div_ceil(64)],
            len,
        };
        let mut i = 0usize;
        for utt in state.boundaries() {
            for &b in utt {
                if b {
                    snap.bits[i / 64] |= 1u64 << (i % 64);
                }
                i += 1;
            }
        }
        snap
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len);
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn to_state(&self, corpus: &Corpus) -> SegState {
        assert_eq!(self.len, corpus.internal_positions());
        let mut state = SegState::unsegmented(corpus);
        let mut i = 0usize;
        for u in 0..corpus.len() {
            for p in 0..corpus.utterance(u).len() - 1 {
                if self.get(i) {
                    state.set(u, p, true);
                }
                i += 1;
            }
        }
        state
    }
}

/// Sample-aggregation rule for the final reported segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateMode {
    /// The last collected sample.
    Final,
    /// Boundary wherever a strict majority of samples place one.
    Marginal,
}

/// Combines collected samples into a single segmentation.
pub fn aggregate(
    samples: &[BoundarySnapshot],
    mode: AggregateMode,
    corpus: &Corpus,
) -> Result<SegState, SamplerError> {
    let last = samples.last().ok_or(SamplerError::NoSamples)?;
    match mode {
        AggregateMode::Final => Ok(last.to_state(corpus)),
        AggregateMode::Marginal => {
            let len = last.len();
            let mut counts = vec![0usize; len];
            for s in samples {
                assert_eq!(s.len(), len, "samples of mismatched shape");
                for (i, c) in counts.iter_mut().enumerate() {
                    if s.get(i) {
                        *c += 1;
                    }
                }
            }
            let mut snap = BoundarySnapshot {
                bits: vec![0u64; len.div_ceil(64)],
                len,
            };
            for (i, &c) in counts.iter().enumerate() {
                if 2 * c > samples.len() {
                    snap.bits[i / 64] |= 1u64 << (i % 64);
                }
            }
            Ok(snap.to_state(corpus))
        }
    }
}

/// Per-iteration trace record.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub log_joint: f64,
    pub tokens: usize,
    pub gamma: f64,
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct SamplerOutput {
    pub final_state: SegState,
    pub samples: Vec<BoundarySnapshot>,
    pub trace: Vec<TraceRow>,
    pub seed: u64,
    pub model: Model,
    pub params: ModelParams,
    pub schedule: AnnealSchedule,
}

/// Site visit order within a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisitOrder {
    /// Corpus order, left to right within each utterance.
    Sequential,
    /// A fresh uniform permutation of all sites each iteration.
    RandomScan,
}

enum Counts {
    Unigram(UnigramCounts),
    Bigram(BigramCounts),
}

/// A single Gibbs chain over one corpus.
pub struct GibbsSampler<'c> {
    corpus: &'c Corpus,
    params: ModelParams,
    model: Model,
    state: SegState,
    counts: Counts,
    rng: ChaCha8Rng,
    seed: u64,
    visit: VisitOrder,
    // ln P(x) prefix sums per utterance, so any span's base probability is
    // O(1): lp0(s, e) = ln p# + (e-s-1) ln(1-p#) + pref[e] - pref[s].
    lp_prefix: Vec<Box<[f64]>>,
    ln_p_hash: f64,
    ln_1m_p_hash: f64,
    sites: Vec<(u32, u32)>,
}

impl<'c> GibbsSampler<'c> {
    pub fn new(
        corpus: &'c Corpus,
        params: ModelParams,
        model: Model,
        init: SegState,
        seed: u64,
    ) -> Result<GibbsSampler<'c>, SamplerError> {
        params.validate(model)?;
        if !init.matches_shape(corpus) {
            return Err(SamplerError::ShapeMismatch);
        }
        for utt in corpus.utterances() {
            for &b in utt {
                if !params.phoneme_dist.contains(b) {
                    return Err(ModelError::UnknownPhoneme(b as char).into());
                }
            }
        }
        let lp_prefix = corpus
            .utterances()
            .map(|utt| {
                let mut pref = Vec::with_capacity(utt.len() + 1);
                let mut acc = 0.0f64;
                pref.push(acc);
                for &b in utt {
                    acc += params.phoneme_dist.log_prob(b);
                    pref.push(acc);
                }
                pref.into_boxed_slice()
            })
            .collect();
        let counts = match model {
            Model::Unigram => Counts::Unigram(UnigramCounts::rebuild(corpus, &init)),
            Model::Bigram => Counts::Bigram(BigramCounts::rebuild(corpus, &init)),
        };
        let mut sites = Vec::with_capacity(corpus.internal_positions());
        for (u, utt) in corpus.utterances().enumerate() {
            for p in 0..utt.len() - 1 {
                sites.push((u as u32, p as u32));
            }
        }
        Ok(GibbsSampler {
            corpus,
            ln_p_hash: params.p_hash.ln(),
            ln_1m_p_hash: (1.0 - params.p_hash).ln(),
            params,
            model,
            state: init,
            counts,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            visit: VisitOrder::Sequential,
            lp_prefix,
            sites,
        })
    }

    pub fn with_visit_order(mut self, visit: VisitOrder) -> GibbsSampler<'c> {
        self.visit = visit;
        self
    }

    pub fn state(&self) -> &SegState {
        &self.state
    }

    pub fn token_count(&self) -> usize {
        match &self.counts {
            Counts::Unigram(c) => c.n() as usize,
            Counts::Bigram(c) => c.unigram().n() as usize,
        }
    }

    pub fn unigram_counts(&self) -> Option<&UnigramCounts> {
        match &self.counts {
            Counts::Unigram(c) => Some(c),
            Counts::Bigram(_) => None,
        }
    }

    pub fn bigram_counts(&self) -> Option<&BigramCounts> {
        match &self.counts {
            Counts::Bigram(c) => Some(c),
            Counts::Unigram(_) => None,
        }
    }

    /// Log joint score of the current state.
    pub fn log_joint(&self) -> Result<f64, SamplerError> {
        let lp = match &self.counts {
            // closed form over counts; equals the sequential product
            Counts::Unigram(c) => c.log_joint(&self.params)?,
            Counts::Bigram(_) => log_joint_bigram(self.corpus, &self.state, &self.params)?,
        };
        Ok(lp)
    }

    /// One Gibbs sweep: every utterance-internal position is visited
    /// exactly once; at each site the local window is removed from the
    /// counts, the two hypothesis weights are computed, raised to
    /// `1/gamma`, boosted if a vocabulary prior applies, and a Bernoulli
    /// draw picks the hypothesis, whose words are reinserted.
    pub fn sweep(
        &mut self,
        gamma: f64,
        vocab: Option<&VocabPrior>,
    ) -> Result<(), SamplerError> {
        assert!(gamma >= 1.0, "gamma must be >= 1");
        match self.visit {
            VisitOrder::Sequential => self.sweep_sequential(gamma, vocab),
            VisitOrder::RandomScan => self.sweep_random_scan(gamma, vocab),
        }
    }

    fn sweep_sequential(
        &mut self,
        gamma: f64,
        vocab: Option<&VocabPrior>,
    ) -> Result<(), SamplerError> {
        let corpus = self.corpus;
        let params = &self.params;
        let lph = self.ln_p_hash;
        let l1m = self.ln_1m_p_hash;
        let state = &mut self.state;
        let rng = &mut self.rng;
        let prefix = &self.lp_prefix;
        match &mut self.counts {
            Counts::Unigram(counts) => {
                for u in 0..corpus.len() {
                    let ph = corpus.utterance(u);
                    if ph.len() < 2 {
                        continue;
                    }
                    let pref = &prefix[u];
                    let bnd = state.utterance_boundaries_mut(u);
                    for j in 0..ph.len() - 1 {
                        unigram_site(ph, pref, bnd, j, counts, params, lph, l1m, gamma, vocab, rng)?;
                    }
                }
            }
            Counts::Bigram(counts) => {
                for u in 0..corpus.len() {
                    let ph = corpus.utterance(u);
                    if ph.len() < 2 {
                        continue;
                    }
                    let pref = &prefix[u];
                    let bnd = state.utterance_boundaries_mut(u);
                    for j in 0..ph.len() - 1 {
                        bigram_site(ph, pref, bnd, j, counts, params, lph, l1m, gamma, vocab, rng)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn sweep_random_scan(
        &mut self,
        gamma: f64,
        vocab: Option<&VocabPrior>,
    ) -> Result<(), SamplerError> {
        let corpus = self.corpus;
        let params = &self.params;
        let lph = self.ln_p_hash;
        let l1m = self.ln_1m_p_hash;
        let state = &mut self.state;
        let rng = &mut self.rng;
        let prefix = &self.lp_prefix;
        let mut order = self.sites.clone();
        order.shuffle(rng);
        match &mut self.counts {
            Counts::Unigram(counts) => {
                for &(u, j) in &order {
                    let (u, j) = (u as usize, j as usize);
                    let ph = corpus.utterance(u);
                    let pref = &prefix[u];
                    let bnd = state.utterance_boundaries_mut(u);
                    unigram_site(ph, pref, bnd, j, counts, params, lph, l1m, gamma, vocab, rng)?;
                }
            }
            Counts::Bigram(counts) => {
                for &(u, j) in &order {
                    let (u, j) = (u as usize, j as usize);
                    let ph = corpus.utterance(u);
                    let pref = &prefix[u];
                    let bnd = state.utterance_boundaries_mut(u);
                    bigram_site(ph, pref, bnd, j, counts, params, lph, l1m, gamma, vocab, rng)?;
                }
            }
        }
        Ok(())
    }

    /// Runs the full schedule: `burn_in + total_sampling` sweeps with the
    /// schedule's temperature, collecting a boundary snapshot every
    /// `sample_every` iterations after burn-in and a trace row every
    /// iteration.
    pub fn run(
        &mut self,
        schedule: &AnnealSchedule,
        vocab: Option<&VocabPrior>,
    ) -> Result<SamplerOutput, SamplerError> {
        schedule.validate()?;
        let total = schedule.total_iterations();
        let mut samples = Vec::with_capacity(schedule.expected_samples());
        let mut trace = Vec::with_capacity(total);
        for iteration in 0..total {
            let gamma = schedule.gamma(iteration);
            self.sweep(gamma, vocab)?;
            let log_joint = self.log_joint()?;
            trace.push(TraceRow {
                iteration,
                log_joint,
                tokens: self.token_count(),
                gamma,
            });
            if iteration >= schedule.burn_in
                && (iteration - schedule.burn_in + 1) % schedule.sample_every == 0
            {
                samples.push(BoundarySnapshot::from_state(&self.state));
            }
        }
        Ok(SamplerOutput {
            final_state: self.state.clone(),
            samples,
            trace,
            seed: self.seed,
            model: self.model,
            params: self.params.clone(),
            schedule: schedule.clone(),
        })
    }

    /// Debug-grade consistency check: incremental counts must equal a
    /// from-scratch rebuild.
    pub fn counts_consistent(&self) -> bool {
        match &self.counts {
            Counts::Unigram(c) => *c == UnigramCounts::rebuild(self.corpus, &self.state),
            Counts::Bigram(c) => *c == BigramCounts::rebuild(self.corpus, &self.state),
        }
    }
}

/// Normalized boundary probability after annealing and boosting.
fn boosted_p_boundary(
    weights: &HypothesisWeights,
    gamma: f64,
    vocab: Option<&VocabPrior>,
    w1: &[u8],
    w2: &[u8],
    w3: &[u8],
) -> f64 {
    let mut d = (weights.log_h2() - weights.log_h1()) / gamma;
    if let Some(v) = vocab {
        match v.boost() {
            Boost::Finite(b) => {
                let lb = b.ln();
                if v.contains(w1) {
                    d -= lb;
                }
                if v.contains(w2) && v.contains(w3) {
                    d += lb;
                }
            }
            Boost::Infinite => {
                let no_boundary_known = v.contains(w1);
                let split_known = v.contains(w2) && v.contains(w3);
                match (no_boundary_known, split_known) {
                    (true, false) => return 0.0,
                    (false, true) => return 1.0,
                    _ => {}
                }
            }
        }
    }
    sigmoid(d)
}

#[allow(clippy::too_many_arguments)]
fn unigram_site(
    ph: &[u8],
    pref: &[f64],
    bnd: &mut [bool],
    j: usize,
    counts: &mut UnigramCounts,
    params: &ModelParams,
    lph: f64,
    l1m: f64,
    gamma: f64,
    vocab: Option<&VocabPrior>,
    rng: &mut ChaCha8Rng,
) -> Result<(), SamplerError> {
    let m = ph.len();
    let mut ls = j;
    while ls > 0 && !bnd[ls - 1] {
        ls -= 1;
    }
    let mut rp = j + 1;
    while rp < m - 1 && !bnd[rp] {
        rp += 1;
    }
    let re = if rp < m - 1 { rp + 1 } else { m };
    let mid = j + 1;
    let utt_final = re == m;
    let w1 = &ph[ls..re];
    let w2 = &ph[ls..mid];
    let w3 = &ph[mid..re];
    let lp0 = |s: usize, e: usize| lph + (e - s - 1) as f64 * l1m + (pref[e] - pref[s]);
    let p0_w1 = lp0(ls, re).exp();
    let p0_w2 = lp0(ls, mid).exp();
    let p0_w3 = lp0(mid, re).exp();

    if bnd[j] {
        counts.remove(w2, false);
        counts.remove(w3, utt_final);
    } else {
        counts.remove(w1, utt_final);
    }

    let weights =
        counts.h_weights_with_p0(w2, w3, utt_final, p0_w1, p0_w2, p0_w3, w1, params)?;
    let p_b = boosted_p_boundary(&weights, gamma, vocab, w1, w2, w3);
    let set = rng.gen::<f64>() < p_b;
    bnd[j] = set;
    if set {
        counts.add(w2, false);
        counts.add(w3, utt_final);
    } else {
        counts.add(w1, utt_final);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bigram_site(
    ph: &[u8],
    pref: &[f64],
    bnd: &mut [bool],
    j: usize,
    counts: &mut BigramCounts,
    params: &ModelParams,
    lph: f64,
    l1m: f64,
    gamma: f64,
    vocab: Option<&VocabPrior>,
    rng: &mut ChaCha8Rng,
) -> Result<(), SamplerError> {
    let m = ph.len();
    let mut ls = j;
    while ls > 0 && !bnd[ls - 1] {
        ls -= 1;
    }
    let mut rp = j + 1;
    while rp < m - 1 && !bnd[rp] {
        rp += 1;
    }
    let re = if rp < m - 1 { rp + 1 } else { m };
    let mid = j + 1;
    let utt_final = re == m;
    let w1 = &ph[ls..re];
    let w2 = &ph[ls..mid];
    let w3 = &ph[mid..re];
    let lp0 = |s: usize, e: usize| lph + (e - s - 1) as f64 * l1m + (pref[e] - pref[s]);

    // left and right context words; the utterance boundary token stands in
    // at the edges
    let w_l: &[u8] = if ls == 0 {
        BOUNDARY
    } else {
        let mut q = ls - 1;
        while q > 0 && !bnd[q - 1] {
            q -= 1;
        }
        &ph[q..ls]
    };
    let (w_r, base_wr): (&[u8], f64) = if re == m {
        (BOUNDARY, BOUNDARY_BASE_MASS)
    } else {
        let mut rq = re;
        while rq < m - 1 && !bnd[rq] {
            rq += 1;
        }
        let rend = if rq < m - 1 { rq + 1 } else { m };
        (&ph[re..rend], lp0(re, rend).exp())
    };

    let base_w1 = lp0(ls, re).exp();
    let base_w2 = lp0(ls, mid).exp();
    let base_w3 = lp0(mid, re).exp();

    if bnd[j] {
        counts.remove_bigram(w_l, w2);
        counts.remove_bigram(w2, w3);
        counts.remove_bigram(w3, w_r);
        counts.remove_token(w2, false);
        counts.remove_token(w3, utt_final);
    } else {
        counts.remove_bigram(w_l, w1);
        counts.remove_bigram(w1, w_r);
        counts.remove_token(w1, utt_final);
    }

    let weights = counts.s_weights_with_bases(
        w_l, w1, w2, w3, w_r, base_w1, base_w2, base_w3, base_wr, params,
    )?;
    let p_b = boosted_p_boundary(&weights, gamma, vocab, w1, w2, w3);
    let set = rng.gen::<f64>() < p_b;
    bnd[j] = set;
    if set {
        counts.add_bigram(w_l, w2);
        counts.add_bigram(w2, w3);
        counts.add_bigram(w3, w_r);
        counts.add_token(w2, false);
        counts.add_token(w3, utt_final);
    } else {
        counts.add_bigram(w_l, w1);
        counts.add_bigram(w1, w_r);
        counts.add_token(w1, utt_final);
    }
    Ok(())
}

/// Exact posterior over all boundary configurations of a small corpus.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    sites: Vec<(usize, usize)>,
    log_scores: Vec<f64>,
    probs: Vec<f64>,
}

/// Maximum internal positions the exact enumeration accepts.
pub const EXACT_POSTERIOR_MAX_POSITIONS: usize = 16;

/// Enumerates all `2^B` boundary configurations, scores each with the
/// model's log joint, and normalizes. Refuses corpora with more than
/// [`EXACT_POSTERIOR_MAX_POSITIONS`] internal positions.
pub fn exact_posterior(
    corpus: &Corpus,
    params: &ModelParams,
    model: Model,
) -> Result<ExactPosterior, SamplerError> {
    params.validate(model)?;
    let sites = flat_sites(corpus);
    let b = sites.len();
    if b > EXACT_POSTERIOR_MAX_POSITIONS {
        return Err(SamplerError::TooManyPositions {
            positions: b,
            max: EXACT_POSTERIOR_MAX_POSITIONS,
        });
    }
    let mut log_scores = Vec::with_capacity(1usize << b);
    for mask in 0..(1u64 << b) {
        let mut state = SegState::unsegmented(corpus);
        for (i, &(u, p)) in sites.iter().enumerate() {
            if mask >> i & 1 == 1 {
                state.set(u, p, true);
            }
        }
        let lp = match model {
            Model::Unigram => log_joint_unigram(corpus, &state, params)?,
            Model::Bigram => log_joint_bigram(corpus, &state, params)?,
        };
        log_scores.push(lp);
    }
    let total = log_sum_exp(&log_scores);
    let probs = log_scores.iter().map(|lp| (lp - total).exp()).collect();
    Ok(ExactPosterior {
        sites,
        log_scores,
        probs,
    })
}

impl ExactPosterior {
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    /// Flat site index -> (utterance, position).
    pub fn sites(&self) -> &[(usize, usize)] {
        &self.sites
    }

    /// Normalized probability of a boundary configuration given as a
    /// bitmask over flat site indices.
    pub fn prob(&self, mask: u64) -> f64 {
        self.probs[mask as usize]
    }

    /// All configuration probabilities, indexed by bitmask.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_scores(&self) -> &[f64] {
        &self.log_scores
    }

    /// Per-site marginal boundary probabilities.
    pub fn marginals(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.sites.len()];
        for (mask, &p) in self.probs.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                if mask >> i & 1 == 1 {
                    *o += p;
                }
            }
        }
        out
    }
}

/// Flat list of internal boundary sites in utterance-major order.
pub fn flat_sites(corpus: &Corpus) -> Vec<(usize, usize)> {
    let mut sites = Vec::with_capacity(corpus.internal_positions());
    for (u, utt) in corpus.utterances().enumerate() {
        for p in 0..utt.len() - 1 {
            sites.push((u, p));
        }
    }
    sites
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PhonemeDist;

    fn micro_params() -> ModelParams {
        ModelParams {
            alpha0: 20.0,
            alpha1: 10.0,
            p_hash: 0.5,
            rho: 2.0,
            phoneme_dist: PhonemeDist::uniform(b"ab").unwrap(),
        }
    }

    #[test]
    fn schedule_gamma_shape() {
        let s = AnnealSchedule::default();
        assert_eq!(s.gamma(0), 10.0);
        assert_eq!(s.gamma(1000), 1.0);
        assert_eq!(s.gamma(5000), 1.0);
        let mut prev = f64::INFINITY;
        for it in 0..s.total_iterations() {
            let g = s.gamma(it);
            assert!(g <= prev, "gamma must be nonincreasing");
            assert!(g >= 1.0);
            prev = g;
        }
        // last burn-in plateau is already at temperature 1
        assert_eq!(s.gamma(999), 1.0);

        let flat = AnnealSchedule::flat(10, 100, 10);
        assert_eq!(flat.gamma(0), 1.0);
        assert_eq!(flat.expected_samples(), 10);
    }

    #[test]
    fn sample_count_matches_schedule() {
        let c = Corpus::parse("ab ab\nba").unwrap();
        let schedule = AnnealSchedule {
            burn_in: 20,
            total_sampling: 100,
            sample_every: 10,
            gamma_max: 2.0,
            gamma_steps: 4,
        };
        let init = SegState::random_init(&c, 0.5, 1);
        let mut sampler =
            GibbsSampler::new(&c, micro_params(), Model::Unigram, init, 5).unwrap();
        let out = sampler.run(&schedule, None).unwrap();
        assert_eq!(out.samples.len(), 10);
        assert_eq!(out.trace.len(), 120);
        assert!(sampler.counts_consistent());
    }

    #[test]
    fn run_is_deterministic() {
        let c = Corpus::parse("abab ab\nba ab\naab").unwrap();
        let schedule = AnnealSchedule {
            burn_in: 10,
            total_sampling: 30,
            sample_every: 5,
            gamma_max: 3.0,
            gamma_steps: 2,
        };
        for model in [Model::Unigram, Model::Bigram] {
            let run = |seed: u64| {
                let init = SegState::random_init(&c, 0.5, 99);
                let mut s = GibbsSampler::new(&c, micro_params(), model, init, seed).unwrap();
                s.run(&schedule, None).unwrap()
            };
            let a = run(7);
            let b = run(7);
            assert_eq!(a.final_state, b.final_state);
            assert_eq!(a.samples, b.samples);
            assert_eq!(a.trace, b.trace);
            let c2 = run(8);
            assert!(a.final_state != c2.final_state || a.trace != c2.trace);
        }
    }

    #[test]
    fn single_site_draw_matches_worked_example() {
        // On the one-site corpus "ab" a single sweep samples directly from
        // the exact conditional, which the worked micro-example pins at
        // P(no boundary) ~ 0.759.
        let c = Corpus::parse("ab").unwrap();
        let params = micro_params();
        let mut boundary_hits = 0usize;
        let trials = 100_000usize;
        for seed in 0..trials as u64 {
            let init = SegState::unsegmented(&c);
            let mut s = GibbsSampler::new(&c, params.clone(), Model::Unigram, init, seed).unwrap();
            s.sweep(1.0, None).unwrap();
            if s.state().get(0, 0) {
                boundary_hits += 1;
            }
        }
        let freq = boundary_hits as f64 / trials as f64;
        let expected = 1.0 - 0.759036144578;
        // 4 sigma of the binomial
        let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
        assert!(
            (freq - expected).abs() < 4.0 * sigma,
            "boundary frequency {freq}, expected {expected}"
        );
    }

    #[test]
    fn sweep_visits_each_site_once() {
        let c = Corpus::parse("abab ab\nba ab\naab aa bb").unwrap();
        let init = SegState::random_init(&c, 0.5, 3);
        for model in [Model::Unigram, Model::Bigram] {
            let mut s =
                GibbsSampler::new(&c, micro_params(), model, init.clone(), 11).unwrap();
            s.sweep(1.0, None).unwrap();
            assert_eq!(
                s.token_count(),
                s.state().boundary_count() + c.len(),
                "token count must equal boundaries + utterances"
            );
            assert!(s.counts_consistent());
        }
    }

    #[test]
    fn random_scan_also_consistent() {
        let c = Corpus::parse("abab ab\nba ab\naab aa bb").unwrap();
        let init = SegState::random_init(&c, 0.5, 3);
        for model in [Model::Unigram, Model::Bigram] {
            let mut s = GibbsSampler::new(&c, micro_params(), model, init.clone(), 11)
                .unwrap()
                .with_visit_order(VisitOrder::RandomScan);
            for _ in 0..5 {
                s.sweep(1.0, None).unwrap();
            }
            assert!(s.counts_consistent());
        }
    }

    #[test]
    fn boost_one_is_bit_identical_to_unboosted() {
        let c = Corpus::parse("ab ab\nabab\nba ab").unwrap();
        let schedule = AnnealSchedule::flat(5, 20, 5);
        let vocab =
            VocabPrior::build(&c, 2, Boost::Finite(1.0), 77).unwrap();
        let base = {
            let init = SegState::random_init(&c, 0.5, 4);
            let mut s =
                GibbsSampler::new(&c, micro_params(), Model::Unigram, init, 21).unwrap();
            s.run(&schedule, None).unwrap()
        };
        let boosted = {
            let init = SegState::random_init(&c, 0.5, 4);
            let mut s =
                GibbsSampler::new(&c, micro_params(), Model::Unigram, init, 21).unwrap();
            s.run(&schedule, Some(&vocab)).unwrap()
        };
        assert_eq!(base.final_state, boosted.final_state);
        assert_eq!(base.samples, boosted.samples);
    }

    #[test]
    fn infinite_boost_forces_qualifying_hypothesis() {
        let w = HypothesisWeights::new(-1.0, -1.0).unwrap();
        let only_whole = VocabPrior::from_words([b"ab" as &[u8]], Boost::Infinite).unwrap();
        assert_eq!(
            boosted_p_boundary(&w, 1.0, Some(&only_whole), b"ab", b"a", b"b"),
            0.0
        );
        let only_parts =
            VocabPrior::from_words([b"a" as &[u8], b"b"], Boost::Infinite).unwrap();
        assert_eq!(
            boosted_p_boundary(&w, 1.0, Some(&only_parts), b"ab", b"a", b"b"),
            1.0
        );
        // both qualify: fall back to the unboosted choice
        let both = VocabPrior::from_words(
            [b"ab" as &[u8], b"a", b"b"],
            Boost::Infinite,
        )
        .unwrap();
        let p = boosted_p_boundary(&w, 1.0, Some(&both), b"ab", b"a", b"b");
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn vocab_build_edges() {
        let c = Corpus::parse("ab ab cd").unwrap();
        let empty = VocabPrior::build(&c, 0, Boost::Finite(10.0), 1).unwrap();
        assert!(empty.is_empty());
        let full = VocabPrior::build(&c, 2, Boost::Finite(10.0), 1).unwrap();
        assert_eq!(full.sorted_words(), vec!["ab".to_string(), "cd".to_string()]);
        assert!(matches!(
            VocabPrior::build(&c, 3, Boost::Finite(10.0), 1),
            Err(SamplerError::VocabTooLarge { v: 3, types: 2 })
        ));
        assert!(matches!(
            VocabPrior::build(&c, 1, Boost::Finite(0.5), 1),
            Err(SamplerError::InvalidBoost(_))
        ));
    }

    #[test]
    fn vocab_weighted_sampling_frequencies() {
        // v = 1 on "ab ab cd": "ab" carries 2 of 3 tokens, so it should be
        // picked about 2/3 of the time across seeds.
        let c = Corpus::parse("ab ab cd").unwrap();
        let trials = 10_000u64;
        let mut ab_hits = 0usize;
        for seed in 0..trials {
            let v = VocabPrior::build(&c, 1, Boost::Finite(2.0), seed).unwrap();
            if v.contains(b"ab") {
                ab_hits += 1;
            }
        }
        let freq = ab_hits as f64 / trials as f64;
        let expected = 2.0 / 3.0;
        let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
        assert!(
            (freq - expected).abs() < 4.0 * sigma,
            "got {freq}, expected {expected}"
        );
    }

    #[test]
    fn aggregate_modes() {
        let c = Corpus::parse("abc").unwrap();
        let mut s1 = SegState::unsegmented(&c);
        s1.set(0, 0, true);
        let mut s2 = SegState::unsegmented(&c);
        s2.set(0, 0, true);
        s2.set(0, 1, true);
        let snaps: Vec<BoundarySnapshot> = [&s1, &s1, &s2]
            .iter()
            .map(|s| BoundarySnapshot::from_state(s))
            .collect();
        let final_state = aggregate(&snaps, AggregateMode::Final, &c).unwrap();
        assert_eq!(final_state, s2);
        // position 0 in 3/3, position 1 in 1/3 -> majority keeps only 0
        let marginal = aggregate(&snaps, AggregateMode::Marginal, &c).unwrap();
        assert_eq!(marginal, s1);
        // single sample: both modes agree
        let one = vec![BoundarySnapshot::from_state(&s2)];
        assert_eq!(
            aggregate(&one, AggregateMode::Final, &c).unwrap(),
            aggregate(&one, AggregateMode::Marginal, &c).unwrap()
        );
        // ties go to no boundary
        let tied: Vec<BoundarySnapshot> = [&s1, &s2]
            .iter()
            .map(|s| BoundarySnapshot::from_state(s))
            .collect();
        let t = aggregate(&tied, AggregateMode::Marginal, &c).unwrap();
        assert_eq!(t, s1);
        assert!(matches!(
            aggregate(&[], AggregateMode::Final, &c),
            Err(SamplerError::NoSamples)
        ));
    }

    #[test]
    fn exact_posterior_micro_example() {
        let c = Corpus::parse("ab").unwrap();
        let post = exact_posterior(&c, &micro_params(), Model::Unigram).unwrap();
        assert_eq!(post.n_sites(), 1);
        let sum: f64 = post.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let marginal = post.marginals()[0];
        assert!(
            (marginal - (1.0 - 0.759036144578)).abs() < 1e-9,
            "got {marginal}"
        );
    }

    #[test]
    fn exact_posterior_edge_cases() {
        let c = Corpus::parse("a\nb").unwrap();
        let post = exact_posterior(&c, &micro_params(), Model::Unigram).unwrap();
        assert_eq!(post.n_sites(), 0);
        assert_eq!(post.probs(), &[1.0]);

        let big = Corpus::parse("aaaaaaaaaaaaaaaaaa").unwrap();
        assert!(matches!(
            exact_posterior(&big, &micro_params(), Model::Unigram),
            Err(SamplerError::TooManyPositions { positions: 17, .. })
        ));
    }

    #[test]
    fn snapshot_round_trip() {
        let c = Corpus::parse("abab ab\nba\naab aa").unwrap();
        for seed in 0..5 {
            let state = SegState::random_init(&c, 0.4, seed);
            let snap = BoundarySnapshot::from_state(&state);
            assert_eq!(snap.count_ones(), state.boundary_count());
            assert_eq!(snap.to_state(&c), state);
        }
    }

    #[test]
    fn zero_iteration_run_is_identity() {
        let c = Corpus::parse("ab ab\nba").unwrap();
        let gold = c.gold_state().unwrap();
        let schedule = AnnealSchedule::flat(0, 0, 1);
        let mut s =
            GibbsSampler::new(&c, micro_params(), Model::Unigram, gold.clone(), 9).unwrap();
        let out = s.run(&schedule, None).unwrap();
        assert_eq!(out.final_state, gold);
        assert!(out.samples.is_empty());
    }
}
