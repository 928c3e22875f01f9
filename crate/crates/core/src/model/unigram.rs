//! Unigram model: word tokens as exchangeable draws from a Dirichlet
//! process, with a Beta-Bernoulli process over utterance-final flags.

use super::{log_p0, HypothesisWeights, ModelError, ModelParams};
use crate::corpus::{Corpus, SegState};
use rustc_hash::FxHashMap;

type Word = Box<[u8]>;

/// Sufficient statistics of the unigram model: total token count `n`,
/// per-type token counts, and the count of utterance-final tokens `n_$`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnigramCounts {
    n: u64,
    n_dollar: u64,
    by_word: FxHashMap<Word, u64>,
}

impl UnigramCounts {
    pub fn new() -> UnigramCounts {
        UnigramCounts::default()
    }

    /// Recomputes all statistics from scratch from the token sequence.
    pub fn rebuild(corpus: &Corpus, state: &SegState) -> UnigramCounts {
        let mut counts = UnigramCounts::new();
        for u in 0..corpus.len() {
            let phonemes = corpus.utterance(u);
            let spans = state.utterance_spans(u);
            let last = spans.len() - 1;
            for (i, &(s, e)) in spans.iter().enumerate() {
                counts.add(&phonemes[s..e], i == last);
            }
        }
        counts
    }

    /// Total word tokens.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Utterance-final tokens.
    pub fn n_dollar(&self) -> u64 {
        self.n_dollar
    }

    /// Tokens of a given type.
    pub fn count(&self, word: &[u8]) -> u64 {
        self.by_word.get(word).copied().unwrap_or(0)
    }

    /// Distinct word types currently present.
    pub fn type_count(&self) -> usize {
        self.by_word.len()
    }

    pub fn iter_types(&self) -> impl Iterator<Item = (&[u8], u64)> {
        self.by_word.iter().map(|(w, &c)| (w.as_ref(), c))
    }

    pub fn add(&mut self, word: &[u8], utterance_final: bool) {
        debug_assert!(!word.is_empty());
        match self.by_word.get_mut(word) {
            Some(c) => *c += 1,
            None => {
                self.by_word.insert(word.into(), 1);
            }
        }
        self.n += 1;
        if utterance_final {
            self.n_dollar += 1;
        }
    }

    pub fn remove(&mut self, word: &[u8], utterance_final: bool) {
        let c = self
            .by_word
            .get_mut(word)
            .unwrap_or_else(|| panic!("count invariant violated: removing absent word {:?}", lossy(word)));
        *c -= 1;
        if *c == 0 {
            self.by_word.remove(word);
        }
        assert!(self.n > 0, "count invariant violated: n underflow");
        self.n -= 1;
        if utterance_final {
            assert!(self.n_dollar > 0, "count invariant violated: n_$ underflow");
            self.n_dollar -= 1;
        }
    }

    /// Predictive probability of the next token being `word`:
    /// `(n_word + alpha0 P0(word)) / (n + alpha0)`.
    pub fn predictive(&self, word: &[u8], params: &ModelParams) -> Result<f64, ModelError> {
        let p0 = log_p0(word, params)?.exp();
        Ok(self.predictive_with_p0(word, p0, params.alpha0))
    }

    fn predictive_with_p0(&self, word: &[u8], p0: f64, alpha0: f64) -> f64 {
        let den = self.n as f64 + alpha0;
        if den == 0.0 {
            // alpha0 = 0 with an empty history: no word can be generated
            return 0.0;
        }
        (self.count(word) as f64 + alpha0 * p0) / den
    }

    /// Probability that the `i`-th token (1-based) is utterance-final:
    /// `(n_$ + rho/2) / (i - 1 + rho)`.
    pub fn utterance_final_prob(&self, i: u64, rho: f64) -> f64 {
        assert!(i >= 1, "token index is 1-based");
        (self.n_dollar as f64 + rho / 2.0) / ((i - 1) as f64 + rho)
    }

    /// Two-hypothesis weights at a boundary site. `self` must hold the
    /// shared state `h^-`, i.e. the words currently occupying the site have
    /// already been removed. `w1` must equal `w2` followed by `w3`, and
    /// `utterance_final` says whether the spanned word ends its utterance.
    pub fn h_weights(
        &self,
        w1: &[u8],
        w2: &[u8],
        w3: &[u8],
        utterance_final: bool,
        params: &ModelParams,
    ) -> Result<HypothesisWeights, ModelError> {
        assert!(
            w1.len() == w2.len() + w3.len() && w1.starts_with(w2) && w1.ends_with(w3),
            "w1 must be the concatenation of w2 and w3"
        );
        let p0_w1 = log_p0(w1, params)?.exp();
        let p0_w2 = log_p0(w2, params)?.exp();
        let p0_w3 = log_p0(w3, params)?.exp();
        self.h_weights_with_p0(w2, w3, utterance_final, p0_w1, p0_w2, p0_w3, w1, params)
    }

    /// Formula core shared with the sampler's hot loop, which precomputes
    /// the base probabilities from per-utterance prefix sums.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn h_weights_with_p0(
        &self,
        w2: &[u8],
        w3: &[u8],
        utterance_final: bool,
        p0_w1: f64,
        p0_w2: f64,
        p0_w3: f64,
        w1: &[u8],
        params: &ModelParams,
    ) -> Result<HypothesisWeights, ModelError> {
        let alpha0 = params.alpha0;
        let rho = params.rho;
        let half_rho = rho / 2.0;
        let n = self.n as f64;
        let nd = self.n_dollar as f64;
        let n_u = if utterance_final { nd } else { n - nd };

        // h1: the single word w1 with its utterance-final flag.
        let log_h1 = self.predictive_with_p0(w1, p0_w1, alpha0).ln()
            + ((n_u + half_rho) / (n + rho)).ln();

        // h2: w2 (never utterance-final) then w3, evaluated sequentially;
        // the +1 terms and indicators account for w2 having been added.
        let same_word = (w2 == w3) as u64 as f64;
        let f1 = self.predictive_with_p0(w2, p0_w2, alpha0);
        let f2 = (n - nd + half_rho) / (n + rho);
        let f3 = (self.count(w3) as f64 + same_word + alpha0 * p0_w3) / (n + 1.0 + alpha0);
        let n_u3 = if utterance_final { nd } else { n - nd + 1.0 };
        let f4 = (n_u3 + half_rho) / (n + 1.0 + rho);
        let log_h2 = f1.ln() + f2.ln() + f3.ln() + f4.ln();

        HypothesisWeights::new(log_h1, log_h2)
    }

    /// Exact log joint probability computed from the current counts via the
    /// exchangeable closed form (order-independent). Equal to
    /// [`log_joint_unigram`] on the state the counts were built from.
    pub fn log_joint(&self, params: &ModelParams) -> Result<f64, ModelError> {
        let alpha0 = params.alpha0;
        let rho = params.rho;
        let half_rho = rho / 2.0;
        let mut lp = 0.0;
        for (word, &count) in &self.by_word {
            let a0p0 = alpha0 * log_p0(word, params)?.exp();
            for j in 0..count {
                lp += (j as f64 + a0p0).ln();
            }
        }
        for i in 0..self.n {
            lp -= (i as f64 + alpha0).ln();
        }
        for j in 0..self.n_dollar {
            lp += (j as f64 + half_rho).ln();
        }
        for j in 0..self.n - self.n_dollar {
            lp += (j as f64 + half_rho).ln();
        }
        for i in 0..self.n {
            lp -= (i as f64 + rho).ln();
        }
        Ok(lp)
    }
}

fn lossy(word: &[u8]) -> String {
    String::from_utf8_lossy(word).into_owned()
}

/// Log joint probability of a segmentation under the unigram model: the
/// product of sequential predictive probabilities (word predictive times
/// utterance-final term) over all tokens in corpus order.
pub fn log_joint_unigram(
    corpus: &Corpus,
    state: &SegState,
    params: &ModelParams,
) -> Result<f64, ModelError> {
    let mut counts = UnigramCounts::new();
    let mut lp = 0.0;
    for u in 0..corpus.len() {
        let phonemes = corpus.utterance(u);
        let spans = state.utterance_spans(u);
        let last = spans.len() - 1;
        for (i, &(s, e)) in spans.iter().enumerate() {
            let word = &phonemes[s..e];
            let utterance_final = i == last;
            lp += counts.predictive(word, params)?.ln();
            let p_final = counts.utterance_final_prob(counts.n + 1, params.rho);
            lp += if utterance_final {
                p_final.ln()
            } else {
                (1.0 - p_final).ln()
            };
            counts.add(word, utterance_final);
        }
    }
    Ok(lp)
}
