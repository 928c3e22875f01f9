//! Phonemic corpora and segmentation state.
//!
//! A corpus is a sequence of utterances, each an ordered sequence of
//! single-character phonemes. Utterance boundaries are fixed; word
//! boundaries are a per-utterance bit-vector over *internal* positions:
//! position `p` of utterance `u` marks a word break between phoneme `p`
//! and phoneme `p + 1` (so an utterance of `M` phonemes has `M - 1`
//! internal positions).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Input format errors, reported with 1-based line numbers.
#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}: empty utterance")]
    EmptyLine { line: usize },
    #[error("line {line}: consecutive, leading, or trailing word separators")]
    EmptyWord { line: usize },
    #[error("line {line}: invalid phoneme {byte:#04x} (must be printable ASCII, not whitespace)")]
    InvalidPhoneme { line: usize, byte: u8 },
    #[error("corpus is empty")]
    EmptyCorpus,
}

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("operation requires gold boundaries, which are absent")]
    MissingGold,
    #[error("empty alphabet")]
    EmptyAlphabet,
    #[error("empty corpus")]
    EmptyCorpus,
}

fn is_valid_phoneme(b: u8) -> bool {
    b > b' ' && b < 0x7f
}

/// A corpus of utterances with optional gold word boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    utterances: Vec<Box<[u8]>>,
    gold: Option<Vec<Vec<bool>>>,
}

impl Corpus {
    /// Parses line-oriented text: one utterance per line, words separated by
    /// single spaces, phonemes single printable-ASCII characters. Gold
    /// boundaries are derived from the spaces; the spaces themselves are not
    /// phonemes.
    pub fn parse(text: &str) -> Result<Corpus, ParseError> {
        let mut utterances = Vec::new();
        let mut gold = Vec::new();
        let mut lines = text.split('\n').collect::<Vec<_>>();
        // One trailing newline is allowed.
        if lines.last() == Some(&"") {
            lines.pop();
        }
        if lines.is_empty() {
            return Err(ParseError::EmptyCorpus);
        }
        for (idx, line) in lines.iter().enumerate() {
            let lineno = idx + 1;
            if line.is_empty() {
                return Err(ParseError::EmptyLine { line: lineno });
            }
            let mut phonemes = Vec::with_capacity(line.len());
            let mut boundaries = Vec::with_capacity(line.len());
            let mut prev_was_space = true; // leading space counts as empty word
            for &b in line.as_bytes() {
                if b == b' ' {
                    if prev_was_space {
                        return Err(ParseError::EmptyWord { line: lineno });
                    }
                    // A space marks a boundary after the last pushed phoneme.
                    *boundaries.last_mut().expect("nonempty word") = true;
                    prev_was_space = true;
                } else if is_valid_phoneme(b) {
                    phonemes.push(b);
                    boundaries.push(false);
                    prev_was_space = false;
                } else {
                    return Err(ParseError::InvalidPhoneme {
                        line: lineno,
                        byte: b,
                    });
                }
            }
            if prev_was_space {
                // line ended with a space
                return Err(ParseError::EmptyWord { line: lineno });
            }
            boundaries.pop(); // drop the slot after the final phoneme
            utterances.push(phonemes.into_boxed_slice());
            gold.push(boundaries);
        }
        Ok(Corpus {
            utterances,
            gold: Some(gold),
        })
    }

    /// Builds a corpus directly from phoneme sequences, without gold
    /// boundaries. Panics if any utterance is empty or contains an invalid
    /// phoneme byte.
    pub fn from_utterances(utterances: Vec<Vec<u8>>) -> Corpus {
        for u in &utterances {
            assert!(!u.is_empty(), "empty utterance");
            assert!(
                u.iter().all(|&b| is_valid_phoneme(b)),
                "invalid phoneme byte"
            );
        }
        Corpus {
            utterances: utterances.into_iter().map(Vec::into_boxed_slice).collect(),
            gold: None,
        }
    }

    /// Attaches gold boundaries; bit-vector shapes must match the utterances.
    pub fn with_gold(mut self, gold: Vec<Vec<bool>>) -> Corpus {
        assert_eq!(gold.len(), self.utterances.len());
        for (u, g) in self.utterances.iter().zip(&gold) {
            assert_eq!(g.len(), u.len().saturating_sub(1));
        }
        self.gold = Some(gold);
        self
    }

    /// First `n` utterances (everything if `n` is larger than the corpus).
    pub fn head(&self, n: usize) -> Corpus {
        let n = n.min(self.utterances.len());
        Corpus {
            utterances: self.utterances[..n].to_vec(),
            gold: self.gold.as_ref().map(|g| g[..n].to_vec()),
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn utterance(&self, u: usize) -> &[u8] {
        &self.utterances[u]
    }

    pub fn utterances(&self) -> impl Iterator<Item = &[u8]> {
        self.utterances.iter().map(|u| u.as_ref())
    }

    pub fn has_gold(&self) -> bool {
        self.gold.is_some()
    }

    pub fn gold_boundaries(&self) -> Option<&[Vec<bool>]> {
        self.gold.as_deref()
    }

    /// Gold segmentation as a state, if gold boundaries are present.
    pub fn gold_state(&self) -> Option<SegState> {
        self.gold.as_ref().map(|g| SegState {
            boundaries: g.clone(),
        })
    }

    /// Total number of utterance-internal boundary positions.
    pub fn internal_positions(&self) -> usize {
        self.utterances.iter().map(|u| u.len() - 1).sum()
    }

    /// Total phoneme count.
    pub fn total_phonemes(&self) -> usize {
        self.utterances.iter().map(|u| u.len()).sum()
    }

    /// Distinct phonemes, sorted.
    pub fn alphabet(&self) -> Vec<u8> {
        let mut seen = [false; 128];
        for u in &self.utterances {
            for &b in u.iter() {
                seen[b as usize] = true;
            }
        }
        (0u8..128).filter(|&b| seen[b as usize]).collect()
    }

    /// Corpus-level summary statistics; requires gold boundaries.
    pub fn stats(&self) -> Result<CorpusStats, CorpusError> {
        let gold = self.gold.as_ref().ok_or(CorpusError::MissingGold)?;
        let utterances = self.utterances.len();
        let phonemes = self.total_phonemes();
        let tokens: usize = gold
            .iter()
            .map(|g| g.iter().filter(|&&b| b).count() + 1)
            .sum();
        let state = SegState {
            boundaries: gold.clone(),
        };
        let mut types = rustc_hash::FxHashSet::default();
        for (u, start, end) in state.token_spans(self) {
            types.insert(&self.utterances[u][start..end]);
        }
        Ok(CorpusStats {
            utterances,
            tokens,
            types: types.len(),
            phonemes,
            words_per_utterance: tokens as f64 / utterances as f64,
            phonemes_per_word: phonemes as f64 / tokens as f64,
        })
    }

    /// Renders the gold segmentation back to Brent-format text.
    pub fn render_gold(&self) -> Result<String, CorpusError> {
        let state = self.gold_state().ok_or(CorpusError::MissingGold)?;
        Ok(state.render(self))
    }
}

/// Summary statistics over a gold-segmented corpus.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CorpusStats {
    pub utterances: usize,
    pub tokens: usize,
    pub types: usize,
    pub phonemes: usize,
    pub words_per_utterance: f64,
    pub phonemes_per_word: f64,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "utterances\t{}", self.utterances)?;
        writeln!(f, "tokens\t{}", self.tokens)?;
        writeln!(f, "types\t{}", self.types)?;
        writeln!(f, "phonemes\t{}", self.phonemes)?;
        writeln!(f, "words_per_utterance\t{:.4}", self.words_per_utterance)?;
        write!(f, "phonemes_per_word\t{:.4}", self.phonemes_per_word)
    }
}

/// A probability distribution over single-character phonemes.
#[derive(Clone)]
pub struct PhonemeDist {
    probs: [f64; 128],
    log_probs: [f64; 128],
    alphabet: Vec<u8>,
}

impl fmt::Debug for PhonemeDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhonemeDist")
            .field("alphabet", &String::from_utf8_lossy(&self.alphabet))
            .finish()
    }
}

impl PhonemeDist {
    fn from_probs(pairs: impl IntoIterator<Item = (u8, f64)>) -> PhonemeDist {
        let mut probs = [0.0f64; 128];
        let mut log_probs = [f64::NEG_INFINITY; 128];
        let mut alphabet = Vec::new();
        for (b, p) in pairs {
            assert!(is_valid_phoneme(b), "invalid phoneme byte {b:#04x}");
            assert!(p > 0.0, "phoneme probability must be positive");
            assert!(probs[b as usize] == 0.0, "duplicate phoneme");
            probs[b as usize] = p;
            log_probs[b as usize] = p.ln();
            alphabet.push(b);
        }
        alphabet.sort_unstable();
        let total: f64 = probs.iter().sum();
        assert!(
            (total - 1.0).abs() <= 1e-9,
            "phoneme probabilities sum to {total}, expected 1"
        );
        PhonemeDist {
            probs,
            log_probs,
            alphabet,
        }
    }

    /// Relative-frequency distribution over the corpus phonemes. Word
    /// boundaries are not phonemes and do not contribute.
    pub fn empirical(corpus: &Corpus) -> Result<PhonemeDist, CorpusError> {
        if corpus.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut counts = [0u64; 128];
        let mut total = 0u64;
        for u in corpus.utterances() {
            for &b in u {
                counts[b as usize] += 1;
                total += 1;
            }
        }
        Ok(PhonemeDist::from_probs((0u8..128).filter_map(|b| {
            let c = counts[b as usize];
            (c > 0).then(|| (b, c as f64 / total as f64))
        })))
    }

    /// Uniform distribution over an explicit alphabet.
    pub fn uniform(alphabet: &[u8]) -> Result<PhonemeDist, CorpusError> {
        if alphabet.is_empty() {
            return Err(CorpusError::EmptyAlphabet);
        }
        let mut dedup: Vec<u8> = alphabet.to_vec();
        dedup.sort_unstable();
        dedup.dedup();
        let p = 1.0 / dedup.len() as f64;
        Ok(PhonemeDist::from_probs(dedup.into_iter().map(|b| (b, p))))
    }

    /// Explicit probabilities; must sum to 1 within 1e-9.
    pub fn from_pairs(pairs: &[(u8, f64)]) -> PhonemeDist {
        PhonemeDist::from_probs(pairs.iter().copied())
    }

    pub fn contains(&self, phoneme: u8) -> bool {
        (phoneme as usize) < 128 && self.probs[phoneme as usize] > 0.0
    }

    pub fn prob(&self, phoneme: u8) -> f64 {
        self.probs[phoneme as usize & 127]
    }

    pub fn log_prob(&self, phoneme: u8) -> f64 {
        self.log_probs[phoneme as usize & 127]
    }

    pub fn alphabet(&self) -> &[u8] {
        &self.alphabet
    }

    /// True when every phoneme of the corpus has nonzero probability.
    pub fn supports(&self, corpus: &Corpus) -> bool {
        corpus.utterances().all(|u| u.iter().all(|&b| self.contains(b)))
    }

    /// Map view for serialization and display.
    pub fn to_map(&self) -> BTreeMap<char, f64> {
        self.alphabet
            .iter()
            .map(|&b| (b as char, self.probs[b as usize]))
            .collect()
    }
}

/// A segmentation hypothesis: one boundary bit-vector per utterance.
///
/// Splitting each utterance at its set bits (plus the utterance ends) yields
/// the word tokens; concatenating the tokens reproduces the phoneme sequence
/// exactly, and every token is non-empty by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegState {
    boundaries: Vec<Vec<bool>>,
}

impl SegState {
    /// State with no internal boundaries: each utterance one token.
    pub fn unsegmented(corpus: &Corpus) -> SegState {
        SegState {
            boundaries: corpus
                .utterances()
                .map(|u| vec![false; u.len() - 1])
                .collect(),
        }
    }

    /// Each internal position set independently with probability `p_init`;
    /// deterministic given `seed`.
    pub fn random_init(corpus: &Corpus, p_init: f64, seed: u64) -> SegState {
        assert!((0.0..=1.0).contains(&p_init), "p_init out of range");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SegState {
            boundaries: corpus
                .utterances()
                .map(|u| (1..u.len()).map(|_| rng.gen::<f64>() < p_init).collect())
                .collect(),
        }
    }

    /// Starts from gold and toggles a uniformly random internal position `k`
    /// times, with replacement (the same position may be toggled more than
    /// once). Deterministic given `seed`.
    pub fn perturb_gold(corpus: &Corpus, k: usize, seed: u64) -> Result<SegState, CorpusError> {
        let mut state = corpus.gold_state().ok_or(CorpusError::MissingGold)?;
        let total = corpus.internal_positions();
        if total == 0 {
            return Ok(state);
        }
        // Flat index -> (utterance, position) lookup.
        let mut offsets = Vec::with_capacity(corpus.len());
        let mut acc = 0usize;
        for u in corpus.utterances() {
            offsets.push(acc);
            acc += u.len() - 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..k {
            let flat = rng.gen_range(0..total);
            let u = match offsets.binary_search(&flat) {
                Ok(i) => i,
                Err(i) => i - 1,
            };
            let p = flat - offsets[u];
            state.boundaries[u][p] = !state.boundaries[u][p];
        }
        Ok(state)
    }

    pub fn matches_shape(&self, corpus: &Corpus) -> bool {
        self.boundaries.len() == corpus.len()
            && self
                .boundaries
                .iter()
                .zip(corpus.utterances())
                .all(|(b, u)| b.len() == u.len() - 1)
    }

    pub fn utterance_boundaries(&self, u: usize) -> &[bool] {
        &self.boundaries[u]
    }

    pub fn utterance_boundaries_mut(&mut self, u: usize) -> &mut [bool] {
        &mut self.boundaries[u]
    }

    pub fn boundaries(&self) -> &[Vec<bool>] {
        &self.boundaries
    }

    pub fn get(&self, u: usize, p: usize) -> bool {
        self.boundaries[u][p]
    }

    pub fn set(&mut self, u: usize, p: usize, v: bool) {
        self.boundaries[u][p] = v;
    }

    /// Number of set internal boundaries.
    pub fn boundary_count(&self) -> usize {
        self.boundaries
            .iter()
            .map(|b| b.iter().filter(|&&x| x).count())
            .sum()
    }

    /// Total word tokens under this segmentation.
    pub fn token_count(&self) -> usize {
        self.boundary_count() + self.boundaries.len()
    }

    /// Word spans of utterance `u` as half-open phoneme ranges.
    pub fn utterance_spans(&self, u: usize) -> Vec<(usize, usize)> {
        let b = &self.boundaries[u];
        let mut spans = Vec::with_capacity(8);
        let mut start = 0usize;
        for (p, &set) in b.iter().enumerate() {
            if set {
                spans.push((start, p + 1));
                start = p + 1;
            }
        }
        spans.push((start, b.len() + 1));
        spans
    }

    /// All token spans, as `(utterance, start, end)` triples in corpus order.
    pub fn token_spans<'a>(
        &'a self,
        corpus: &'a Corpus,
    ) -> impl Iterator<Item = (usize, usize, usize)> + 'a {
        debug_assert!(self.matches_shape(corpus));
        (0..self.boundaries.len()).flat_map(move |u| {
            self.utterance_spans(u)
                .into_iter()
                .map(move |(s, e)| (u, s, e))
        })
    }

    /// Hamming distance between two states of identical shape.
    pub fn hamming(&self, other: &SegState) -> usize {
        assert_eq!(self.boundaries.len(), other.boundaries.len());
        self.boundaries
            .iter()
            .zip(&other.boundaries)
            .map(|(a, b)| {
                assert_eq!(a.len(), b.len());
                a.iter().zip(b).filter(|(x, y)| x != y).count()
            })
            .sum()
    }

    /// Renders the segmentation as Brent-format text (one utterance per
    /// line, single spaces at word boundaries, trailing newline).
    pub fn render(&self, corpus: &Corpus) -> String {
        assert!(self.matches_shape(corpus));
        let mut out = String::with_capacity(corpus.total_phonemes() * 2);
        for u in 0..corpus.len() {
            let phonemes = corpus.utterance(u);
            for (s, e) in self.utterance_spans(u) {
                if s > 0 {
                    out.push(' ');
                }
                out.push_str(std::str::from_utf8(&phonemes[s..e]).expect("ascii"));
            }
            out.push('\n');
        }
        out
    }
}
