//! Model parameters and probability computations shared by both models.
//!
//! Probabilities are computed and accumulated in log space; the two-way
//! choice between boundary hypotheses exponentiates only the difference of
//! log weights, so long words cannot underflow a linear-space product.

pub mod bigram;
pub mod unigram;

use crate::corpus::PhonemeDist;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("phoneme {0:?} is outside the phoneme distribution's support")]
    UnknownPhoneme(char),
    #[error("words must contain at least one phoneme")]
    EmptyWord,
    #[error("invalid model parameter: {0}")]
    InvalidParams(String),
    #[error("both hypotheses have zero weight (degenerate prior: alpha0 = 0 with unseen words)")]
    DegenerateWeights,
}

/// Which generative model drives sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Unigram,
    Bigram,
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Model::Unigram => write!(f, "unigram"),
            Model::Bigram => write!(f, "bigram"),
        }
    }
}

/// Fixed hyperparameters.
///
/// `alpha0` is the word-level concentration, `alpha1` the bigram-level
/// concentration (used by the bigram model only), `p_hash` the probability
/// that a word ends after each phoneme, and `rho` the symmetric Beta prior
/// parameter for the utterance-final probability.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub p_hash: f64,
    pub rho: f64,
    pub phoneme_dist: PhonemeDist,
}

impl ModelParams {
    /// Validation gate for inference. `p_hash = 1` is rejected here (it
    /// zeroes every multi-phoneme word) but is accepted by the generator.
    pub fn validate(&self, model: Model) -> Result<(), ModelError> {
        if !(self.alpha0 >= 0.0 && self.alpha0.is_finite()) {
            return Err(ModelError::InvalidParams(format!(
                "alpha0 must be finite and >= 0, got {}",
                self.alpha0
            )));
        }
        if model == Model::Bigram && !(self.alpha1 >= 0.0 && self.alpha1.is_finite()) {
            return Err(ModelError::InvalidParams(format!(
                "alpha1 must be finite and >= 0, got {}",
                self.alpha1
            )));
        }
        if !(self.p_hash > 0.0 && self.p_hash < 1.0) {
            return Err(ModelError::InvalidParams(format!(
                "p_hash must lie strictly between 0 and 1, got {}",
                self.p_hash
            )));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(ModelError::InvalidParams(format!(
                "rho must be finite and > 0, got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// Log base probability of a novel word:
/// `ln[ p# (1-p#)^(M-1) prod_j P(x_j) ]` for a word of `M` phonemes.
///
/// A phoneme outside the distribution's support is an error, distinct from
/// a zero-probability result.
pub fn log_p0(word: &[u8], params: &ModelParams) -> Result<f64, ModelError> {
    if word.is_empty() {
        return Err(ModelError::EmptyWord);
    }
    let mut lp = params.p_hash.ln() + (word.len() - 1) as f64 * (1.0 - params.p_hash).ln();
    for &b in word {
        if !params.phoneme_dist.contains(b) {
            return Err(ModelError::UnknownPhoneme(b as char));
        }
        lp += params.phoneme_dist.log_prob(b);
    }
    Ok(lp)
}

/// Linear-space convenience wrapper around [`log_p0`].
pub fn p0(word: &[u8], params: &ModelParams) -> Result<f64, ModelError> {
    log_p0(word, params).map(f64::exp)
}

/// Unnormalized conditional weights of the two hypotheses at a boundary
/// site, held in log space. `h1` is "no boundary" (one word spans the
/// site), `h2` is "boundary" (the span splits in two).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisWeights {
    log_h1: f64,
    log_h2: f64,
}

impl HypothesisWeights {
    pub fn new(log_h1: f64, log_h2: f64) -> Result<HypothesisWeights, ModelError> {
        if log_h1.is_nan() || log_h2.is_nan() || log_h1 > 0.0 || log_h2 > 0.0 {
            return Err(ModelError::InvalidParams(format!(
                "hypothesis log weights out of range: {log_h1}, {log_h2}"
            )));
        }
        if log_h1 == f64::NEG_INFINITY && log_h2 == f64::NEG_INFINITY {
            return Err(ModelError::DegenerateWeights);
        }
        Ok(HypothesisWeights { log_h1, log_h2 })
    }

    pub fn log_h1(&self) -> f64 {
        self.log_h1
    }

    pub fn log_h2(&self) -> f64 {
        self.log_h2
    }

    /// Linear-space weight of "no boundary".
    pub fn w_h1(&self) -> f64 {
        self.log_h1.exp()
    }

    /// Linear-space weight of "boundary".
    pub fn w_h2(&self) -> f64 {
        self.log_h2.exp()
    }

    /// Normalized probability of choosing the boundary hypothesis after
    /// raising both weights to `1/gamma`.
    pub fn p_boundary(&self, gamma: f64) -> f64 {
        debug_assert!(gamma >= 1.0);
        let d = (self.log_h2 - self.log_h1) / gamma;
        sigmoid(d)
    }
}

/// `1 / (1 + exp(-d))`, correct for infinite `d`.
pub(crate) fn sigmoid(d: f64) -> f64 {
    if d == f64::NEG_INFINITY {
        0.0
    } else if d == f64::INFINITY {
        1.0
    } else {
        1.0 / (1.0 + (-d).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PhonemeDist;

    fn uniform_ab() -> ModelParams {
        ModelParams {
            alpha0: 20.0,
            alpha1: 0.0,
            p_hash: 0.5,
            rho: 2.0,
            phoneme_dist: PhonemeDist::uniform(b"ab").unwrap(),
        }
    }

    #[test]
    fn p0_direct_products() {
        let params = uniform_ab();
        assert!((p0(b"a", &params).unwrap() - 0.25).abs() < 1e-15);
        assert!((p0(b"ab", &params).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn p0_rejects_unknown_phoneme_and_empty_word() {
        let params = uniform_ab();
        assert!(matches!(
            p0(b"ax", &params),
            Err(ModelError::UnknownPhoneme('x'))
        ));
        assert!(matches!(p0(b"", &params), Err(ModelError::EmptyWord)));
    }

    #[test]
    fn p0_monte_carlo_forward_simulation() {
        // Independent oracle: draw words by the two-step phoneme process
        // (phoneme uniform over {a, b}; stop with probability p# after each)
        // and compare the empirical frequency of "ab" with p0.
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let params = uniform_ab();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20260810);
        let trials = 1_000_000usize;
        let mut hits = 0usize;
        for _ in 0..trials {
            let mut word = Vec::new();
            loop {
                let ph = if rng.gen::<f64>() < 0.5 { b'a' } else { b'b' };
                word.push(ph);
                if rng.gen::<f64>() < params.p_hash {
                    break;
                }
            }
            if word == b"ab" {
                hits += 1;
            }
        }
        let freq = hits as f64 / trials as f64;
        assert!(
            (freq - 0.0625).abs() <= 0.001,
            "forward-simulated frequency {freq} should match p0 = 0.0625"
        );
    }

    #[test]
    fn params_validation() {
        let mut p = uniform_ab();
        assert!(p.validate(Model::Unigram).is_ok());
        p.p_hash = 1.0;
        assert!(p.validate(Model::Unigram).is_err());
        p.p_hash = 0.5;
        p.alpha0 = -1.0;
        assert!(p.validate(Model::Unigram).is_err());
        p.alpha0 = 20.0;
        p.rho = 0.0;
        assert!(p.validate(Model::Unigram).is_err());
        p.rho = 2.0;
        p.alpha1 = -5.0;
        assert!(p.validate(Model::Unigram).is_ok());
        assert!(p.validate(Model::Bigram).is_err());
    }

    #[test]
    fn weight_scale_invariance() {
        let w = HypothesisWeights::new(-2.0, -3.0).unwrap();
        let scaled = HypothesisWeights::new(-2.0 - 1.5, -3.0 - 1.5).unwrap();
        assert!((w.p_boundary(1.0) - scaled.p_boundary(1.0)).abs() < 1e-15);
    }

    #[test]
    fn infinite_temperature_is_fair_coin() {
        let w = HypothesisWeights::new(-1.0, -40.0).unwrap();
        assert!((w.p_boundary(1e18) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_weights_rejected() {
        assert!(matches!(
            HypothesisWeights::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
            Err(ModelError::DegenerateWeights)
        ));
        // one-sided zero weight is fine and forces the other hypothesis
        let w = HypothesisWeights::new(f64::NEG_INFINITY, -1.0).unwrap();
        assert_eq!(w.p_boundary(1.0), 1.0);
        let w = HypothesisWeights::new(-1.0, f64::NEG_INFINITY).unwrap();
        assert_eq!(w.p_boundary(1.0), 0.0);
    }
}
