//! Scoring predicted segmentations against gold: token, boundary, and
//! lexicon precision/recall/F, plus descriptive outputs.
//!
//! Boundary scores cover utterance-internal positions only — utterance
//! boundaries are given to the model, not inferred. A word token is correct
//! only when both of its edges match a gold token exactly. Lexicon scores
//! compare the sets of word types discovered within the evaluated corpus.

use crate::corpus::{Corpus, SegState};
use rustc_hash::FxHashSet;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("corpus has no gold boundaries to score against")]
    MissingGold,
    #[error("predicted segmentation does not cover the same phoneme sequences as the corpus")]
    CorpusMismatch,
}

/// Precision, recall, and their F score.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f: f64,
}

impl Prf {
    fn from_counts(correct: usize, predicted: usize, gold: usize) -> Prf {
        let p = ratio(correct, predicted);
        let r = ratio(correct, gold);
        Prf { p, r, f: f0(p, r) }
    }
}

/// Degenerate precision or recall with an empty denominator is 0, not NaN.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `F0 = 2PR / (P + R)`, the harmonic mean of precision and recall;
/// 0 when both are 0.
pub fn f0(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check(pred: &SegState, gold: &Corpus) -> Result<SegState, EvalError> {
    let gold_state = gold.gold_state().ok_or(EvalError::MissingGold)?;
    if !pred.matches_shape(gold) {
        return Err(EvalError::CorpusMismatch);
    }
    Ok(gold_state)
}

/// Token scores: a predicted token is correct iff its exact span appears as
/// a gold token.
pub fn token_scores(pred: &SegState, gold: &Corpus) -> Result<Prf, EvalError> {
    let gold_state = check(pred, gold)?;
    let mut correct = 0usize;
    let mut predicted = 0usize;
    let mut gold_tokens = 0usize;
    for u in 0..gold.len() {
        let ps = pred.utterance_spans(u);
        let gs = gold_state.utterance_spans(u);
        predicted += ps.len();
        gold_tokens += gs.len();
        // both span lists are sorted by start; walk them together
        let (mut i, mut j) = (0usize, 0usize);
        while i < ps.len() && j < gs.len() {
            match ps[i].cmp(&gs[j]) {
                std::cmp::Ordering::Equal => {
                    correct += 1;
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
    }
    Ok(Prf::from_counts(correct, predicted, gold_tokens))
}

/// Boundary scores over utterance-internal positions.
pub fn boundary_scores(pred: &SegState, gold: &Corpus) -> Result<Prf, EvalError> {
    let gold_state = check(pred, gold)?;
    let mut correct = 0usize;
    let mut predicted = 0usize;
    let mut gold_count = 0usize;
    for u in 0..gold.len() {
        for (p, g) in pred
            .utterance_boundaries(u)
            .iter()
            .zip(gold_state.utterance_boundaries(u))
        {
            predicted += *p as usize;
            gold_count += *g as usize;
            correct += (*p && *g) as usize;
        }
    }
    Ok(Prf::from_counts(correct, predicted, gold_count))
}

/// Lexicon scores: set comparison of discovered vs gold word types within
/// the evaluated corpus.
pub fn lexicon_scores(pred: &SegState, gold: &Corpus) -> Result<Prf, EvalError> {
    let gold_state = check(pred, gold)?;
    let pred_types: FxHashSet<&[u8]> = pred
        .token_spans(gold)
        .map(|(u, s, e)| &gold.utterance(u)[s..e])
        .collect();
    let gold_types: FxHashSet<&[u8]> = gold_state
        .token_spans(gold)
        .map(|(u, s, e)| &gold.utterance(u)[s..e])
        .collect();
    let correct = pred_types.intersection(&gold_types).count();
    Ok(Prf::from_counts(correct, pred_types.len(), gold_types.len()))
}

/// Words sorted by descending token count, ties broken lexicographically.
pub fn top_k_words(state: &SegState, corpus: &Corpus, k: usize) -> Vec<(String, u64)> {
    let mut counts: rustc_hash::FxHashMap<&[u8], u64> = Default::default();
    for (u, s, e) in state.token_spans(corpus) {
        *counts.entry(&corpus.utterance(u)[s..e]).or_insert(0) += 1;
    }
    let mut items: Vec<(&[u8], u64)> = counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    items.truncate(k);
    items
        .into_iter()
        .map(|(w, c)| (String::from_utf8_lossy(w).into_owned(), c))
        .collect()
}

/// Mean token length in phonemes.
pub fn mean_word_length(state: &SegState, corpus: &Corpus) -> f64 {
    corpus.total_phonemes() as f64 / state.token_count() as f64
}

/// The full nine-score report plus descriptive statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalReport {
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "BP")]
    pub bp: f64,
    #[serde(rename = "BR")]
    pub br: f64,
    #[serde(rename = "BF")]
    pub bf: f64,
    #[serde(rename = "LP")]
    pub lp: f64,
    #[serde(rename = "LR")]
    pub lr: f64,
    #[serde(rename = "LF")]
    pub lf: f64,
    pub mean_pred_len: f64,
    pub mean_gold_len: f64,
    pub pred_tokens: usize,
    pub gold_tokens: usize,
}

impl EvalReport {
    pub fn token(&self) -> Prf {
        Prf {
            p: self.p,
            r: self.r,
            f: self.f,
        }
    }

    pub fn boundary(&self) -> Prf {
        Prf {
            p: self.bp,
            r: self.br,
            f: self.bf,
        }
    }

    pub fn lexicon(&self) -> Prf {
        Prf {
            p: self.lp,
            r: self.lr,
            f: self.lf,
        }
    }

    /// Stable column order shared by [`EvalReport::tsv_row`].
    pub fn tsv_header() -> &'static str {
        "P\tR\tF\tBP\tBR\tBF\tLP\tLR\tLF\tmean_pred_len\tmean_gold_len\tpred_tokens\tgold_tokens"
    }

    pub fn tsv_row(&self) -> String {
        let mut row = String::new();
        for v in [
            self.p, self.r, self.f, self.bp, self.br, self.bf, self.lp, self.lr, self.lf,
            self.mean_pred_len, self.mean_gold_len,
        ] {
            let _ = write!(row, "{v:.6}\t");
        }
        let _ = write!(row, "{}\t{}", self.pred_tokens, self.gold_tokens);
        row
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores a prediction on all nine metrics.
pub fn evaluate(pred: &SegState, gold: &Corpus) -> Result<EvalReport, EvalError> {
    let token = token_scores(pred, gold)?;
    let boundary = boundary_scores(pred, gold)?;
    let lexicon = lexicon_scores(pred, gold)?;
    let gold_state = gold.gold_state().expect("checked by token_scores");
    Ok(EvalReport {
        p: token.p,
        r: token.r,
        f: token.f,
        bp: boundary.p,
        br: boundary.r,
        bf: boundary.f,
        lp: lexicon.p,
        lr: lexicon.r,
        lf: lexicon.f,
        mean_pred_len: mean_word_length(pred, gold),
        mean_gold_len: mean_word_length(&gold_state, gold),
        pred_tokens: pred.token_count(),
        gold_tokens: gold_state.token_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f0_values() {
        assert_eq!(f0(0.5, 0.5), 0.5);
        assert_eq!(f0(1.0, 0.0), 0.0);
        assert_eq!(f0(0.0, 0.0), 0.0);
        let f = f0(0.682, 0.543);
        assert!((f - 2.0 * 0.682 * 0.543 / (0.682 + 0.543)).abs() < 1e-15);
        assert_eq!((f * 1000.0).round() as i64, 605);
    }

    #[test]
    fn identity_scores_all_ones() {
        let c = Corpus::parse("lookat this\nab ab cd").unwrap();
        let gold = c.gold_state().unwrap();
        let report = evaluate(&gold, &c).unwrap();
        for v in [
            report.p, report.r, report.f, report.bp, report.br, report.bf, report.lp,
            report.lr, report.lf,
        ] {
            assert_eq!(v, 1.0);
        }
        assert_eq!(report.mean_pred_len, report.mean_gold_len);
    }

    #[test]
    fn token_scores_hand_enumeration() {
        // gold "look at this" vs predicted "lookat this":
        // correct spans = {this}; P = 1/2, R = 1/3, F = 0.4
        let c = Corpus::parse("look at this").unwrap();
        let mut pred = SegState::unsegmented(&c);
        pred.set(0, 5, true); // "lookat | this"
        let t = token_scores(&pred, &c).unwrap();
        assert!((t.p - 0.5).abs() < 1e-15);
        assert!((t.r - 1.0 / 3.0).abs() < 1e-15);
        assert!((t.f - 0.4).abs() < 1e-15);
        let l = lexicon_scores(&pred, &c).unwrap();
        assert!((l.p - 0.5).abs() < 1e-15);
        assert!((l.r - 1.0 / 3.0).abs() < 1e-15);
        assert!((l.f - 0.4).abs() < 1e-15);
    }

    #[test]
    fn unsegmented_prediction_degenerates() {
        let c = Corpus::parse("look at this\nok").unwrap();
        let pred = SegState::unsegmented(&c);
        let t = token_scores(&pred, &c).unwrap();
        // only the single-word utterance "ok" is a correct token
        assert!((t.p - 0.5).abs() < 1e-15);
        assert!((t.r - 0.25).abs() < 1e-15);
        let b = boundary_scores(&pred, &c).unwrap();
        assert_eq!((b.p, b.r, b.f), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mismatch_and_missing_gold_errors() {
        let c = Corpus::parse("ab cd").unwrap();
        let other = Corpus::parse("ab cd ef").unwrap();
        let pred = SegState::unsegmented(&other);
        assert_eq!(token_scores(&pred, &c).unwrap_err(), EvalError::CorpusMismatch);
        let no_gold = Corpus::from_utterances(vec![b"abcd".to_vec()]);
        let pred = SegState::unsegmented(&no_gold);
        assert_eq!(token_scores(&pred, &no_gold).unwrap_err(), EvalError::MissingGold);
    }

    #[test]
    fn top_k_ordering() {
        let c = Corpus::parse("ab ab cd").unwrap();
        let gold = c.gold_state().unwrap();
        assert_eq!(top_k_words(&gold, &c, 1), vec![("ab".to_string(), 2)]);
        // k larger than the type count returns everything
        assert_eq!(
            top_k_words(&gold, &c, 10),
            vec![("ab".to_string(), 2), ("cd".to_string(), 1)]
        );
        // ties break lexicographically
        let c = Corpus::parse("zz aa").unwrap();
        let gold = c.gold_state().unwrap();
        assert_eq!(
            top_k_words(&gold, &c, 2),
            vec![("aa".to_string(), 1), ("zz".to_string(), 1)]
        );
    }

    #[test]
    fn mean_word_length_values() {
        let c = Corpus::parse("ab cd").unwrap();
        let all_split = SegState::random_init(&c, 1.0, 0);
        assert_eq!(mean_word_length(&all_split, &c), 1.0);
        let gold = c.gold_state().unwrap();
        assert_eq!(mean_word_length(&gold, &c), 2.0);
    }

    #[test]
    fn f_consistency_in_reports() {
        let c = Corpus::parse("look at this\nab ab").unwrap();
        for seed in 0..10 {
            let pred = SegState::random_init(&c, 0.5, seed);
            let r = evaluate(&pred, &c).unwrap();
            assert!((r.f - f0(r.p, r.r)).abs() < 1e-12);
            assert!((r.bf - f0(r.bp, r.br)).abs() < 1e-12);
            assert!((r.lf - f0(r.lp, r.lr)).abs() < 1e-12);
        }
    }

    #[test]
    fn token_precision_recall_symmetry() {
        // P(pred vs gold) equals R with the roles swapped
        let text = "look at this\nab ab";
        let c = Corpus::parse(text).unwrap();
        let pred = SegState::random_init(&c, 0.5, 9);
        let swapped = Corpus::parse(text)
            .unwrap()
            .with_gold(pred.boundaries().to_vec());
        let gold_as_pred = c.gold_state().unwrap();
        let forward = token_scores(&pred, &c).unwrap();
        let backward = token_scores(&gold_as_pred, &swapped).unwrap();
        assert!((forward.p - backward.r).abs() < 1e-15);
        assert!((forward.r - backward.p).abs() < 1e-15);
    }

    #[test]
    fn report_schema_keys() {
        let c = Corpus::parse("ab cd").unwrap();
        let r = evaluate(&c.gold_state().unwrap(), &c).unwrap();
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in [
            "P", "R", "F", "BP", "BR", "BF", "LP", "LR", "LF", "mean_pred_len",
            "mean_gold_len",
        ] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(
            EvalReport::tsv_header().split('\t').count(),
            r.tsv_row().split('\t').count()
        );
    }

    #[test]
    fn flipping_correct_boundary_never_raises_bf() {
        let c = Corpus::parse("look at this\nab ab\nxy z qrs").unwrap();
        let gold = c.gold_state().unwrap();
        for seed in 0..20 {
            let pred = SegState::random_init(&c, 0.5, seed);
            let before = boundary_scores(&pred, &c).unwrap().f;
            // flip the first position where pred agrees with gold
            let mut flipped = pred.clone();
            'outer: for u in 0..c.len() {
                for p in 0..c.utterance(u).len() - 1 {
                    if pred.get(u, p) == gold.get(u, p) {
                        flipped.set(u, p, !pred.get(u, p));
                        break 'outer;
                    }
                }
            }
            let after = boundary_scores(&flipped, &c).unwrap().f;
            assert!(
                after <= before + 1e-12,
                "BF rose from {before} to {after} (seed {seed})"
            );
        }
    }
}
