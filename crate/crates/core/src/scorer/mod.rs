//! Sentence perplexity and the backends that produce it.
//!
//! Strategies in [`crate::ensemble`] only ever compare perplexities, so any
//! [`Scorer`] can drive them. Two backends ship here: a character n-gram
//! model ([`NGramModel`]) and a client for an external scoring process that
//! speaks newline-delimited JSON ([`ExternalScorer`]).

mod external;
mod ngram;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use external::{ExternalScorer, ScorerReply, ScorerRequest, SCORER_CMD_ENV};
pub use ngram::{NGramModel, DEFAULT_K, DEFAULT_ORDER};

/// Probabilities below this are raised to it before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("empty token sequence")]
    EmptyTokens,
    #[error("token negative log-probability {value} at position {position} is not a finite non-negative number")]
    InvalidLogProb { position: usize, value: f64 },
    #[error("cannot score an empty sentence")]
    EmptySentence,
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("invalid n-gram parameters: {0}")]
    InvalidParameters(String),
    #[error("request {id}: scorer protocol violation: {message}")]
    Protocol { id: u64, message: String },
    #[error("request {id}: scorer reported error: {message}")]
    Remote { id: u64, message: String },
    #[error("request {id}: scorer returned non-finite nll")]
    NonFinite { id: u64 },
    #[error("request {id}: no reply from scorer within {seconds:.1}s")]
    Timeout { id: u64, seconds: f64 },
    #[error("scorer process I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("sentence {index} of batch: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<ScoreError>,
    },
    #[error("malformed model file: {0}")]
    Model(String),
}

/// Per-token negative natural-log probabilities of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogProbs(Vec<f64>);

impl TokenLogProbs {
    /// Validates `nll` (non-empty, finite, non-negative) and applies the
    /// probability floor.
    pub fn new(nll: Vec<f64>) -> Result<Self, ScoreError> {
        if nll.is_empty() {
            return Err(ScoreError::EmptyTokens);
        }
        let ceiling = -PROBABILITY_FLOOR.ln();
        let mut nll = nll;
        for (position, v) in nll.iter_mut().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(ScoreError::InvalidLogProb { position, value: *v });
            }
            *v = v.min(ceiling);
        }
        Ok(Self(nll))
    }

    pub fn from_probs(probs: &[f64]) -> Result<Self, ScoreError> {
        Self::new(probs.iter().map(|p| -p.max(PROBABILITY_FLOOR).ln()).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Geometric mean of inverse token probabilities. Lower is more fluent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Perplexity(f64);

impl Perplexity {
    /// Wraps an already computed perplexity; must be finite and positive.
    pub fn from_value(value: f64) -> Option<Self> {
        (value.is_finite() && value > 0.0).then_some(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Total order on the raw float; perplexities are always finite.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Perplexity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// `exp(mean(nll))`, computed in log space.
pub fn perplexity(probs: &TokenLogProbs) -> Perplexity {
    let mean = probs.0.iter().sum::<f64>() / probs.0.len() as f64;
    Perplexity(mean.exp())
}

/// A source of sentence perplexities.
pub trait Scorer: Sync {
    fn score(&self, sentence: &str) -> Result<Perplexity, ScoreError>;

    /// Scores every sentence, preserving order. The first failure fails the
    /// whole batch and names its index.
    fn score_batch(&self, sentences: &[&str]) -> Result<Vec<Perplexity>, ScoreError> {
        sentences
            .iter()
            .enumerate()
            .map(|(index, s)| {
                self.score(s).map_err(|e| ScoreError::Batch {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, sentence: &str) -> Result<Perplexity, ScoreError> {
        (**self).score(sentence)
    }

    fn score_batch(&self, sentences: &[&str]) -> Result<Vec<Perplexity>, ScoreError> {
        (**self).score_batch(sentences)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score(&self, sentence: &str) -> Result<Perplexity, ScoreError> {
        (**self).score(sentence)
    }

    fn score_batch(&self, sentences: &[&str]) -> Result<Vec<Perplexity>, ScoreError> {
        (**self).score_batch(sentences)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_close(a: f64, b: f64) -> bool {
        ((a - b) / b).abs() <= 1e-9
    }

    #[test]
    fn certain_tokens_give_one() {
        let p = perplexity(&TokenLogProbs::new(vec![0.0, 0.0, 0.0]).unwrap());
        assert_eq!(p.value(), 1.0);
    }

    #[test]
    fn single_quarter_gives_four() {
        let p = perplexity(&TokenLogProbs::from_probs(&[0.25]).unwrap());
        assert!(rel_close(p.value(), 4.0));
    }

    #[test]
    fn geometric_mean_of_half_and_eighth() {
        let p = perplexity(&TokenLogProbs::from_probs(&[0.5, 0.125]).unwrap());
        assert!(rel_close(p.value(), 4.0));
    }

    #[test]
    fn empty_is_an_error() {
        let err = TokenLogProbs::new(vec![]).unwrap_err();
        assert_eq!(err.to_string(), "empty token sequence");
    }

    #[test]
    fn rejects_non_finite_and_negative() {
        assert!(TokenLogProbs::new(vec![f64::NAN]).is_err());
        assert!(TokenLogProbs::new(vec![f64::INFINITY]).is_err());
        assert!(TokenLogProbs::new(vec![-0.5]).is_err());
    }

    #[test]
    fn floor_caps_tiny_probabilities() {
        let floored = perplexity(&TokenLogProbs::from_probs(&[0.0]).unwrap());
        assert!(rel_close(floored.value(), 1e12));
        let capped = perplexity(&TokenLogProbs::new(vec![1000.0]).unwrap());
        assert!(rel_close(capped.value(), 1e12));
    }
}
