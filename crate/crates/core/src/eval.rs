//! Character-level precision, recall and F0.5 against multi-reference data.
//!
//! Hypothesis and reference edits are both canonicalized (applied, then
//! re-extracted with [`extract_edits`]) and matched on exact span and
//! replacement. For every sentence the annotator that gives the highest
//! sentence F0.5 is used; counts are then summed over the corpus.

use std::ops::{Add, AddAssign};

use serde::Serialize;

use crate::edit::{extract_edits, EditError, EditSet};

/// Describes how edits are matched; printed with every evaluation report.
pub const MATCHING_NOTE: &str =
    "char-level; edits canonicalized to minimal Levenshtein spans, adjacent changes merged, exact span+replacement match";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EvalCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl EvalCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, fp, fn_ }
    }

    pub fn scores(&self) -> Scores {
        let precision = if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        let recall = if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        };
        Scores::from_pr(precision, recall)
    }
}

impl Add for EvalCounts {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self::new(self.tp + rhs.tp, self.fp + rhs.fp, self.fn_ + rhs.fn_)
    }
}

impl AddAssign for EvalCounts {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for EvalCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f_half: f64,
}

impl Scores {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f_half: f_beta(precision, recall, 0.5),
        }
    }
}

/// `(1 + β²)·P·R / (β²·P + R)`, or 0 when both are 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if precision + recall == 0.0 || denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

fn canonical(source: &str, edits: &EditSet) -> Result<EditSet, EditError> {
    Ok(extract_edits(source, &edits.apply(source)?))
}

fn count(hyp: &EditSet, reference: &EditSet) -> EvalCounts {
    let tp = hyp.iter().filter(|e| reference.contains(e)).count();
    EvalCounts::new(tp, hyp.len() - tp, reference.len() - tp)
}

/// Matches one hypothesis against every annotator's reference and returns
/// the counts of the best-matching annotator with its index.
///
/// The annotator maximizing sentence F0.5 wins; ties go to more true
/// positives, then to the lower index. An empty `references` slice is
/// treated as a single annotator asserting no change.
pub fn match_sentence_with(
    source: &str,
    hyp: &EditSet,
    references: &[EditSet],
) -> Result<(EvalCounts, usize), EditError> {
    let hyp = canonical(source, hyp)?;
    if references.is_empty() {
        return Ok((count(&hyp, &EditSet::empty(hyp.source_len())), 0));
    }
    let mut best: Option<(EvalCounts, usize)> = None;
    for (index, reference) in references.iter().enumerate() {
        let counts = count(&hyp, &canonical(source, reference)?);
        let better = match best {
            None => true,
            Some((b, _)) => {
                let (f, bf) = (counts.scores().f_half, b.scores().f_half);
                f > bf || (f == bf && counts.tp > b.tp)
            }
        };
        if better {
            best = Some((counts, index));
        }
    }
    Ok(best.expect("at least one reference"))
}

pub fn match_sentence(source: &str, hyp: &EditSet, references: &[EditSet]) -> Result<EvalCounts, EditError> {
    match_sentence_with(source, hyp, references).map(|(c, _)| c)
}

/// Micro-averaged scores over per-sentence counts.
pub fn corpus_scores<I: IntoIterator<Item = EvalCounts>>(counts: I) -> Scores {
    counts.into_iter().sum::<EvalCounts>().scores()
}
