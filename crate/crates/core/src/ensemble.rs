//! Ensemble strategies over one source sentence and N system edit sets.
//!
//! * [`vote`]: keep edits proposed by at least `T` systems.
//! * [`sentence_level`]: pick the lowest-perplexity sentence among the source
//!   and the system outputs.
//! * [`edit_level`]: pick the lowest-perplexity candidate in every span group
//!   independently and combine the winners.
//! * [`edit_combination`]: score every combination of one candidate per span
//!   group and keep the best, unless the combination count exceeds a cap.
//!
//! Equal perplexities are broken conservatively, in favour of leaving the
//! source alone. Comparisons never depend on the order in which a backend
//! finishes its work.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit::{char_distance, extract_from_chars, group_span_chars, splice, Edit, EditError, EditSet, SpanGroup};
use crate::scorer::{Perplexity, ScoreError, Scorer};

/// Largest number of edit combinations scored per sentence by default.
pub const DEFAULT_COMBINATION_CAP: u64 = 300;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("an ensemble needs at least 2 systems, got {0}")]
    TooFewSystems(usize),
    #[error("system {system}: {source}")]
    InvalidSystem {
        system: usize,
        #[source]
        source: EditError,
    },
    #[error("threshold {threshold} outside 1..={systems}")]
    ThresholdOutOfRange { threshold: usize, systems: usize },
    #[error("combination cap must be at least 1")]
    ZeroCap,
    #[error("scoring failed: {0}")]
    Score(#[from] ScoreError),
}

/// The source sentence and the edit sets of N systems for it.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleInput {
    source: String,
    chars: Vec<char>,
    systems: Vec<EditSet>,
}

impl EnsembleInput {
    pub fn new(source: impl Into<String>, systems: Vec<EditSet>) -> Result<Self, EnsembleError> {
        let source = source.into();
        let chars: Vec<char> = source.chars().collect();
        if systems.len() < 2 {
            return Err(EnsembleError::TooFewSystems(systems.len()));
        }
        for (system, set) in systems.iter().enumerate() {
            // revalidates bounds, overlap and noop-ness against this source
            EditSet::from_chars(&chars, set.edits().to_vec())
                .and_then(|checked| {
                    if checked.source_len() == set.source_len() {
                        Ok(())
                    } else {
                        Err(EditError::LengthMismatch {
                            expected: set.source_len(),
                            found: chars.len(),
                        })
                    }
                })
                .map_err(|source| EnsembleError::InvalidSystem { system, source })?;
        }
        Ok(Self { source, chars, systems })
    }

    /// Builds the input from full hypothesis sentences by extracting edits.
    pub fn from_hypotheses<S: AsRef<str>>(source: impl Into<String>, hypotheses: &[S]) -> Result<Self, EnsembleError> {
        let source = source.into();
        let chars: Vec<char> = source.chars().collect();
        let systems = hypotheses
            .iter()
            .map(|h| extract_from_chars(&chars, &h.as_ref().chars().collect::<Vec<_>>()))
            .collect();
        Self::new(source, systems)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn systems(&self) -> &[EditSet] {
        &self.systems
    }

    pub fn system_count(&self) -> usize {
        self.systems.len()
    }

    pub fn groups(&self) -> Vec<SpanGroup> {
        group_span_chars(&self.chars, &self.systems)
    }

    fn hypothesis(&self, system: usize) -> String {
        splice(&self.chars, self.systems[system].edits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyTag {
    Vote,
    SentenceLevel,
    EditLevel,
    EditCombination,
}

impl StrategyTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyTag::Vote => "vote",
            StrategyTag::SentenceLevel => "sentence-level",
            StrategyTag::EditLevel => "edit-level",
            StrategyTag::EditCombination => "edit-combination",
        }
    }
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vote" => Ok(StrategyTag::Vote),
            "sentence-level" => Ok(StrategyTag::SentenceLevel),
            "edit-level" => Ok(StrategyTag::EditLevel),
            "edit-combination" => Ok(StrategyTag::EditCombination),
            other => Err(format!("unknown strategy tag {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub output: String,
    pub chosen_edits: EditSet,
    pub strategy: StrategyTag,
    /// Perplexity of `output`, when the strategy scored it.
    pub ppl: Option<Perplexity>,
    /// Set when edit-combination skipped the sentence for exceeding the cap.
    pub capped: bool,
}

/// What edit-combination emits for sentences over the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapFallback {
    /// Emit the source unchanged.
    #[default]
    Source,
    /// Run edit-level on the sentence instead.
    EditLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Strategy {
    Vote { threshold: usize },
    SentenceLevel,
    EditLevel,
    EditCombination { cap: u64, fallback: CapFallback },
}

fn output(input: &EnsembleInput, edits: Vec<Edit>, strategy: StrategyTag, ppl: Option<Perplexity>) -> EnsembleOutput {
    let chosen_edits = EditSet::from_chars(&input.chars, edits).expect("edits from disjoint span groups");
    EnsembleOutput {
        output: splice(&input.chars, chosen_edits.edits()),
        chosen_edits,
        strategy,
        ppl,
        capped: false,
    }
}

/// Scores each distinct string once and maps the results back.
fn score_deduplicated<S: Scorer + ?Sized>(scorer: &S, texts: &[String]) -> Result<Vec<Perplexity>, ScoreError> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut unique: Vec<&str> = Vec::new();
    let positions: Vec<usize> = texts
        .iter()
        .map(|t| {
            *slot.entry(t.as_str()).or_insert_with(|| {
                unique.push(t);
                unique.len() - 1
            })
        })
        .collect();
    let scores = scorer.score_batch(&unique)?;
    Ok(positions.into_iter().map(|i| scores[i]).collect())
}

/// Threshold voting: keeps every candidate proposed by at least `threshold`
/// systems. Within one span group only the most-proposed survivor is kept
/// (ties go to the candidate whose first proposer has the lower index).
pub fn vote(input: &EnsembleInput, threshold: usize) -> Result<EnsembleOutput, EnsembleError> {
    let n = input.system_count();
    if threshold == 0 || threshold > n {
        return Err(EnsembleError::ThresholdOutOfRange { threshold, systems: n });
    }
    let edits = input
        .groups()
        .iter()
        .filter_map(|g| {
            let winner = (1..g.len())
                .filter(|&i| g.candidates[i].proposer_count() >= threshold)
                .min_by_key(|&i| (std::cmp::Reverse(g.candidates[i].proposer_count()), i))?;
            g.edit(winner)
        })
        .collect();
    Ok(output(input, edits, StrategyTag::Vote, None))
}

/// Picks the lowest-perplexity sentence among the source and every system's
/// full hypothesis.
///
/// Ties prefer the source, then the candidate with fewer edits, then the
/// lower system index.
pub fn sentence_level<S: Scorer + ?Sized>(input: &EnsembleInput, scorer: &S) -> Result<EnsembleOutput, EnsembleError> {
    // (text, first system index; None for the source)
    let mut pool: Vec<(String, Option<usize>)> = vec![(input.source.clone(), None)];
    for system in 0..input.system_count() {
        let text = input.hypothesis(system);
        if !pool.iter().any(|(t, _)| *t == text) {
            pool.push((text, Some(system)));
        }
    }
    if pool.len() == 1 {
        return Ok(output(input, Vec::new(), StrategyTag::SentenceLevel, None));
    }

    let texts: Vec<String> = pool.iter().map(|(t, _)| t.clone()).collect();
    let scores = score_deduplicated(scorer, &texts)?;
    let edit_sets: Vec<EditSet> = texts
        .iter()
        .map(|t| extract_from_chars(&input.chars, &t.chars().collect::<Vec<_>>()))
        .collect();
    let best = (0..pool.len())
        .min_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then_with(|| pool[a].1.is_some().cmp(&pool[b].1.is_some()))
                .then_with(|| edit_sets[a].len().cmp(&edit_sets[b].len()))
                .then_with(|| pool[a].1.cmp(&pool[b].1))
        })
        .expect("pool is never empty");
    let edits = edit_sets[best].edits().to_vec();
    Ok(output(input, edits, StrategyTag::SentenceLevel, Some(scores[best])))
}

/// Candidate order within a group on equal perplexity: noop first, then
/// fewer changed characters, then the lexicographically smaller text.
fn candidate_tiebreak(group: &SpanGroup, a: usize, b: usize) -> Ordering {
    let source = group.source_text();
    let (ra, rb) = (&group.candidates[a].replacement, &group.candidates[b].replacement);
    (a != SpanGroup::NOOP)
        .cmp(&(b != SpanGroup::NOOP))
        .then_with(|| char_distance(source, ra).cmp(&char_distance(source, rb)))
        .then_with(|| ra.cmp(rb))
}

fn single_edit_sentence(chars: &[char], group: &SpanGroup, index: usize) -> String {
    match group.edit(index) {
        Some(edit) => splice(chars, std::slice::from_ref(&edit)),
        None => chars.iter().collect(),
    }
}

/// Chooses, per span group, the candidate whose single-edit sentence has the
/// lowest perplexity, then applies all non-noop winners together.
pub fn edit_level<S: Scorer + ?Sized>(input: &EnsembleInput, scorer: &S) -> Result<EnsembleOutput, EnsembleError> {
    let groups = input.groups();
    if groups.is_empty() {
        return Ok(output(input, Vec::new(), StrategyTag::EditLevel, None));
    }
    let mut texts = Vec::new();
    for group in &groups {
        texts.extend((0..group.len()).map(|i| single_edit_sentence(&input.chars, group, i)));
    }
    let scores = score_deduplicated(scorer, &texts)?;

    let mut offset = 0;
    let mut edits = Vec::new();
    for group in &groups {
        let local = &scores[offset..offset + group.len()];
        let best = (0..group.len())
            .min_by(|&a, &b| {
                local[a]
                    .total_cmp(&local[b])
                    .then_with(|| candidate_tiebreak(group, a, b))
            })
            .expect("groups hold at least the noop");
        edits.extend(group.edit(best));
        offset += group.len();
    }

    let mut out = output(input, edits, StrategyTag::EditLevel, None);
    let position = texts.iter().position(|t| *t == out.output);
    out.ppl = Some(match position {
        Some(p) => scores[p],
        None => scorer.score(&out.output)?,
    });
    Ok(out)
}

/// `∏ |A_i|`, saturating at `u64::MAX`.
pub fn combination_count(groups: &[SpanGroup]) -> u64 {
    groups.iter().fold(1u64, |acc, g| acc.saturating_mul(g.len() as u64))
}

/// One choice of candidate index per span group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Combination(pub Vec<usize>);

impl Combination {
    pub fn edit_count(&self) -> usize {
        self.0.iter().filter(|&&i| i != SpanGroup::NOOP).count()
    }

    pub fn edits(&self, groups: &[SpanGroup]) -> Vec<Edit> {
        groups.iter().zip(&self.0).filter_map(|(g, &i)| g.edit(i)).collect()
    }
}

/// Every combination, in lexicographic order of the index vectors.
pub fn enumerate_combinations(groups: &[SpanGroup]) -> impl Iterator<Item = Combination> + '_ {
    let mut next = Some(vec![0usize; groups.len()]);
    std::iter::from_fn(move || {
        let current = next.take()?;
        let mut successor = current.clone();
        for pos in (0..groups.len()).rev() {
            successor[pos] += 1;
            if successor[pos] < groups[pos].len() {
                next = Some(successor);
                break;
            }
            successor[pos] = 0;
        }
        Some(Combination(current))
    })
}

/// A scored sentence and the combination that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub text: String,
    pub ppl: Perplexity,
    pub combination: Combination,
}

/// Builds and scores every combination sentence, or returns `None` when
/// their number exceeds `cap`.
pub fn score_combinations<S: Scorer + ?Sized>(
    input: &EnsembleInput,
    groups: &[SpanGroup],
    scorer: &S,
    cap: u64,
) -> Result<Option<Vec<ScoredCandidate>>, EnsembleError> {
    if cap == 0 {
        return Err(EnsembleError::ZeroCap);
    }
    if combination_count(groups) > cap {
        return Ok(None);
    }
    let combos: Vec<Combination> = enumerate_combinations(groups).collect();
    let texts: Vec<String> = combos.iter().map(|c| splice(&input.chars, &c.edits(groups))).collect();
    let scores = score_deduplicated(scorer, &texts)?;
    Ok(Some(
        texts
            .into_iter()
            .zip(scores)
            .zip(combos)
            .map(|((text, ppl), combination)| ScoredCandidate { text, ppl, combination })
            .collect(),
    ))
}

/// Winner among scored combinations: lowest perplexity, then fewest
/// non-noop edits, then the smallest index vector.
pub fn best_combination(candidates: &[ScoredCandidate]) -> Option<&ScoredCandidate> {
    candidates.iter().min_by(|a, b| {
        a.ppl
            .total_cmp(&b.ppl)
            .then_with(|| a.combination.edit_count().cmp(&b.combination.edit_count()))
            .then_with(|| a.combination.cmp(&b.combination))
    })
}

/// Scores every combination of one candidate per span group and returns the
/// lowest-perplexity sentence. Sentences with more than `cap` combinations
/// are handled by `fallback` and flagged `capped`.
pub fn edit_combination<S: Scorer + ?Sized>(
    input: &EnsembleInput,
    scorer: &S,
    cap: u64,
    fallback: CapFallback,
) -> Result<EnsembleOutput, EnsembleError> {
    if cap == 0 {
        return Err(EnsembleError::ZeroCap);
    }
    let groups = input.groups();
    if groups.is_empty() {
        return Ok(output(input, Vec::new(), StrategyTag::EditCombination, None));
    }
    match score_combinations(input, &groups, scorer, cap)? {
        Some(candidates) => {
            let best = best_combination(&candidates).expect("at least the all-noop combination");
            let edits = best.combination.edits(&groups);
            Ok(output(input, edits, StrategyTag::EditCombination, Some(best.ppl)))
        }
        None => {
            let mut out = match fallback {
                CapFallback::Source => output(input, Vec::new(), StrategyTag::EditCombination, None),
                CapFallback::EditLevel => EnsembleOutput {
                    strategy: StrategyTag::EditCombination,
                    ..edit_level(input, scorer)?
                },
            };
            out.capped = true;
            Ok(out)
        }
    }
}

impl Strategy {
    pub fn tag(&self) -> StrategyTag {
        match self {
            Strategy::Vote { .. } => StrategyTag::Vote,
            Strategy::SentenceLevel => StrategyTag::SentenceLevel,
            Strategy::EditLevel => StrategyTag::EditLevel,
            Strategy::EditCombination { .. } => StrategyTag::EditCombination,
        }
    }

    pub fn needs_scorer(&self) -> bool {
        !matches!(self, Strategy::Vote { .. })
    }

    /// Runs the strategy on one sentence. `scorer` is ignored by voting.
    pub fn run<S: Scorer + ?Sized>(&self, input: &EnsembleInput, scorer: &S) -> Result<EnsembleOutput, EnsembleError> {
        match *self {
            Strategy::Vote { threshold } => vote(input, threshold),
            Strategy::SentenceLevel => sentence_level(input, scorer),
            Strategy::EditLevel => edit_level(input, scorer),
            Strategy::EditCombination { cap, fallback } => edit_combination(input, scorer, cap, fallback),
        }
    }
}

/// A scorer for strategies that never score; any call fails.
pub struct NoScorer;

impl Scorer for NoScorer {
    fn score(&self, _sentence: &str) -> Result<Perplexity, ScoreError> {
        Err(ScoreError::InvalidParameters(
            "this strategy has no scorer configured".into(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for sentence-level parallelism; 1 runs inline.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1 }
    }
}

/// Runs `strategy` over a corpus. Results keep input order and each sentence
/// succeeds or fails on its own.
pub fn run_corpus<S: Scorer + ?Sized>(
    strategy: &Strategy,
    inputs: &[EnsembleInput],
    scorer: &S,
    options: &RunOptions,
) -> Vec<Result<EnsembleOutput, EnsembleError>> {
    if options.jobs <= 1 {
        return inputs.iter().map(|input| strategy.run(input, scorer)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .expect("thread pool");
    pool.install(|| inputs.par_iter().map(|input| strategy.run(input, scorer)).collect())
}
