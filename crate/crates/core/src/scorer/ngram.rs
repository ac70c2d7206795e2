use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{perplexity, Perplexity, ScoreError, Scorer, TokenLogProbs};

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_K: f64 = 0.1;

const FORMAT_TAG: &str = "gec-ensemble-ngram/1";

const BOS: u32 = 0;
const EOS: u32 = 1;
const UNK: u32 = 2;
const FIRST_CHAR: u32 = 3;

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Character n-gram model with add-k smoothing.
///
/// Sentences are padded with `order - 1` begin markers and closed by one
/// end marker, which counts as a token. The outcome space of every
/// conditional distribution is the training characters plus an unknown
/// symbol plus the end marker; characters never seen in training map to the
/// unknown symbol, so every sentence gets a finite score.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    k: f64,
    vocab: Vec<char>,
    index: HashMap<char, u32>,
    counts: HashMap<Vec<u32>, ContextCounts>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    order: usize,
    k: f64,
    vocab: String,
    /// `(context, next, count)`, sorted.
    counts: Vec<(Vec<u32>, u32, u64)>,
}

impl NGramModel {
    pub fn train<S: AsRef<str>>(corpus: &[S], order: usize, k: f64) -> Result<Self, ScoreError> {
        if corpus.is_empty() {
            return Err(ScoreError::EmptyCorpus);
        }
        if order == 0 {
            return Err(ScoreError::InvalidParameters("order must be at least 1".into()));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(ScoreError::InvalidParameters(format!("k must be positive, got {k}")));
        }

        let mut chars: Vec<char> = corpus.iter().flat_map(|s| s.as_ref().chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        let mut model = Self::empty(order, k, chars);

        for sentence in corpus {
            let tokens = model.tokens(sentence.as_ref());
            for i in order - 1..tokens.len() {
                let entry = model.counts.entry(tokens[i + 1 - order..i].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(tokens[i]).or_default() += 1;
            }
        }
        Ok(model)
    }

    fn empty(order: usize, k: f64, vocab: Vec<char>) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, FIRST_CHAR + i as u32))
            .collect();
        Self {
            order,
            k,
            vocab,
            index,
            counts: HashMap::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Training characters, sorted.
    pub fn vocabulary(&self) -> &[char] {
        &self.vocab
    }

    /// Size of every conditional distribution's support.
    pub fn outcome_count(&self) -> usize {
        self.vocab.len() + 2
    }

    fn token(&self, c: char) -> u32 {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    fn tokens(&self, sentence: &str) -> Vec<u32> {
        let mut tokens = vec![BOS; self.order - 1];
        tokens.extend(sentence.chars().map(|c| self.token(c)));
        tokens.push(EOS);
        tokens
    }

    fn conditional(&self, context: &[u32], next: u32) -> f64 {
        let outcomes = self.outcome_count() as f64;
        let (seen, total) = match self.counts.get(context) {
            Some(c) => (c.next.get(&next).copied().unwrap_or(0), c.total),
            None => (0, 0),
        };
        (seen as f64 + self.k) / (total as f64 + self.k * outcomes)
    }

    /// `P(next | history)`, where `history` holds the preceding characters
    /// (most recent last) and `None` stands for the end of the sentence.
    pub fn probability(&self, history: &[char], next: Option<char>) -> f64 {
        let width = self.order - 1;
        let mut context = vec![BOS; width.saturating_sub(history.len())];
        let skip = history.len().saturating_sub(width);
        context.extend(history[skip..].iter().map(|&c| self.token(c)));
        let next = next.map_or(EOS, |c| self.token(c));
        self.conditional(&context, next)
    }

    /// Per-token negative log probabilities, end marker included.
    pub fn token_log_probs(&self, sentence: &str) -> Result<TokenLogProbs, ScoreError> {
        let tokens = self.tokens(sentence);
        let width = self.order - 1;
        let nll = (width..tokens.len())
            .map(|i| -self.conditional(&tokens[i - width..i], tokens[i]).ln())
            .collect();
        TokenLogProbs::new(nll)
    }

    pub fn save(&self, mut writer: impl Write) -> Result<(), ScoreError> {
        let sorted: BTreeMap<&Vec<u32>, &ContextCounts> = self.counts.iter().collect();
        let mut counts = Vec::new();
        for (context, entry) in sorted {
            let next: BTreeMap<&u32, &u64> = entry.next.iter().collect();
            counts.extend(next.into_iter().map(|(&t, &n)| (context.clone(), t, n)));
        }
        let file = ModelFile {
            format: FORMAT_TAG.to_string(),
            order: self.order,
            k: self.k,
            vocab: self.vocab.iter().collect(),
            counts,
        };
        serde_json::to_writer(&mut writer, &file).map_err(|e| ScoreError::Model(e.to_string()))?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(reader: impl Read) -> Result<Self, ScoreError> {
        let file: ModelFile = serde_json::from_reader(reader).map_err(|e| ScoreError::Model(e.to_string()))?;
        if file.format != FORMAT_TAG {
            return Err(ScoreError::Model(format!("unknown format tag {:?}", file.format)));
        }
        if file.order == 0 || !(file.k > 0.0 && file.k.is_finite()) {
            return Err(ScoreError::Model("order must be >= 1 and k > 0".into()));
        }
        let mut model = Self::empty(file.order, file.k, file.vocab.chars().collect());
        let max_token = FIRST_CHAR + model.vocab.len() as u32;
        for (context, next, n) in file.counts {
            if context.len() != file.order - 1 || next >= max_token || context.iter().any(|&t| t >= max_token) {
                return Err(ScoreError::Model(format!("bad count entry for context {context:?}")));
            }
            let entry = model.counts.entry(context).or_default();
            entry.total += n;
            *entry.next.entry(next).or_default() += n;
        }
        Ok(model)
    }
}

impl Scorer for NGramModel {
    fn score(&self, sentence: &str) -> Result<Perplexity, ScoreError> {
        Ok(perplexity(&self.token_log_probs(sentence)?))
    }
}
