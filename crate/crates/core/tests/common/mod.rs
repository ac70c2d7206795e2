//! Fuzzers, fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use gec_ensemble::Edit;
use gec_ensemble::{apply_edits, EditSet, EnsembleInput, NGramModel};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const ALPHABET: &[char] = &[
    '我', '的', '一', '是', '不', '了', '人', '在', '有', '他', '这', '为', '大', '来', '个', '中', '上', '们', '时',
    '候', '。', '，', 'a', 'b', 'c', 'x', 'y', 'z', '1', '2', ' ', ',', '.', '𠀀',
];

pub fn random_text<R: Rng>(rng: &mut R, min: usize, max: usize) -> String {
    let len = rng.random_range(min..=max);
    (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

/// Applies up to `max_ops` random insertions, deletions and substitutions.
pub fn mutate<R: Rng>(rng: &mut R, source: &str, max_ops: usize) -> String {
    let mut chars: Vec<char> = source.chars().collect();
    for _ in 0..rng.random_range(0..=max_ops) {
        let op = rng.random_range(0..3);
        let c = *ALPHABET.choose(rng).unwrap();
        match op {
            0 => {
                let at = rng.random_range(0..=chars.len());
                chars.insert(at, c);
            }
            1 if !chars.is_empty() => {
                let at = rng.random_range(0..chars.len());
                chars.remove(at);
            }
            _ if !chars.is_empty() => {
                let at = rng.random_range(0..chars.len());
                chars[at] = c;
            }
            _ => chars.push(c),
        }
    }
    chars.into_iter().collect()
}

/// A random edit against a source of `len` characters.
pub fn random_edit<R: Rng>(rng: &mut R, len: usize) -> Edit {
    let start = rng.random_range(0..=len);
    let end = (start + rng.random_range(0..=2)).min(len);
    let mut replacement = random_text(rng, 0, 2);
    if start == end && replacement.is_empty() {
        replacement.push(*ALPHABET.choose(rng).unwrap());
    }
    Edit::new(start, end, replacement)
}

/// `systems` hypotheses that draw overlapping subsets from a shared pool of
/// candidate edits, so they agree and disagree the way real systems do.
pub fn ensemble_hypotheses<R: Rng>(rng: &mut R, source: &str, systems: usize, pool_size: usize) -> Vec<String> {
    let len = source.chars().count();
    let pool: Vec<Edit> = (0..pool_size).map(|_| random_edit(rng, len)).collect();
    (0..systems)
        .map(|_| {
            let mut chosen: Vec<Edit> = Vec::new();
            for e in &pool {
                if rng.random_bool(0.5) {
                    chosen.push(e.clone());
                    if apply_edits(source, &chosen).is_err() {
                        chosen.pop();
                    }
                }
            }
            apply_edits(source, &chosen).unwrap()
        })
        .collect()
}

pub fn random_input<R: Rng>(rng: &mut R, systems: usize) -> EnsembleInput {
    let source = random_text(rng, 3, 20);
    let pool = rng.random_range(1..=10);
    let hyps = ensemble_hypotheses(rng, &source, systems, pool);
    EnsembleInput::from_hypotheses(source, &hyps).unwrap()
}

/// Textbook unit-cost Levenshtein distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut row = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            row[j] = sub.min(prev[j] + 1).min(row[j - 1] + 1);
        }
        prev = row;
    }
    prev[b.len()]
}

/// Cost of an edit script if every merged span is rewritten optimally.
pub fn script_cost(edits: &EditSet) -> usize {
    edits
        .iter()
        .map(|e| (e.end - e.start).max(e.replacement.chars().count()))
        .sum()
}

/// Perplexity straight from the model's conditional probabilities.
pub fn oracle_ppl(model: &NGramModel, sentence: &str) -> f64 {
    let chars: Vec<char> = sentence.chars().collect();
    let mut nll = 0.0;
    for i in 0..=chars.len() {
        let next = chars.get(i).copied();
        nll -= model.probability(&chars[..i], next).ln();
    }
    (nll / (chars.len() + 1) as f64).exp()
}

fn conflict(a: &Edit, b: &Edit) -> bool {
    let a_ins = a.start == a.end;
    let b_ins = b.start == b.end;
    if a_ins {
        b.start <= a.start && a.start <= b.end
    } else if b_ins {
        a.start <= b.start && b.start <= a.end
    } else {
        a.start.max(b.start) < a.end.min(b.end)
    }
}

/// Span groups rebuilt by naive pairwise merging: `(start, end, candidates)`
/// with the unchanged text first and the rest in first-proposer order.
pub fn oracle_groups(source: &str, systems: &[EditSet]) -> Vec<(usize, usize, Vec<String>)> {
    let chars: Vec<char> = source.chars().collect();
    let mut clusters: Vec<Vec<(usize, Edit)>> = systems
        .iter()
        .enumerate()
        .flat_map(|(s, set)| set.iter().map(move |e| vec![(s, e.clone())]))
        .collect();
    loop {
        let mut merged = false;
        'outer: for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let touches = clusters[i]
                    .iter()
                    .any(|(_, a)| clusters[j].iter().any(|(_, b)| conflict(a, b)));
                if touches {
                    let other = clusters.remove(j);
                    clusters[i].extend(other);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    let mut groups: Vec<(usize, usize, Vec<String>)> = clusters
        .into_iter()
        .map(|members| {
            let start = members.iter().map(|(_, e)| e.start).min().unwrap();
            let end = members.iter().map(|(_, e)| e.end).max().unwrap();
            let original: String = chars[start..end].iter().collect();
            let mut candidates = vec![original.clone()];
            for s in 0..systems.len() {
                let mut text = String::new();
                let mut at = start;
                let mut own: Vec<&Edit> = members.iter().filter(|(o, _)| *o == s).map(|(_, e)| e).collect();
                own.sort();
                for e in own {
                    text.extend(&chars[at..e.start]);
                    text.push_str(&e.replacement);
                    at = e.end;
                }
                text.extend(&chars[at..end]);
                if !candidates.contains(&text) {
                    candidates.push(text);
                }
            }
            (start, end, candidates)
        })
        .collect();
    groups.sort_by_key(|g| (g.0, g.1));
    groups
}

/// Every sentence reachable by picking one candidate per group, built
/// recursively, with the index vector that produced it.
pub fn oracle_combinations(source: &str, groups: &[(usize, usize, Vec<String>)]) -> Vec<(String, Vec<usize>)> {
    fn go(
        chars: &[char],
        groups: &[(usize, usize, Vec<String>)],
        at: usize,
        prefix: String,
        picks: Vec<usize>,
        out: &mut Vec<(String, Vec<usize>)>,
    ) {
        match groups.split_first() {
            None => {
                let mut text = prefix;
                text.extend(&chars[at..]);
                out.push((text, picks));
            }
            Some(((start, end, candidates), rest)) => {
                for (i, c) in candidates.iter().enumerate() {
                    let mut text = prefix.clone();
                    text.extend(&chars[at..*start]);
                    text.push_str(c);
                    let mut p = picks.clone();
                    p.push(i);
                    go(chars, rest, *end, text, p, out);
                }
            }
        }
    }
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    go(&chars, groups, 0, String::new(), Vec::new(), &mut out);
    out
}

/// Lowest perplexity, then fewest changed groups, then smallest index vector.
pub fn oracle_winner(model: &NGramModel, combos: &[(String, Vec<usize>)]) -> (String, f64) {
    let scored: Vec<(f64, usize, &Vec<usize>, &String)> = combos
        .iter()
        .map(|(t, p)| (oracle_ppl(model, t), p.iter().filter(|&&i| i != 0).count(), p, t))
        .collect();
    let best = scored
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(b.2)))
        .unwrap();
    (best.3.clone(), best.0)
}

/// Source plus five systems whose edits form four span groups with 3, 4, 5
/// and 6 candidates (noop included): 360 combinations.
pub fn cap_fixture() -> (String, Vec<String>) {
    let source = "甲a乙b丙c丁d";
    let replacements: [&[char]; 4] = [
        &['子', '丑'],
        &['寅', '卯', '辰'],
        &['巳', '午', '未', '申'],
        &['酉', '戌', '亥', '天', '地'],
    ];
    let hyps = (0..5)
        .map(|s| {
            source
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    if i % 2 == 0 {
                        let options = replacements[i / 2];
                        options[s.min(options.len() - 1)]
                    } else {
                        c
                    }
                })
                .collect()
        })
        .collect();
    (source.to_string(), hyps)
}

/// A small training corpus over the fuzzing alphabet.
pub fn training_corpus<R: Rng>(rng: &mut R, sentences: usize) -> Vec<String> {
    (0..sentences).map(|_| random_text(rng, 4, 20)).collect()
}

/// Char-level (P, R, F0.5) triples from the results table: MuCGEC-test and
/// NLPCC-test for each single model, voting threshold and PLM strategy.
pub const RESULT_TRIPLES: &[(&str, f64, f64, f64)] = &[
    ("seq2seq-1 MuCGEC", 55.00, 28.32, 46.28),
    ("seq2seq-1 NLPCC", 43.93, 28.21, 39.52),
    ("seq2seq-2 MuCGEC", 50.62, 30.40, 44.68),
    ("seq2seq-2 NLPCC", 40.79, 29.59, 37.92),
    ("seq2edit-1 MuCGEC", 45.80, 28.41, 40.81),
    ("seq2edit-1 NLPCC", 38.42, 26.79, 35.35),
    ("seq2edit-2 MuCGEC", 45.45, 30.45, 41.37),
    ("seq2edit-2 NLPCC", 36.19, 28.15, 34.24),
    ("T=2 MuCGEC", 52.58, 33.61, 47.25),
    ("T=2 NLPCC", 42.71, 32.62, 40.22),
    ("T=3 MuCGEC", 69.10, 21.68, 48.07),
    ("T=3 NLPCC", 60.81, 21.00, 44.09),
    ("T=4 MuCGEC", 76.13, 15.35, 42.48),
    ("T=4 NLPCC", 67.33, 14.96, 39.61),
    ("sentence BERT MuCGEC", 48.56, 24.33, 40.50),
    ("sentence BERT NLPCC", 37.71, 22.80, 33.35),
    ("sentence MacBERT MuCGEC", 46.83, 33.35, 43.33),
    ("sentence MacBERT NLPCC", 37.62, 31.30, 36.16),
    ("sentence GPT2 MuCGEC", 47.36, 35.01, 44.24),
    ("sentence GPT2 NLPCC", 37.75, 33.20, 36.74),
    ("edit BERT MuCGEC", 41.31, 21.79, 35.04),
    ("edit BERT NLPCC", 33.19, 20.59, 29.57),
    ("edit MacBERT MuCGEC", 43.40, 29.19, 39.55),
    ("edit MacBERT NLPCC", 35.38, 28.42, 33.73),
    ("edit GPT2 MuCGEC", 43.93, 33.36, 41.31),
    ("edit GPT2 NLPCC", 35.04, 31.60, 34.29),
    ("combination BERT MuCGEC", 42.90, 20.18, 35.01),
    ("combination BERT NLPCC", 34.25, 21.56, 30.64),
    ("combination MacBERT MuCGEC", 45.18, 28.73, 40.54),
    ("combination MacBERT NLPCC", 36.35, 30.69, 35.05),
    ("combination GPT2 MuCGEC", 46.07, 31.92, 42.32),
    ("combination GPT2 NLPCC", 36.23, 33.29, 35.60),
];

/// F-beta written out from its definition.
pub fn f_half_oracle(p: f64, r: f64) -> f64 {
    let b2 = 0.25;
    if p + r == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / (b2 * p + r)
    }
}
