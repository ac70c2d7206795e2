//! Character-level edits: extraction by alignment, application, and grouping
//! of edits from several systems into competing span groups.
//!
//! All offsets are counted in Unicode scalar values (`char`s), never bytes.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One span replacement on a source sentence.
///
/// `start == end` is an insertion, an empty `replacement` is a deletion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edit {
    pub start: usize,
    pub end: usize,
    pub replacement: String,
}

impl Edit {
    pub fn new(start: usize, end: usize, replacement: impl Into<String>) -> Self {
        Self {
            start,
            end,
            replacement: replacement.into(),
        }
    }

    pub fn is_insertion(&self) -> bool {
        self.start == self.end
    }

    pub fn is_deletion(&self) -> bool {
        self.replacement.is_empty()
    }

    /// Whether two edits compete for the same stretch of source text.
    ///
    /// Proper spans conflict when their interiors overlap. An insertion at `k`
    /// conflicts with every edit whose closed span contains `k`, including
    /// another insertion at `k`.
    pub fn conflicts_with(&self, other: &Edit) -> bool {
        if self.is_insertion() {
            other.start <= self.start && self.start <= other.end
        } else if other.is_insertion() {
            self.start <= other.start && other.start <= self.end
        } else {
            self.start < other.end && other.start < self.end
        }
    }
}

impl fmt::Display for Edit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {:?})", self.start, self.end, self.replacement)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("edit {edit} has end before start")]
    InvertedSpan { edit: Edit },
    #[error("edit {edit} lies outside a source of {source_len} characters")]
    OutOfBounds { edit: Edit, source_len: usize },
    #[error("edits {first} and {second} overlap")]
    Overlap { first: Edit, second: Edit },
    #[error("edit {edit} does not change the source")]
    Noop { edit: Edit },
    #[error("edit set built for {expected} characters applied to a source of {found}")]
    LengthMismatch { expected: usize, found: usize },
}

/// A normalized, sorted, non-overlapping set of edits for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct EditSet {
    edits: Vec<Edit>,
    source_len: usize,
}

impl EditSet {
    /// Sorts and validates `edits` against `source`.
    pub fn new(source: &str, edits: Vec<Edit>) -> Result<Self, EditError> {
        let chars: Vec<char> = source.chars().collect();
        Self::from_chars(&chars, edits)
    }

    pub(crate) fn from_chars(source: &[char], mut edits: Vec<Edit>) -> Result<Self, EditError> {
        edits.sort();
        validate_sorted(&edits, source.len())?;
        for edit in &edits {
            if source[edit.start..edit.end]
                .iter()
                .copied()
                .eq(edit.replacement.chars())
            {
                return Err(EditError::Noop { edit: edit.clone() });
            }
        }
        Ok(Self {
            edits,
            source_len: source.len(),
        })
    }

    pub fn empty(source_len: usize) -> Self {
        Self {
            edits: Vec::new(),
            source_len,
        }
    }

    pub fn edits(&self) -> &[Edit] {
        &self.edits
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Edit> {
        self.edits.iter()
    }

    pub fn into_edits(self) -> Vec<Edit> {
        self.edits
    }

    pub fn contains(&self, edit: &Edit) -> bool {
        self.edits.binary_search(edit).is_ok()
    }

    pub fn is_subset(&self, other: &EditSet) -> bool {
        self.edits.iter().all(|e| other.contains(e))
    }

    pub fn apply(&self, source: &str) -> Result<String, EditError> {
        let found = source.chars().count();
        if found != self.source_len {
            return Err(EditError::LengthMismatch {
                expected: self.source_len,
                found,
            });
        }
        apply_edits(source, &self.edits)
    }
}

impl<'a> IntoIterator for &'a EditSet {
    type Item = &'a Edit;
    type IntoIter = std::slice::Iter<'a, Edit>;

    fn into_iter(self) -> Self::IntoIter {
        self.edits.iter()
    }
}

fn validate_sorted(edits: &[Edit], source_len: usize) -> Result<(), EditError> {
    for edit in edits {
        if edit.end < edit.start {
            return Err(EditError::InvertedSpan { edit: edit.clone() });
        }
        if edit.end > source_len {
            return Err(EditError::OutOfBounds {
                edit: edit.clone(),
                source_len,
            });
        }
    }
    for pair in edits.windows(2) {
        let (e, f) = (&pair[0], &pair[1]);
        let same_point_insertions = e.is_insertion() && f.is_insertion() && e.start == f.start;
        if e.end > f.start || same_point_insertions {
            return Err(EditError::Overlap {
                first: e.clone(),
                second: f.clone(),
            });
        }
    }
    Ok(())
}

/// Applies `edits` (in any order) to `source`.
///
/// Fails on out-of-bounds or overlapping spans; no-op edits are accepted.
pub fn apply_edits(source: &str, edits: &[Edit]) -> Result<String, EditError> {
    let chars: Vec<char> = source.chars().collect();
    let mut sorted: Vec<&Edit> = edits.iter().collect();
    sorted.sort();
    let owned: Vec<Edit> = sorted.iter().map(|e| (*e).clone()).collect();
    validate_sorted(&owned, chars.len())?;
    Ok(splice(&chars, &owned))
}

/// Rebuilds the sentence from validated, sorted edits.
pub(crate) fn splice(source: &[char], edits: &[Edit]) -> String {
    let mut out = String::with_capacity(source.len() * 3);
    let mut cursor = 0;
    for edit in edits {
        out.extend(&source[cursor..edit.start]);
        out.push_str(&edit.replacement);
        cursor = edit.end;
    }
    out.extend(&source[cursor..]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Match,
    Substitute,
    Delete,
    Insert,
}

/// Alignment cost as (operations, insertions + deletions).
///
/// Ordering lexicographically picks a minimal Levenshtein alignment and,
/// among those, the one using the most substitutions.
type Cost = (u32, u32);

fn add(c: Cost, ops: u32, indels: u32) -> Cost {
    (c.0 + ops, c.1 + indels)
}

/// Extracts the canonical minimal edit set turning `source` into `hypothesis`.
///
/// Unit-cost Levenshtein alignment over characters. Ties between minimal
/// alignments prefer substitutions over insert/delete pairs, then edits
/// placed as far left as possible. Adjacent non-match operations are merged
/// into one span edit, so the result is unique.
pub fn extract_edits(source: &str, hypothesis: &str) -> EditSet {
    let src: Vec<char> = source.chars().collect();
    let hyp: Vec<char> = hypothesis.chars().collect();
    extract_from_chars(&src, &hyp)
}

pub(crate) fn extract_from_chars(src: &[char], hyp: &[char]) -> EditSet {
    let ops = align(src, hyp);
    let mut edits = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let mut run: Option<(usize, usize)> = None;
    for op in ops {
        if op == Op::Match {
            if let Some((s, t)) = run.take() {
                edits.push(Edit::new(s, i, hyp[t..j].iter().collect::<String>()));
            }
        } else if run.is_none() {
            run = Some((i, j));
        }
        match op {
            Op::Match | Op::Substitute => {
                i += 1;
                j += 1;
            }
            Op::Delete => i += 1,
            Op::Insert => j += 1,
        }
    }
    if let Some((s, t)) = run {
        edits.push(Edit::new(s, i, hyp[t..j].iter().collect::<String>()));
    }
    EditSet {
        edits,
        source_len: src.len(),
    }
}

fn align(src: &[char], hyp: &[char]) -> Vec<Op> {
    let (n, m) = (src.len(), hyp.len());
    let width = m + 1;
    let mut table: Vec<Cost> = vec![(0, 0); (n + 1) * width];
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let mut best: Option<Cost> = None;
            let mut consider = |c: Cost| {
                if best.is_none_or(|b| c < b) {
                    best = Some(c);
                }
            };
            if i > 0 && j > 0 {
                let diag = table[(i - 1) * width + j - 1];
                if src[i - 1] == hyp[j - 1] {
                    consider(diag);
                } else {
                    consider(add(diag, 1, 0));
                }
            }
            if i > 0 {
                consider(add(table[(i - 1) * width + j], 1, 1));
            }
            if j > 0 {
                consider(add(table[i * width + j - 1], 1, 1));
            }
            table[i * width + j] = best.expect("at least one predecessor");
        }
    }

    // Walk back from the end taking matches first, which pushes every edit
    // as far left as the optimal cost allows.
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = table[i * width + j];
        if i > 0 && j > 0 {
            let diag = table[(i - 1) * width + j - 1];
            if src[i - 1] == hyp[j - 1] && diag == here {
                ops.push(Op::Match);
                i -= 1;
                j -= 1;
                continue;
            }
            if src[i - 1] != hyp[j - 1] && add(diag, 1, 0) == here {
                ops.push(Op::Substitute);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && add(table[(i - 1) * width + j], 1, 1) == here {
            ops.push(Op::Delete);
            i -= 1;
        } else {
            ops.push(Op::Insert);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Unit-cost Levenshtein distance between two character sequences.
pub fn char_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// One alternative text for a span group, with the systems that proposed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub replacement: String,
    /// Indices of the proposing systems, ascending.
    pub proposers: Vec<usize>,
}

impl Candidate {
    pub fn proposer_count(&self) -> usize {
        self.proposers.len()
    }
}

/// All competing rewrites of one merged source span.
///
/// `candidates[0]` is always the noop candidate (the original span text);
/// its proposers are the systems that left the span untouched. The remaining
/// candidates are distinct, non-noop and ordered by their first proposer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanGroup {
    pub start: usize,
    pub end: usize,
    pub candidates: Vec<Candidate>,
}

impl SpanGroup {
    pub const NOOP: usize = 0;

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn source_text(&self) -> &str {
        &self.candidates[Self::NOOP].replacement
    }

    /// The edit realizing candidate `index`, or `None` for the noop.
    pub fn edit(&self, index: usize) -> Option<Edit> {
        (index != Self::NOOP).then(|| Edit::new(self.start, self.end, &*self.candidates[index].replacement))
    }

    pub fn proposer_count(&self, replacement: &str) -> usize {
        self.candidates
            .iter()
            .find(|c| c.replacement == replacement)
            .map_or(0, Candidate::proposer_count)
    }
}

/// Groups the edits of several systems into disjoint span groups.
///
/// Edits are connected when they conflict (see [`Edit::conflicts_with`]);
/// each connected component becomes one group spanning the hull of its
/// members. Every system's edits inside a group are re-expressed as a single
/// replacement of the hull.
pub fn group_spans(source: &str, systems: &[EditSet]) -> Vec<SpanGroup> {
    let chars: Vec<char> = source.chars().collect();
    group_span_chars(&chars, systems)
}

pub(crate) fn group_span_chars(source: &[char], systems: &[EditSet]) -> Vec<SpanGroup> {
    let items: Vec<(usize, &Edit)> = systems
        .iter()
        .enumerate()
        .flat_map(|(s, set)| set.iter().map(move |e| (s, e)))
        .collect();
    if items.is_empty() {
        return Vec::new();
    }

    let mut parent: Vec<usize> = (0..items.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for a in 0..items.len() {
        for b in a + 1..items.len() {
            if items[a].1.conflicts_with(items[b].1) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }

    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; items.len()];
    for idx in 0..items.len() {
        let root = find(&mut parent, idx);
        if slot[root] == usize::MAX {
            slot[root] = components.len();
            components.push(Vec::new());
        }
        components[slot[root]].push(idx);
    }

    let mut groups: Vec<SpanGroup> = components
        .into_iter()
        .map(|members| {
            let start = members.iter().map(|&i| items[i].1.start).min().unwrap();
            let end = members.iter().map(|&i| items[i].1.end).max().unwrap();
            let span = &source[start..end];
            let noop: String = span.iter().collect();

            let mut candidates = vec![Candidate {
                replacement: noop.clone(),
                proposers: Vec::new(),
            }];
            for system in 0..systems.len() {
                let local: Vec<Edit> = members
                    .iter()
                    .filter(|&&i| items[i].0 == system)
                    .map(|&i| {
                        let e = items[i].1;
                        Edit::new(e.start - start, e.end - start, &*e.replacement)
                    })
                    .collect();
                let text = if local.is_empty() {
                    noop.clone()
                } else {
                    // members of one system come from a valid set, already sorted
                    splice(span, &local)
                };
                match candidates.iter_mut().find(|c| c.replacement == text) {
                    Some(c) => c.proposers.push(system),
                    None => candidates.push(Candidate {
                        replacement: text,
                        proposers: vec![system],
                    }),
                }
            }
            SpanGroup { start, end, candidates }
        })
        .collect();
    groups.sort_by_key(|g| (g.start, g.end));
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(source: &str, edits: &[(usize, usize, &str)]) -> EditSet {
        EditSet::new(source, edits.iter().map(|&(s, e, r)| Edit::new(s, e, r)).collect()).unwrap()
    }

    #[test]
    fn identity_has_no_edits() {
        assert!(extract_edits("abc", "abc").is_empty());
        assert!(extract_edits("", "").is_empty());
    }

    #[test]
    fn deletion_of_de() {
        let edits = extract_edits("我的家", "我家");
        assert_eq!(edits.edits(), &[Edit::new(1, 2, "")]);
    }

    #[test]
    fn adjacent_operations_merge_into_one_span() {
        let edits = extract_edits("看", "我见");
        assert_eq!(edits.edits(), &[Edit::new(0, 1, "我见")]);
    }

    #[test]
    fn ties_resolve_to_leftmost_position() {
        assert_eq!(extract_edits("aa", "a").edits(), &[Edit::new(0, 1, "")]);
        assert_eq!(extract_edits("a", "aa").edits(), &[Edit::new(0, 0, "a")]);
    }

    #[test]
    fn substitution_beats_insert_delete_pair() {
        assert_eq!(extract_edits("ab", "xb").edits(), &[Edit::new(0, 1, "x")]);
        assert_eq!(extract_edits("abc", "xyc").edits(), &[Edit::new(0, 2, "xy")]);
    }

    #[test]
    fn empty_sides() {
        assert_eq!(extract_edits("", "ab").edits(), &[Edit::new(0, 0, "ab")]);
        assert_eq!(extract_edits("ab", "").edits(), &[Edit::new(0, 2, "")]);
    }

    #[test]
    fn table_example_application() {
        let source = "我低幼儿童的时候很想养狗。";
        // "低幼儿童的时候" spans characters 1..8
        let edits = set(source, &[(1, 8, "小时候")]);
        assert_eq!(edits.apply(source).unwrap(), "我小时候很想养狗。");
        // the minimal form keeps the shared "时候"
        let minimal = extract_edits(source, "我小时候很想养狗。");
        assert_eq!(minimal.edits(), &[Edit::new(1, 6, "小")]);
    }

    #[test]
    fn apply_by_hand() {
        assert_eq!(apply_edits("abc", &[]).unwrap(), "abc");
        let edits = [Edit::new(2, 3, ""), Edit::new(0, 1, "x")];
        assert_eq!(apply_edits("abc", &edits).unwrap(), "xb");
    }

    #[test]
    fn apply_rejects_bad_edits() {
        let err = apply_edits("abc", &[Edit::new(2, 4, "")]).unwrap_err();
        assert_eq!(
            err,
            EditError::OutOfBounds {
                edit: Edit::new(2, 4, ""),
                source_len: 3
            }
        );
        let err = apply_edits("abc", &[Edit::new(0, 2, "x"), Edit::new(1, 3, "y")]).unwrap_err();
        assert!(matches!(err, EditError::Overlap { .. }));
        assert!(err.to_string().contains("(1, 3, \"y\")"));
        let err = apply_edits("abc", &[Edit::new(1, 1, "x"), Edit::new(1, 1, "y")]).unwrap_err();
        assert!(matches!(err, EditError::Overlap { .. }));
        let err = apply_edits("abc", &[Edit::new(2, 1, "x")]).unwrap_err();
        assert!(matches!(err, EditError::InvertedSpan { .. }));
    }

    #[test]
    fn insertion_before_replacement_at_same_point_is_valid() {
        assert_eq!(
            apply_edits("ab", &[Edit::new(0, 1, "y"), Edit::new(0, 0, "x")]).unwrap(),
            "xyb"
        );
    }

    #[test]
    fn edit_set_rejects_noop_and_length_mismatch() {
        let err = EditSet::new("abc", vec![Edit::new(0, 1, "a")]).unwrap_err();
        assert!(matches!(err, EditError::Noop { .. }));
        let edits = set("abc", &[(0, 1, "x")]);
        assert!(matches!(edits.apply("ab"), Err(EditError::LengthMismatch { .. })));
    }

    #[test]
    fn offsets_count_characters_not_bytes() {
        let edits = extract_edits("考式补习班", "考试补习班");
        assert_eq!(edits.edits(), &[Edit::new(1, 2, "试")]);
        assert_eq!(edits.source_len(), 5);
    }

    #[test]
    fn grouping_nothing() {
        let systems = vec![EditSet::empty(3), EditSet::empty(3)];
        assert!(group_spans("abc", &systems).is_empty());
    }

    #[test]
    fn identical_deletions_share_a_group() {
        let source = "我的家";
        let systems = vec![set(source, &[(1, 2, "")]), set(source, &[(1, 2, "")])];
        let groups = group_spans(source, &systems);
        assert_eq!(groups.len(), 1);
        let g = &groups[0];
        assert_eq!((g.start, g.end), (1, 2));
        assert_eq!(g.len(), 2);
        assert_eq!(g.source_text(), "的");
        assert_eq!(g.proposer_count(""), 2);
        assert_eq!(g.candidates[1].proposers, vec![0, 1]);
        assert!(g.candidates[SpanGroup::NOOP].proposers.is_empty());
    }

    #[test]
    fn overlapping_spans_merge_to_hull() {
        let source = "abc";
        let systems = vec![set(source, &[(0, 2, "xy")]), set(source, &[(1, 3, "z")])];
        let groups = group_spans(source, &systems);
        assert_eq!(groups.len(), 1);
        let g = &groups[0];
        assert_eq!((g.start, g.end), (0, 3));
        let texts: Vec<&str> = g.candidates.iter().map(|c| c.replacement.as_str()).collect();
        assert_eq!(texts, vec!["abc", "xyc", "az"]);
    }

    #[test]
    fn insertions_at_same_point_group_together() {
        let source = "ab";
        let systems = vec![
            set(source, &[(1, 1, "x")]),
            set(source, &[(1, 1, "y")]),
            EditSet::empty(2),
        ];
        let groups = group_spans(source, &systems);
        assert_eq!(groups.len(), 1);
        assert_eq!((groups[0].start, groups[0].end), (1, 1));
        assert_eq!(groups[0].candidates[0].proposers, vec![2]);
        assert_eq!(groups[0].len(), 3);
    }

    #[test]
    fn insertion_touching_a_span_joins_it() {
        let source = "abc";
        let systems = vec![set(source, &[(1, 1, "x")]), set(source, &[(1, 2, "y")])];
        let groups = group_spans(source, &systems);
        assert_eq!(groups.len(), 1);
        let texts: Vec<&str> = groups[0].candidates.iter().map(|c| c.replacement.as_str()).collect();
        assert_eq!(texts, vec!["b", "xb", "y"]);
    }

    #[test]
    fn touching_proper_spans_stay_apart() {
        let source = "abcd";
        let systems = vec![set(source, &[(0, 2, "x")]), set(source, &[(2, 4, "y")])];
        let groups = group_spans(source, &systems);
        assert_eq!(groups.len(), 2);
        assert_eq!((groups[0].start, groups[0].end), (0, 2));
        assert_eq!((groups[1].start, groups[1].end), (2, 4));
    }

    #[test]
    fn composition_equal_to_source_counts_as_noop() {
        let source = "aa";
        let systems = vec![set(source, &[(0, 1, ""), (1, 1, "a")]), set(source, &[(0, 1, "b")])];
        let groups = group_spans(source, &systems);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].candidates[0].proposers, vec![0]);
        assert_eq!(groups[0].len(), 2);
    }

    #[test]
    fn char_distance_basics() {
        assert_eq!(char_distance("", ""), 0);
        assert_eq!(char_distance("kitten", "sitting"), 3);
        assert_eq!(char_distance("我的家", "我家"), 1);
    }
}
