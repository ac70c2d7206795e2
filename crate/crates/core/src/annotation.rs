//! Human-analysis workflow: deterministic sampling of sentences into an
//! annotation sheet, and tallying of E/G/O/W labels once annotators have
//! filled it in.
//!
//! Sampling uses PCG64 (`Lcg128Xsl64` from `rand_pcg`, seeded through
//! `SeedableRng::seed_from_u64`) driving a partial Fisher–Yates shuffle over
//! sentence ids, with rejection sampling for unbiased bounded draws. Both the
//! generator and the shuffle are fixed here, so a seed always yields the same
//! ids.
//!
//! Sheet layout, one block per sampled sentence:
//!
//! ```text
//! ### sample 17
//! Input: <source>
//! <system>: <output>
//! label:
//! ...
//! Reference: <reference>
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use thiserror::Error;

use crate::corpus_io::{ReferenceEntry, HEADER};

const SAMPLE_PREFIX: &str = "### sample ";
const INPUT: &str = "Input";
const REFERENCE: &str = "Reference";
const LABEL: &str = "label";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("cannot sample {n} of {size} sentences")]
    TooManySamples { n: usize, size: usize },
    #[error("system {name:?} has {found} outputs, corpus has {expected}")]
    OutputCount {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid system name {0:?}")]
    BadSystemName(String),
    #[error("sentence {0} contains a line break")]
    LineBreak(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sample {sample}: {message}")]
    Label { sample: usize, message: String },
    #[error("{system}: {sum} labels for {samples} samples")]
    Conservation { system: String, sum: usize, samples: usize },
    #[error("sheets differ: {0}")]
    Mismatch(String),
}

/// Distinct 1-based ids, sorted, chosen uniformly from `1..=corpus_size`.
pub fn sample_ids(corpus_size: usize, n: usize, seed: u64) -> Result<Vec<usize>, AnnotationError> {
    if n > corpus_size {
        return Err(AnnotationError::TooManySamples { n, size: corpus_size });
    }
    let mut rng = Pcg64::seed_from_u64(seed);
    let mut ids: Vec<usize> = (1..=corpus_size).collect();
    for i in 0..n {
        let j = i + below(&mut rng, (corpus_size - i) as u64) as usize;
        ids.swap(i, j);
    }
    ids.truncate(n);
    ids.sort_unstable();
    Ok(ids)
}

fn below(rng: &mut Pcg64, bound: u64) -> u64 {
    let limit = u64::MAX - u64::MAX % bound;
    loop {
        let v = rng.next_u64();
        if v < limit {
            return v % bound;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SheetSample {
    pub id: usize,
    pub input: String,
    /// Output of each system, in sheet order.
    pub outputs: Vec<String>,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSheet {
    pub seed: u64,
    pub corpus_size: usize,
    pub systems: Vec<String>,
    pub samples: Vec<SheetSample>,
}

fn check_name(name: &str) -> Result<(), AnnotationError> {
    let reserved = [INPUT, REFERENCE, LABEL].contains(&name);
    if name.is_empty() || reserved || name.contains([':', '\n', '\r']) || name.starts_with('#') || name.trim() != name {
        return Err(AnnotationError::BadSystemName(name.to_string()));
    }
    Ok(())
}

/// Draws `n` sentences and lays out their outputs for annotation.
///
/// `systems` pairs a display name with one output per corpus sentence.
/// Reference lines are rebuilt from each annotator's edits.
pub fn sample(
    sources: &[String],
    systems: &[(String, Vec<String>)],
    references: Option<&BTreeMap<usize, ReferenceEntry>>,
    n: usize,
    seed: u64,
) -> Result<AnnotationSheet, AnnotationError> {
    for (name, outputs) in systems {
        check_name(name)?;
        if outputs.len() != sources.len() {
            return Err(AnnotationError::OutputCount {
                name: name.clone(),
                expected: sources.len(),
                found: outputs.len(),
            });
        }
    }
    let ids = sample_ids(sources.len(), n, seed)?;
    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let input = sources[id - 1].clone();
        let outputs: Vec<String> = systems.iter().map(|(_, o)| o[id - 1].clone()).collect();
        let references = match references.and_then(|r| r.get(&id)) {
            Some(entry) => entry
                .annotators
                .iter()
                .map(|a| a.edits.apply(&entry.source).unwrap_or_else(|_| entry.source.clone()))
                .collect(),
            None => Vec::new(),
        };
        let any_break = std::iter::once(&input)
            .chain(&outputs)
            .chain(&references)
            .any(|s| s.contains(['\n', '\r']));
        if any_break {
            return Err(AnnotationError::LineBreak(id));
        }
        samples.push(SheetSample {
            id,
            input,
            outputs,
            references,
        });
    }
    Ok(AnnotationSheet {
        seed,
        corpus_size: sources.len(),
        systems: systems.iter().map(|(n, _)| n.clone()).collect(),
        samples,
    })
}

impl AnnotationSheet {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(
            out,
            "# {} of {} sentences, seed {}; fill every label with E, G, O or W",
            self.samples.len(),
            self.corpus_size,
            self.seed
        );
        for s in &self.samples {
            let _ = writeln!(out, "{SAMPLE_PREFIX}{}", s.id);
            let _ = writeln!(out, "{INPUT}: {}", s.input);
            for (name, output) in self.systems.iter().zip(&s.outputs) {
                let _ = writeln!(out, "{name}: {output}");
                let _ = writeln!(out, "{LABEL}:");
            }
            for r in &s.references {
                let _ = writeln!(out, "{REFERENCE}: {r}");
            }
        }
        out
    }
}

/// Exact, Good, Over-corrected, Wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    E,
    G,
    O,
    W,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::E, Label::G, Label::O, Label::W];

    fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "E" => Ok(Label::E),
            "G" => Ok(Label::G),
            "O" => Ok(Label::O),
            "W" => Ok(Label::W),
            "" => Err("missing label".to_string()),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Label::E => "E",
            Label::G => "G",
            Label::O => "O",
            Label::W => "W",
        };
        f.write_str(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    pub id: usize,
    /// One label per system, in sheet order.
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSheet {
    pub systems: Vec<String>,
    pub samples: Vec<LabeledSample>,
}

struct OpenSample {
    id: usize,
    entries: Vec<(String, Option<String>)>,
}

/// Parses a filled-in sheet. Every system line must be followed by a
/// `label:` line holding E, G, O or W (any case).
pub fn parse_labeled(text: &str) -> Result<LabeledSheet, AnnotationError> {
    let mut systems: Option<Vec<String>> = None;
    let mut samples = Vec::new();
    let mut open: Option<OpenSample> = None;

    let mut close = |open: OpenSample, systems: &mut Option<Vec<String>>| -> Result<(), AnnotationError> {
        let names: Vec<String> = open.entries.iter().map(|(n, _)| n.clone()).collect();
        match systems {
            None => *systems = Some(names.clone()),
            Some(expected) if *expected != names => {
                return Err(AnnotationError::Label {
                    sample: open.id,
                    message: format!("systems {names:?} differ from {expected:?}"),
                })
            }
            Some(_) => {}
        }
        let mut labels = Vec::with_capacity(open.entries.len());
        for (name, label) in open.entries {
            let raw = label.unwrap_or_default();
            let label = raw.parse::<Label>().map_err(|message| AnnotationError::Label {
                sample: open.id,
                message: format!("{name}: {message}"),
            })?;
            labels.push(label);
        }
        samples.push(LabeledSample { id: open.id, labels });
        Ok(())
    };

    for (offset, raw) in text.strip_prefix('\u{feff}').unwrap_or(text).lines().enumerate() {
        let number = offset + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if let Some(id) = line.strip_prefix(SAMPLE_PREFIX) {
            if let Some(o) = open.take() {
                close(o, &mut systems)?;
            }
            let id = id.trim().parse().map_err(|_| AnnotationError::Parse {
                line: number,
                message: format!("bad sample id {id:?}"),
            })?;
            open = Some(OpenSample {
                id,
                entries: Vec::new(),
            });
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let Some(current) = open.as_mut() else {
            return Err(AnnotationError::Parse {
                line: number,
                message: "content before the first sample".into(),
            });
        };
        let (key, value) = line.split_once(':').ok_or_else(|| AnnotationError::Parse {
            line: number,
            message: format!("expected `name: text`, found {line:?}"),
        })?;
        match key {
            INPUT | REFERENCE => {}
            LABEL => match current.entries.last_mut() {
                Some((_, slot @ None)) => *slot = Some(value.to_string()),
                _ => {
                    return Err(AnnotationError::Parse {
                        line: number,
                        message: "label line without a preceding output line".into(),
                    })
                }
            },
            name => current.entries.push((name.to_string(), None)),
        }
    }
    if let Some(o) = open.take() {
        close(o, &mut systems)?;
    }
    Ok(LabeledSheet {
        systems: systems.unwrap_or_default(),
        samples,
    })
}

/// Per-system label counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTally {
    pub samples: usize,
    pub rows: Vec<(String, [usize; 4])>,
}

impl LabelTally {
    pub fn counts(&self, system: &str) -> Option<[usize; 4]> {
        self.rows.iter().find(|(n, _)| n == system).map(|(_, c)| *c)
    }

    /// Aligned plain-text table with E, G, O, W columns.
    pub fn render(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|(n, _)| n.chars().count())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut out = String::new();
        let _ = write!(out, "{:width$}", "");
        for label in Label::ALL {
            let _ = write!(out, "{label:>6}");
        }
        out.push('\n');
        for (name, counts) in &self.rows {
            let pad = width - name.chars().count();
            let _ = write!(out, "{name}{}", " ".repeat(pad));
            for c in counts {
                let _ = write!(out, "{c:>6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Counts labels per system and checks that each row sums to the number of
/// samples.
pub fn tally(sheet: &LabeledSheet) -> Result<LabelTally, AnnotationError> {
    let mut rows: Vec<(String, [usize; 4])> = sheet.systems.iter().map(|n| (n.clone(), [0; 4])).collect();
    for s in &sheet.samples {
        for (row, label) in rows.iter_mut().zip(&s.labels) {
            row.1[label.index()] += 1;
        }
    }
    for (system, counts) in &rows {
        let sum: usize = counts.iter().sum();
        if sum != sheet.samples.len() {
            return Err(AnnotationError::Conservation {
                system: system.clone(),
                sum,
                samples: sheet.samples.len(),
            });
        }
    }
    Ok(LabelTally {
        samples: sheet.samples.len(),
        rows,
    })
}

/// Observed agreement between two annotators over the same sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub compared: usize,
    pub agreed: usize,
    /// `confusion[a][b]`: first annotator said `Label::ALL[a]`, second `Label::ALL[b]`.
    pub confusion: [[usize; 4]; 4],
}

impl Agreement {
    pub fn rate(&self) -> f64 {
        if self.compared == 0 {
            1.0
        } else {
            self.agreed as f64 / self.compared as f64
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "agreement {}/{} = {:.2}%\n",
            self.agreed,
            self.compared,
            self.rate() * 100.0
        );
        out.push_str("a\\b");
        for label in Label::ALL {
            let _ = write!(out, "{label:>6}");
        }
        out.push('\n');
        for (label, row) in Label::ALL.iter().zip(&self.confusion) {
            let _ = write!(out, "{label:<3}");
            for c in row {
                let _ = write!(out, "{c:>6}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn agreement(first: &LabeledSheet, second: &LabeledSheet) -> Result<Agreement, AnnotationError> {
    if first.systems != second.systems {
        return Err(AnnotationError::Mismatch(format!(
            "systems {:?} vs {:?}",
            first.systems, second.systems
        )));
    }
    let ids = |s: &LabeledSheet| s.samples.iter().map(|x| x.id).collect::<Vec<_>>();
    if ids(first) != ids(second) {
        return Err(AnnotationError::Mismatch("sample ids differ".into()));
    }
    let mut result = Agreement {
        compared: 0,
        agreed: 0,
        confusion: [[0; 4]; 4],
    };
    for (a, b) in first.samples.iter().zip(&second.samples) {
        for (la, lb) in a.labels.iter().zip(&b.labels) {
            result.compared += 1;
            result.agreed += usize::from(la == lb);
            result.confusion[la.index()][lb.index()] += 1;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("句子{i}")).collect()
    }

    fn fill(sheet: &str, labels: &[&str]) -> String {
        let mut it = labels.iter();
        sheet
            .lines()
            .map(|l| {
                if l == "label:" {
                    format!("label: {}", it.next().unwrap())
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn full_sample_is_every_id_sorted() {
        assert_eq!(sample_ids(5, 5, 99).unwrap(), vec![1, 2, 3, 4, 5]);
        assert!(sample_ids(3, 4, 0).is_err());
        assert!(sample_ids(0, 0, 0).unwrap().is_empty());
    }

    #[test]
    fn samples_are_distinct_and_seeded() {
        let a = sample_ids(2000, 200, 7).unwrap();
        let b = sample_ids(2000, 200, 7).unwrap();
        let c = sample_ids(2000, 200, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 200);
        assert!(a.iter().all(|&id| (1..=2000).contains(&id)));
    }

    #[test]
    fn sheet_layout() {
        let sources = corpus(3);
        let systems = vec![
            ("seq2seq-1".to_string(), vec!["a".to_string(), "b".into(), "c".into()]),
            ("Edit-level".to_string(), vec!["x".to_string(), "y".into(), "z".into()]),
        ];
        let sheet = sample(&sources, &systems, None, 3, 1).unwrap();
        let text = sheet.render();
        let block: Vec<&str> = text.lines().skip(2).take(6).collect();
        assert_eq!(
            block,
            vec![
                "### sample 1",
                "Input: 句子1",
                "seq2seq-1: a",
                "label:",
                "Edit-level: x",
                "label:"
            ]
        );
    }

    #[test]
    fn bad_names_and_lengths() {
        let sources = corpus(2);
        let short = vec![("s".to_string(), vec!["a".to_string()])];
        assert!(matches!(
            sample(&sources, &short, None, 1, 0),
            Err(AnnotationError::OutputCount { .. })
        ));
        for bad in ["Input", "a:b", "", "label"] {
            let systems = vec![(bad.to_string(), sources.clone())];
            assert!(sample(&sources, &systems, None, 1, 0).is_err(), "{bad}");
        }
    }

    #[test]
    fn tally_hand_counted_fixture() {
        let sources = corpus(4);
        let systems = vec![("A".to_string(), sources.clone()), ("B".to_string(), sources.clone())];
        let sheet = sample(&sources, &systems, None, 4, 3).unwrap().render();
        // samples 1..4, labels alternate A, B
        let filled = fill(&sheet, &["e", "G", "E", "o", "W", "w", "g", "E"]);
        let tallied = tally(&parse_labeled(&filled).unwrap()).unwrap();
        assert_eq!(tallied.counts("A"), Some([2, 1, 0, 1]));
        assert_eq!(tallied.counts("B"), Some([1, 1, 1, 1]));
        let table = tallied.render();
        assert!(table.lines().nth(1).unwrap().starts_with("A "));
    }

    #[test]
    fn missing_or_unknown_labels_fail() {
        let sources = corpus(2);
        let systems = vec![("A".to_string(), sources.clone())];
        let sheet = sample(&sources, &systems, None, 2, 3).unwrap().render();
        assert!(matches!(parse_labeled(&sheet), Err(AnnotationError::Label { .. })));
        let filled = fill(&sheet, &["E", "X"]);
        assert!(matches!(
            parse_labeled(&filled),
            Err(AnnotationError::Label { sample: 2, .. })
        ));
    }

    #[test]
    fn conservation_is_enforced() {
        let sheet = LabeledSheet {
            systems: vec!["A".into()],
            samples: vec![LabeledSample { id: 1, labels: vec![] }],
        };
        assert!(matches!(tally(&sheet), Err(AnnotationError::Conservation { .. })));
    }

    #[test]
    fn agreement_counts() {
        let a = LabeledSheet {
            systems: vec!["A".into()],
            samples: vec![
                LabeledSample {
                    id: 1,
                    labels: vec![Label::E],
                },
                LabeledSample {
                    id: 2,
                    labels: vec![Label::G],
                },
            ],
        };
        let mut b = a.clone();
        b.samples[1].labels[0] = Label::W;
        let r = agreement(&a, &b).unwrap();
        assert_eq!((r.agreed, r.compared), (1, 2));
        assert_eq!(r.rate(), 0.5);
        assert_eq!(r.confusion[1][3], 1);
        b.samples.pop();
        assert!(agreement(&a, &b).is_err());
    }
}
