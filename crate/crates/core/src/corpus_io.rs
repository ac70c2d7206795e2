//! Reading and writing corpus files.
//!
//! Every file is UTF-8. Readers strip a leading BOM, normalize CRLF to LF and
//! skip a first line equal to [`HEADER`]; writers emit LF without a BOM.
//!
//! Reference files use a small M2-like block format:
//!
//! ```text
//! S <source sentence>
//! A <start>|||<end>|||<replacement>|||<annotator-id>
//! ```
//!
//! Blocks are separated by blank lines and numbered from 1. Offsets are
//! character indices. `A -1|||-1|||noop|||<id>` records an annotator who
//! asserts the sentence needs no change.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit::{Edit, EditError, EditSet};
use crate::ensemble::{EnsembleOutput, StrategyTag};
use crate::scorer::Perplexity;

/// Version line written at the top of files and skipped by every reader.
pub const HEADER: &str = "# gec-ensemble v1";
const CONFIG_PREFIX: &str = "# config ";
const NOOP_LINE: &str = "-1|||-1|||noop";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not valid UTF-8")]
    Encoding { path: PathBuf },
    #[error("{path}: has {found} lines but {expected} were expected; first mismatching line is {line}")]
    LineCountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
        line: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    InvalidEdits {
        line: usize,
        #[source]
        source: EditError,
    },
    #[error("cannot write {what}: contains a line break")]
    LineBreak { what: String },
    #[error("write failed: {0}")]
    Write(#[from] std::io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        line,
        message: message.into(),
    }
}

/// Normalizes raw file text and splits it into lines, with the 1-based line
/// number of the first returned line.
pub fn text_lines(text: &str) -> (Vec<String>, usize) {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let text = text.replace("\r\n", "\n");
    let mut lines: Vec<String> = text.split('\n').map(str::to_string).collect();
    if lines.last().is_some_and(String::is_empty) {
        lines.pop();
    }
    if lines.first().is_some_and(|l| l == HEADER) {
        lines.remove(0);
        (lines, 2)
    } else {
        (lines, 1)
    }
}

pub fn read_text(path: &Path) -> Result<String, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    String::from_utf8(bytes).map_err(|_| CorpusError::Encoding {
        path: path.to_path_buf(),
    })
}

/// One sentence per line.
pub fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    Ok(text_lines(&read_text(path)?).0)
}

fn check_line(text: &str, what: &str) -> Result<(), CorpusError> {
    if text.contains(['\n', '\r']) {
        return Err(CorpusError::LineBreak { what: what.to_string() });
    }
    Ok(())
}

pub fn write_lines<W: Write, S: AsRef<str>>(mut writer: W, lines: &[S]) -> Result<(), CorpusError> {
    for line in lines {
        check_line(line.as_ref(), "sentence")?;
        writer.write_all(line.as_ref().as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// A source sentence with the hypotheses of every system, numbered from 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelRecord {
    pub id: usize,
    pub source: String,
    pub hypotheses: Vec<String>,
}

/// Reads a source file and the line-aligned hypothesis files of N systems.
pub fn read_parallel<P: AsRef<Path>>(source_path: &Path, hyp_paths: &[P]) -> Result<Vec<ParallelRecord>, CorpusError> {
    let sources = read_lines(source_path)?;
    let mut columns = Vec::with_capacity(hyp_paths.len());
    for path in hyp_paths {
        let path = path.as_ref();
        let lines = read_lines(path)?;
        if lines.len() != sources.len() {
            return Err(CorpusError::LineCountMismatch {
                path: path.to_path_buf(),
                expected: sources.len(),
                found: lines.len(),
                line: lines.len().min(sources.len()) + 1,
            });
        }
        columns.push(lines);
    }
    Ok(sources
        .into_iter()
        .enumerate()
        .map(|(i, source)| ParallelRecord {
            id: i + 1,
            source,
            hypotheses: columns.iter().map(|c| c[i].clone()).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotator {
    pub id: String,
    pub edits: EditSet,
}

/// All annotators' references for one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceEntry {
    pub source: String,
    pub annotators: Vec<Annotator>,
}

impl ReferenceEntry {
    pub fn edit_sets(&self) -> Vec<EditSet> {
        self.annotators.iter().map(|a| a.edits.clone()).collect()
    }
}

pub fn read_references(path: &Path) -> Result<BTreeMap<usize, ReferenceEntry>, CorpusError> {
    parse_references(&read_text(path)?)
}

struct PendingBlock {
    source: String,
    source_line: usize,
    annotators: Vec<(String, Vec<Edit>, bool)>,
}

impl PendingBlock {
    fn finish(self) -> Result<ReferenceEntry, CorpusError> {
        let mut annotators = Vec::new();
        for (id, edits, noop) in self.annotators {
            if noop && !edits.is_empty() {
                return Err(parse_err(
                    self.source_line,
                    format!("annotator {id:?} marks noop and also lists edits"),
                ));
            }
            let edits = EditSet::new(&self.source, edits).map_err(|source| CorpusError::InvalidEdits {
                line: self.source_line,
                source,
            })?;
            annotators.push(Annotator { id, edits });
        }
        if annotators.is_empty() {
            annotators.push(Annotator {
                id: "0".to_string(),
                edits: EditSet::empty(self.source.chars().count()),
            });
        }
        Ok(ReferenceEntry {
            source: self.source,
            annotators,
        })
    }
}

pub fn parse_references(text: &str) -> Result<BTreeMap<usize, ReferenceEntry>, CorpusError> {
    let (lines, first_line) = text_lines(text);
    let mut entries = BTreeMap::new();
    let mut block: Option<PendingBlock> = None;

    for (offset, line) in lines.iter().enumerate() {
        let number = first_line + offset;
        if line.is_empty() {
            if let Some(b) = block.take() {
                entries.insert(entries.len() + 1, b.finish()?);
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("S ").or((line == "S").then_some("")) {
            if let Some(b) = block.take() {
                entries.insert(entries.len() + 1, b.finish()?);
            }
            block = Some(PendingBlock {
                source: rest.to_string(),
                source_line: number,
                annotators: Vec::new(),
            });
            continue;
        }
        let Some(rest) = line.strip_prefix("A ") else {
            return Err(parse_err(number, format!("expected an S or A line, found {line:?}")));
        };
        let Some(b) = block.as_mut() else {
            return Err(parse_err(number, "A line before any S line"));
        };
        let (body, annotator) = rest
            .rsplit_once("|||")
            .ok_or_else(|| parse_err(number, "A line needs start|||end|||replacement|||annotator"))?;
        let slot = match b.annotators.iter().position(|(id, _, _)| id == annotator) {
            Some(i) => i,
            None => {
                b.annotators.push((annotator.to_string(), Vec::new(), false));
                b.annotators.len() - 1
            }
        };
        if body == NOOP_LINE {
            b.annotators[slot].2 = true;
            continue;
        }
        let mut parts = body.splitn(3, "|||");
        let (start, end, replacement) = match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(e), Some(r)) => (s, e, r),
            _ => return Err(parse_err(number, "A line needs start|||end|||replacement|||annotator")),
        };
        let index = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(number, format!("bad character offset {s:?}")))
        };
        let edit = Edit::new(index(start)?, index(end)?, replacement);
        let len = b.source.chars().count();
        if edit.start > edit.end || edit.end > len {
            return Err(CorpusError::InvalidEdits {
                line: number,
                source: EditError::OutOfBounds { edit, source_len: len },
            });
        }
        b.annotators[slot].1.push(edit);
    }
    if let Some(b) = block.take() {
        entries.insert(entries.len() + 1, b.finish()?);
    }
    Ok(entries)
}

pub fn write_references<'a, W, I>(mut writer: W, entries: I) -> Result<(), CorpusError>
where
    W: Write,
    I: IntoIterator<Item = &'a ReferenceEntry>,
{
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for (i, entry) in entries.into_iter().enumerate() {
        check_line(&entry.source, "reference source")?;
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "S {}", entry.source);
        for annotator in &entry.annotators {
            if annotator.id.contains("|||") || annotator.id.is_empty() {
                return Err(CorpusError::Parse {
                    line: 0,
                    message: format!("annotator id {:?} is not writable", annotator.id),
                });
            }
            check_line(&annotator.id, "annotator id")?;
            if annotator.edits.is_empty() {
                let _ = writeln!(out, "A {NOOP_LINE}|||{}", annotator.id);
            }
            for e in &annotator.edits {
                check_line(&e.replacement, "replacement")?;
                let _ = writeln!(out, "A {}|||{}|||{}|||{}", e.start, e.end, e.replacement, annotator.id);
            }
        }
    }
    writer.write_all(out.as_bytes())?;
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Tsv,
    Jsonl,
}

/// One ensembled sentence as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub id: usize,
    pub source: String,
    pub output: String,
    pub strategy: StrategyTag,
    pub ppl: Option<Perplexity>,
    pub capped: bool,
    pub edits: Vec<Edit>,
}

impl OutputRecord {
    pub fn new(id: usize, source: &str, result: &EnsembleOutput) -> Self {
        Self {
            id,
            source: source.to_string(),
            output: result.output.clone(),
            strategy: result.strategy,
            ppl: result.ppl,
            capped: result.capped,
            edits: result.chosen_edits.edits().to_vec(),
        }
    }
}

fn escape_tsv(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_tsv(s: &str, line: usize) -> Result<String, CorpusError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(parse_err(
                    line,
                    format!("bad escape \\{}", other.map_or(String::new(), String::from)),
                ))
            }
        }
    }
    Ok(out)
}

/// Writes records after the version header and, when given, a
/// `# config <json>` line echoing the run configuration.
pub fn write_outputs<W: Write>(
    mut writer: W,
    records: &[OutputRecord],
    format: OutputFormat,
    config: Option<&serde_json::Value>,
) -> Result<(), CorpusError> {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    if let Some(config) = config {
        let _ = writeln!(out, "{CONFIG_PREFIX}{config}");
    }
    for r in records {
        match format {
            OutputFormat::Jsonl => {
                out.push_str(&serde_json::to_string(r).expect("records serialize"));
            }
            OutputFormat::Tsv => {
                let ppl = r.ppl.map_or(String::new(), |p| p.value().to_string());
                let edits = serde_json::to_string(&r.edits).expect("edits serialize");
                let _ = write!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.id,
                    escape_tsv(&r.source),
                    escape_tsv(&r.output),
                    r.strategy,
                    ppl,
                    r.capped,
                    escape_tsv(&edits)
                );
            }
        }
        out.push('\n');
    }
    writer.write_all(out.as_bytes())?;
    writer.flush()?;
    Ok(())
}

/// Parsed output file: the echoed configuration, if any, and the records.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub config: Option<serde_json::Value>,
    pub records: Vec<OutputRecord>,
}

pub fn parse_outputs(text: &str, format: OutputFormat) -> Result<OutputFile, CorpusError> {
    let (lines, first_line) = text_lines(text);
    let mut config = None;
    let mut records = Vec::new();
    for (offset, line) in lines.iter().enumerate() {
        let number = first_line + offset;
        if let Some(json) = line.strip_prefix(CONFIG_PREFIX) {
            config = Some(serde_json::from_str(json).map_err(|e| parse_err(number, e.to_string()))?);
            continue;
        }
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let record = match format {
            OutputFormat::Jsonl => serde_json::from_str(line).map_err(|e| parse_err(number, e.to_string()))?,
            OutputFormat::Tsv => parse_tsv_record(line, number)?,
        };
        records.push(record);
    }
    Ok(OutputFile { config, records })
}

fn parse_tsv_record(line: &str, number: usize) -> Result<OutputRecord, CorpusError> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [id, source, output, strategy, ppl, capped, edits] = fields[..] else {
        return Err(parse_err(
            number,
            format!("expected 7 tab-separated fields, found {}", fields.len()),
        ));
    };
    let ppl = if ppl.is_empty() {
        None
    } else {
        let value = ppl.parse().ok().and_then(Perplexity::from_value);
        Some(value.ok_or_else(|| parse_err(number, format!("bad ppl {ppl:?}")))?)
    };
    Ok(OutputRecord {
        id: id.parse().map_err(|_| parse_err(number, format!("bad id {id:?}")))?,
        source: unescape_tsv(source, number)?,
        output: unescape_tsv(output, number)?,
        strategy: strategy.parse().map_err(|e: String| parse_err(number, e))?,
        ppl,
        capped: capped
            .parse()
            .map_err(|_| parse_err(number, format!("bad capped flag {capped:?}")))?,
        edits: serde_json::from_str(&unescape_tsv(edits, number)?).map_err(|e| parse_err(number, e.to_string()))?,
    })
}

/// Per-sentence edits as produced by `extract`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditsRecord {
    pub id: usize,
    pub edits: Vec<Edit>,
}

pub fn write_edits<W: Write>(mut writer: W, records: &[EditsRecord]) -> Result<(), CorpusError> {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("edits serialize"));
        out.push('\n');
    }
    writer.write_all(out.as_bytes())?;
    writer.flush()?;
    Ok(())
}

pub fn parse_edits(text: &str) -> Result<Vec<EditsRecord>, CorpusError> {
    let (lines, first_line) = text_lines(text);
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(offset, l)| serde_json::from_str(l).map_err(|e| parse_err(first_line + offset, e.to_string())))
        .collect()
}
