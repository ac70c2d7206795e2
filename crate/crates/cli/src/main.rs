//! `gec-ensemble`: every pipeline stage as a subcommand.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gec_ensemble::annotation::{self, parse_labeled};
use gec_ensemble::corpus_io::{
    self, read_lines, read_parallel, read_references, read_text, write_edits, write_lines, write_outputs, EditsRecord,
    OutputFormat, OutputRecord,
};
use gec_ensemble::ensemble::NoScorer;
use gec_ensemble::eval::{corpus_scores, match_sentence_with, EvalCounts, MATCHING_NOTE};
use gec_ensemble::scorer::{ExternalScorer, SCORER_CMD_ENV};
use gec_ensemble::{
    extract_edits, run_corpus, CapFallback, EditSet, EnsembleInput, NGramModel, RunOptions, Scorer, Strategy,
};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gec-ensemble",
    version,
    about = "Ensemble grammatical error correction systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract char-level edits from source/hypothesis line pairs as JSONL.
    Extract {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a JSONL edits file to the source sentences.
    Apply {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        edits: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep the edits proposed by at least T systems.
    Vote {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, short = 't')]
        threshold: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Perplexity-guided ensembling.
    Ensemble {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        /// `ngram:MODEL` for a trained n-gram model, or `cmd` for an external scorer process.
        #[arg(long)]
        scorer: String,
        /// Command line of the external scorer.
        #[arg(long, env = SCORER_CMD_ENV)]
        scorer_cmd: Option<String>,
        /// Seconds to wait for each external scorer reply.
        #[arg(long, default_value_t = 60.0)]
        scorer_timeout: f64,
        /// Maximum number of combinations scored per sentence.
        #[arg(long, default_value_t = gec_ensemble::ensemble::DEFAULT_COMBINATION_CAP)]
        cap: u64,
        /// What to emit for sentences over the cap.
        #[arg(long, value_enum, default_value_t = FallbackArg::None)]
        cap_fallback: FallbackArg,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Train a character n-gram model.
    TrainNgram {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = gec_ensemble::scorer::DEFAULT_ORDER)]
        order: usize,
        #[arg(long, default_value_t = gec_ensemble::scorer::DEFAULT_K)]
        k: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Char-level precision, recall and F0.5 against multi-reference data.
    Eval {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        refs: PathBuf,
    },
    /// Draw sentences into an annotation sheet.
    Sample {
        #[arg(long)]
        source: PathBuf,
        /// System outputs as NAME=FILE; repeat per system.
        #[arg(long = "system", required = true, value_parser = parse_system)]
        systems: Vec<(String, PathBuf)>,
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count E/G/O/W labels in a filled-in sheet.
    Tally {
        #[arg(long)]
        sheet: PathBuf,
    },
    /// Agreement between two annotators' copies of a sheet.
    Agreement {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    source: PathBuf,
    /// One hypothesis file per system.
    #[arg(long = "hyp", required = true, num_args = 1..)]
    hyps: Vec<PathBuf>,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sentences processed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FormatArg {
    Tsv,
    Jsonl,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tsv => OutputFormat::Tsv,
            FormatArg::Jsonl => OutputFormat::Jsonl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Sentence,
    Edit,
    Combo,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FallbackArg {
    None,
    EditLevel,
}

/// Everything needed to rerun a command, echoed into output headers.
#[derive(Serialize)]
struct RunConfig {
    command: &'static str,
    strategy: Strategy,
    #[serde(skip_serializing_if = "Option::is_none")]
    scorer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cap: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cap_fallback: Option<FallbackArg>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    source: PathBuf,
    hyps: Vec<PathBuf>,
    format: FormatArg,
    jobs: usize,
}

fn parse_system(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=FILE, got {s:?}"))?;
    Ok((name.to_string(), PathBuf::from(path)))
}

struct Timer {
    started: Instant,
}

impl Timer {
    fn start() -> Self {
        Self {
            started: Instant::now(),
        }
    }

    fn stage(&mut self, name: &str) {
        eprintln!("[time] {name}: {:.3}s", self.started.elapsed().as_secs_f64());
        self.started = Instant::now();
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Number of records that failed.
type Failures = usize;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("{failed} record(s) failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<Failures> {
    match command {
        Command::Extract { source, hyp, out } => extract(&source, &hyp, out.as_deref()),
        Command::Apply { source, edits, out } => apply(&source, &edits, out.as_deref()),
        Command::Vote {
            corpus,
            threshold,
            output,
        } => {
            let config = RunConfig {
                command: "vote",
                strategy: Strategy::Vote { threshold },
                scorer: None,
                threshold: Some(threshold),
                cap: None,
                cap_fallback: None,
                seed: None,
                source: corpus.source.clone(),
                hyps: corpus.hyps.clone(),
                format: output.format,
                jobs: output.jobs,
            };
            ensemble(&corpus, &config, &NoScorer, &output)
        }
        Command::Ensemble {
            corpus,
            strategy,
            scorer,
            scorer_cmd,
            scorer_timeout,
            cap,
            cap_fallback,
            output,
        } => {
            ensure!(cap >= 1, "--cap must be at least 1");
            let fallback = match cap_fallback {
                FallbackArg::None => CapFallback::Source,
                FallbackArg::EditLevel => CapFallback::EditLevel,
            };
            let strategy = match strategy {
                StrategyArg::Sentence => Strategy::SentenceLevel,
                StrategyArg::Edit => Strategy::EditLevel,
                StrategyArg::Combo => Strategy::EditCombination { cap, fallback },
            };
            let combo = matches!(strategy, Strategy::EditCombination { .. });
            let mut timer = Timer::start();
            let backend = open_scorer(&scorer, scorer_cmd.as_deref(), scorer_timeout)?;
            timer.stage("load scorer");
            let config = RunConfig {
                command: "ensemble",
                strategy,
                scorer: Some(match (&*scorer, &scorer_cmd) {
                    ("cmd", Some(cmd)) => format!("cmd:{cmd}"),
                    _ => scorer.clone(),
                }),
                threshold: None,
                cap: combo.then_some(cap),
                cap_fallback: combo.then_some(cap_fallback),
                seed: None,
                source: corpus.source.clone(),
                hyps: corpus.hyps.clone(),
                format: output.format,
                jobs: output.jobs,
            };
            ensemble(&corpus, &config, backend.as_ref(), &output)
        }
        Command::TrainNgram { corpus, order, k, out } => {
            let mut timer = Timer::start();
            let lines = read_lines(&corpus)?;
            timer.stage("read corpus");
            let model = NGramModel::train(&lines, order, k)?;
            timer.stage("train");
            let file = File::create(&out).with_context(|| format!("cannot create {}", out.display()))?;
            model.save(BufWriter::new(file))?;
            timer.stage("save");
            eprintln!(
                "trained order-{order} model on {} sentences, {} distinct characters",
                lines.len(),
                model.vocabulary().len()
            );
            Ok(0)
        }
        Command::Eval { source, hyp, refs } => eval(&source, &hyp, &refs),
        Command::Sample {
            source,
            systems,
            refs,
            n,
            seed,
            out,
        } => {
            let sources = read_lines(&source)?;
            let outputs = systems
                .into_iter()
                .map(|(name, path)| Ok((name, read_lines(&path)?)))
                .collect::<Result<Vec<_>>>()?;
            let references = refs.as_deref().map(read_references).transpose()?;
            let sheet = annotation::sample(&sources, &outputs, references.as_ref(), n, seed)?;
            let mut w = open_out(out.as_deref())?;
            w.write_all(sheet.render().as_bytes())?;
            w.flush()?;
            Ok(0)
        }
        Command::Tally { sheet } => {
            let labeled = parse_labeled(&read_text(&sheet)?)?;
            let tally = annotation::tally(&labeled)?;
            print!("{}", tally.render());
            println!("samples: {}", tally.samples);
            Ok(0)
        }
        Command::Agreement { a, b } => {
            let first = parse_labeled(&read_text(&a)?)?;
            let second = parse_labeled(&read_text(&b)?)?;
            print!("{}", annotation::agreement(&first, &second)?.render());
            Ok(0)
        }
    }
}

fn open_scorer(backend: &str, cmd: Option<&str>, timeout: f64) -> Result<Box<dyn Scorer>> {
    if let Some(path) = backend.strip_prefix("ngram:") {
        let file = File::open(path).with_context(|| format!("cannot open model {path}"))?;
        return Ok(Box::new(NGramModel::load(io::BufReader::new(file))?));
    }
    ensure!(backend == "cmd", "unknown scorer {backend:?}; expected ngram:MODEL or cmd");
    let Some(cmd) = cmd else {
        bail!("--scorer cmd needs --scorer-cmd or {SCORER_CMD_ENV}");
    };
    ensure!(
        timeout > 0.0 && timeout.is_finite(),
        "--scorer-timeout must be positive"
    );
    Ok(Box::new(ExternalScorer::spawn(cmd, Duration::from_secs_f64(timeout))?))
}

fn ensemble(corpus: &CorpusArgs, config: &RunConfig, scorer: &dyn Scorer, output: &OutputArgs) -> Result<Failures> {
    ensure!(corpus.hyps.len() >= 2, "an ensemble needs at least 2 --hyp files");
    let mut timer = Timer::start();
    let records = read_parallel(&corpus.source, &corpus.hyps)?;
    timer.stage("read");

    let mut failed = 0;
    let mut inputs = Vec::with_capacity(records.len());
    let mut ids = Vec::with_capacity(records.len());
    for r in &records {
        match EnsembleInput::from_hypotheses(r.source.clone(), &r.hypotheses) {
            Ok(input) => {
                inputs.push(input);
                ids.push(r.id);
            }
            Err(e) => {
                eprintln!("sentence {}: {e}", r.id);
                failed += 1;
            }
        }
    }
    let options = RunOptions {
        jobs: output.jobs.max(1),
    };
    let results = run_corpus(&config.strategy, &inputs, scorer, &options);
    timer.stage(config.strategy.tag().as_str());

    let mut out_records = Vec::with_capacity(results.len());
    let mut capped = 0;
    for ((id, input), result) in ids.iter().zip(&inputs).zip(results) {
        match result {
            Ok(result) => {
                capped += usize::from(result.capped);
                out_records.push(OutputRecord::new(*id, input.source(), &result));
            }
            Err(e) => {
                eprintln!("sentence {id}: {e}");
                failed += 1;
            }
        }
    }
    let header = serde_json::to_value(config)?;
    write_outputs(
        open_out(output.out.as_deref())?,
        &out_records,
        output.format.into(),
        Some(&header),
    )?;
    timer.stage("write");
    if matches!(config.strategy, Strategy::EditCombination { .. }) {
        eprintln!("capped sentences: {capped}");
    }
    eprintln!("{} of {} sentences ensembled", out_records.len(), records.len());
    Ok(failed)
}

fn extract(source: &Path, hyp: &Path, out: Option<&Path>) -> Result<Failures> {
    let records = read_parallel(source, &[hyp])?;
    let edits: Vec<EditsRecord> = records
        .iter()
        .map(|r| EditsRecord {
            id: r.id,
            edits: extract_edits(&r.source, &r.hypotheses[0]).into_edits(),
        })
        .collect();
    write_edits(open_out(out)?, &edits)?;
    Ok(0)
}

fn apply(source: &Path, edits: &Path, out: Option<&Path>) -> Result<Failures> {
    let sources = read_lines(source)?;
    let mut by_id: HashMap<usize, EditsRecord> = HashMap::new();
    for r in corpus_io::parse_edits(&read_text(edits)?)? {
        let id = r.id;
        ensure!(by_id.insert(id, r).is_none(), "{}: duplicate id {id}", edits.display());
    }
    let mut failed = 0;
    let mut lines = Vec::with_capacity(sources.len());
    for (i, s) in sources.iter().enumerate() {
        let id = i + 1;
        let result = match by_id.remove(&id) {
            Some(r) => EditSet::new(s, r.edits).and_then(|set| set.apply(s)),
            None => Ok(s.clone()),
        };
        match result {
            Ok(line) => lines.push(line),
            Err(e) => {
                eprintln!("sentence {id}: {e}");
                failed += 1;
                lines.push(s.clone());
            }
        }
    }
    if let Some(id) = by_id.keys().min() {
        bail!(
            "{}: id {id} beyond the {} source sentences",
            edits.display(),
            sources.len()
        );
    }
    write_lines(open_out(out)?, &lines)?;
    Ok(failed)
}

fn eval(source: &Path, hyp: &Path, refs: &Path) -> Result<Failures> {
    let records = read_parallel(source, &[hyp])?;
    let references = read_references(refs)?;
    ensure!(
        references.len() == records.len(),
        "{} has {} entries, {} has {} sentences",
        refs.display(),
        references.len(),
        source.display(),
        records.len()
    );
    let mut failed = 0;
    let mut counts: Vec<EvalCounts> = Vec::with_capacity(records.len());
    let mut chosen: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &records {
        let entry = &references[&r.id];
        if entry.source != r.source {
            eprintln!("sentence {}: reference source differs from source line", r.id);
            failed += 1;
            continue;
        }
        let hyp = extract_edits(&r.source, &r.hypotheses[0]);
        match match_sentence_with(&r.source, &hyp, &entry.edit_sets()) {
            Ok((c, annotator)) => {
                counts.push(c);
                *chosen.entry(annotator).or_default() += 1;
            }
            Err(e) => {
                eprintln!("sentence {}: {e}", r.id);
                failed += 1;
            }
        }
    }
    let total: EvalCounts = counts.iter().copied().sum();
    let scores = corpus_scores(counts);
    println!("sentences: {}", records.len() - failed);
    println!("TP: {}  FP: {}  FN: {}", total.tp, total.fp, total.fn_);
    println!(
        "P: {:.2}  R: {:.2}  F0.5: {:.2}",
        scores.precision * 100.0,
        scores.recall * 100.0,
        scores.f_half * 100.0
    );
    let picks: Vec<String> = chosen.iter().map(|(a, n)| format!("{a}:{n}")).collect();
    println!("reference chosen (annotator:sentences): {}", picks.join(" "));
    println!("matching: {MATCHING_NOTE}");
    Ok(failed)
}
