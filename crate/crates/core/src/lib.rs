//! Ensembling of grammatical error correction systems.
//!
//! Given one source sentence and the corrections of several systems, the
//! crate extracts character-level edits ([`edit`]), groups competing edits
//! by span, and combines them with threshold voting or with one of three
//! perplexity-guided strategies ([`ensemble`]) backed by a language-model
//! [`scorer`]. [`eval`] computes char-level P/R/F0.5 against multi-reference
//! data, [`corpus_io`] reads and writes the file formats, and [`annotation`]
//! supports sampling outputs for human judgement.
//!
//! ```
//! use gec_ensemble::{edit_combination, vote, CapFallback, EnsembleInput, NGramModel};
//!
//! let input = EnsembleInput::from_hypotheses(
//!     "我以经吃饭了。",
//!     &["我已经吃饭了。", "我已经吃饭了。", "我以经吃过饭了。"],
//! )?;
//! assert_eq!(vote(&input, 2)?.output, "我已经吃饭了。");
//!
//! let model = NGramModel::train(&["我已经吃饭了。", "你吃饭了吗？"], 3, 0.1)?;
//! let best = edit_combination(&input, &model, 300, CapFallback::Source)?;
//! assert_eq!(best.output, "我已经吃饭了。");
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod annotation;
pub mod corpus_io;
pub mod edit;
pub mod ensemble;
pub mod eval;
pub mod scorer;

pub use edit::{apply_edits, extract_edits, group_spans, Edit, EditError, EditSet, SpanGroup};
pub use ensemble::{
    edit_combination, edit_level, run_corpus, sentence_level, vote, CapFallback, EnsembleError, EnsembleInput,
    EnsembleOutput, RunOptions, Strategy, StrategyTag,
};
pub use scorer::{perplexity, NGramModel, Perplexity, ScoreError, Scorer, TokenLogProbs};
