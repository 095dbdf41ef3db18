//! Scholarly-work records, BibTeX input, and corpus inclusion filters.

mod bibtex;
mod filter;
mod language;
mod work;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bibtex::{
    bib_to_work, parse_bibtex, to_bibtex, BibDiagnostic, BibEntry, BibParse, DiagnosticKind,
};
pub use filter::{filter_works, months_between, FilterPolicy, WorkFilter};
pub use language::{detect_language, LanguageDetector, TrigramDetector};
pub use work::{
    normalize_title, parse_works, parse_works_with, work_to_record_line, Corpus, IngestOptions,
    ParsedWorks, SkipReason, Work,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error reading records: {0}")]
    Io(#[from] std::io::Error),
    #[error("work id must not be empty")]
    EmptyId,
    #[error("duplicate work id '{0}'")]
    DuplicateId(String),
}

/// Machine-readable summary of one ingestion run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub parsed: usize,
    pub skipped: usize,
    pub filtered: usize,
    pub retained: usize,
}

/// Parses BibTeX text and converts every titled entry into a [`Work`].
pub fn works_from_bibtex(text: &str) -> (Vec<Work>, Vec<BibDiagnostic>) {
    let parsed = parse_bibtex(text);
    let works = parsed.entries.iter().filter_map(bib_to_work).collect();
    (works, parsed.diagnostics)
}
