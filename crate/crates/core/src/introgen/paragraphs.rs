//! Manuscript paragraphs and the reference split.

use chrono::{Datelike, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Work;

pub const MIN_PARAGRAPH_CHARS: usize = 200;

const DROPPED_ENVIRONMENTS: &[&str] = &[
    "figure", "table", "equation", "align", "eqnarray", "gather", "multline", "tabular",
    "algorithm", "lstlisting", "verbatim", "displaymath", "thebibliography", "wrapfigure",
];

/// Removes `%` comments, leaving escaped `\%` alone.
fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let mut prev = None;
        let mut cut = line.len();
        for (i, c) in line.char_indices() {
            if c == '%' && prev != Some('\\') {
                cut = i;
                break;
            }
            prev = Some(c);
        }
        let kept = &line[..cut];
        // Comment-only lines are removed entirely.
        if cut < line.len() && kept.trim().is_empty() {
            continue;
        }
        out.push_str(kept);
        out.push('\n');
    }
    out
}

fn drop_environments(text: &str) -> String {
    let begin = Regex::new(r"\\begin\{([A-Za-z]+)\*?\}").expect("valid regex");
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(m) = begin.captures(rest) {
        let whole = m.get(0).unwrap();
        let name = &m[1];
        if !DROPPED_ENVIRONMENTS.contains(&name) {
            out.push_str(&rest[..whole.end()]);
            rest = &rest[whole.end()..];
            continue;
        }
        out.push_str(&rest[..whole.start()]);
        let after = &rest[whole.end()..];
        let end = Regex::new(&format!(r"\\end\{{{}\*?\}}", regex::escape(name))).expect("valid regex");
        rest = match end.find(after) {
            Some(e) => &after[e.end()..],
            None => "",
        };
    }
    out.push_str(rest);
    out
}

/// Prose paragraphs of a marked-up manuscript: comments stripped, float and
/// math environments dropped, split on blank lines, short blocks discarded.
pub fn extract_paragraphs(manuscript: &str) -> Vec<String> {
    let body = drop_environments(&strip_comments(manuscript));
    let mut paragraphs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut flush = |current: &mut Vec<&str>| {
        if !current.is_empty() {
            let p = current.join("\n");
            if p.chars().count() >= MIN_PARAGRAPH_CHARS {
                paragraphs.push(p);
            }
            current.clear();
        }
    };
    for line in body.lines() {
        if line.trim().is_empty() {
            flush(&mut current);
        } else {
            current.push(line.trim());
        }
    }
    flush(&mut current);
    paragraphs
}

/// `\title{...}` of a manuscript, if present on one line.
pub fn manuscript_title(manuscript: &str) -> Option<String> {
    let re = Regex::new(r"\\title\{([^}]*)\}").expect("valid regex");
    re.captures(manuscript)
        .map(|c| c[1].split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|t| !t.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecencyPolicy {
    pub y_years: u32,
    pub reference_date: NaiveDate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSplit {
    pub canonical: Vec<Work>,
    pub recent: Vec<Work>,
    /// Ids of references without a year, left out of both groups.
    pub undated: Vec<String>,
}

/// Canonical when published more than `y_years` before the reference
/// date's year, recent otherwise. Order is preserved within each group.
pub fn split_references(refs: &[Work], policy: &RecencyPolicy) -> ReferenceSplit {
    let now = policy.reference_date.year();
    let mut split = ReferenceSplit::default();
    for w in refs {
        match w.year {
            None => split.undated.push(w.id.clone()),
            Some(y) if now - y > policy.y_years as i32 => split.canonical.push(w.clone()),
            Some(_) => split.recent.push(w.clone()),
        }
    }
    split
}
