//! BibTeX reader for the common entry/field subset.
//!
//! Handles `@string` macros (expanded within the same file), `#`
//! concatenation, braced, quoted and bare values, and both `{}` and `()`
//! entry delimiters. `@comment` and `@preamble` blocks are skipped. A broken
//! entry produces a diagnostic and parsing resumes at the next `@` that
//! starts a line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::work::Work;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BibEntry {
    pub cite_key: String,
    pub entry_type: String,
    pub fields: BTreeMap<String, String>,
}

impl BibEntry {
    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str).filter(|v| !v.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    UnbalancedBraces,
    DuplicateKey,
    UndefinedMacro,
    Syntax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BibDiagnostic {
    pub line: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct BibParse {
    pub entries: Vec<BibEntry>,
    pub diagnostics: Vec<BibDiagnostic>,
}

pub fn parse_bibtex(text: &str) -> BibParse {
    Parser::new(text).run()
}

struct EntryError {
    pos: usize,
    kind: DiagnosticKind,
    message: String,
}

fn err(pos: usize, kind: DiagnosticKind, message: impl Into<String>) -> EntryError {
    EntryError {
        pos,
        kind,
        message: message.into(),
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    macros: HashMap<String, String>,
    out: BibParse,
    seen_keys: HashSet<String>,
}

const MONTHS: [(&str, &str); 12] = [
    ("jan", "January"),
    ("feb", "February"),
    ("mar", "March"),
    ("apr", "April"),
    ("may", "May"),
    ("jun", "June"),
    ("jul", "July"),
    ("aug", "August"),
    ("sep", "September"),
    ("oct", "October"),
    ("nov", "November"),
    ("dec", "December"),
];

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        let macros = MONTHS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            macros,
            out: BibParse::default(),
            seen_keys: HashSet::new(),
        }
    }

    fn line_of(&self, pos: usize) -> usize {
        self.bytes[..pos.min(self.bytes.len())]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
            + 1
    }

    fn diag(&mut self, pos: usize, kind: DiagnosticKind, message: String) {
        let line = self.line_of(pos);
        self.out.diagnostics.push(BibDiagnostic { line, kind, message });
    }

    fn run(mut self) -> BibParse {
        while let Some(at) = self.src[self.pos..].find('@') {
            let start = self.pos + at;
            self.pos = start + 1;
            if let Err(e) = self.entry(start) {
                self.diag(e.pos, e.kind, e.message);
                self.pos = self.next_line_start_at(start + 1);
            }
        }
        self.out
    }

    /// Position of the next '@' that is the first non-blank character of a
    /// line, or end of input.
    fn next_line_start_at(&self, from: usize) -> usize {
        let mut i = from;
        while i < self.bytes.len() {
            if self.bytes[i] == b'@' && self.at_line_start(i) {
                return i;
            }
            i += 1;
        }
        self.bytes.len()
    }

    fn at_line_start(&self, i: usize) -> bool {
        let mut j = i;
        while j > 0 {
            match self.bytes[j - 1] {
                b'\n' => return true,
                b' ' | b'\t' | b'\r' => j -= 1,
                _ => return false,
            }
        }
        true
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_alphanumeric() || b"_-:./+'".contains(&b) {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.src[start..self.pos].to_string()
    }

    fn entry(&mut self, start: usize) -> Result<(), EntryError> {
        self.skip_ws();
        let kind = self.ident().to_lowercase();
        if kind.is_empty() {
            // A stray '@' in free text between entries.
            return Ok(());
        }
        self.skip_ws();
        let close = match self.peek() {
            Some(b'{') => b'}',
            Some(b'(') => b')',
            _ if kind == "comment" => {
                return Ok(());
            }
            _ => return Err(err(self.pos, DiagnosticKind::Syntax, format!("expected '{{' after @{kind}"))),
        };
        self.pos += 1;
        match kind.as_str() {
            "comment" | "preamble" => self.skip_balanced(start, close),
            "string" => self.string_def(close),
            _ => self.regular(start, kind, close),
        }
    }

    fn skip_balanced(&mut self, start: usize, close: u8) -> Result<(), EntryError> {
        let mut depth = 0usize;
        while let Some(b) = self.peek() {
            self.pos += 1;
            match b {
                b'\\' => self.pos += 1,
                b'{' => depth += 1,
                b'}' if depth > 0 => depth -= 1,
                _ if b == close && depth == 0 => return Ok(()),
                _ => {}
            }
        }
        Err(err(start, DiagnosticKind::UnbalancedBraces, "unterminated block"))
    }

    fn string_def(&mut self, close: u8) -> Result<(), EntryError> {
        self.skip_ws();
        let name_pos = self.pos;
        let name = self.ident().to_lowercase();
        if name.is_empty() {
            return Err(err(name_pos, DiagnosticKind::Syntax, "@string without a name"));
        }
        self.skip_ws();
        if self.peek() != Some(b'=') {
            return Err(err(self.pos, DiagnosticKind::Syntax, "expected '=' in @string"));
        }
        self.pos += 1;
        let value = self.value()?;
        self.skip_ws();
        if self.peek() == Some(b',') {
            self.pos += 1;
            self.skip_ws();
        }
        if self.peek() != Some(close) {
            return Err(err(self.pos, DiagnosticKind::Syntax, "expected end of @string"));
        }
        self.pos += 1;
        self.macros.insert(name, value);
        Ok(())
    }

    fn regular(&mut self, start: usize, entry_type: String, close: u8) -> Result<(), EntryError> {
        self.skip_ws();
        let key_start = self.pos;
        while let Some(b) = self.peek() {
            if b == b',' || b == close || b.is_ascii_whitespace() {
                break;
            }
            if b == b'{' || b == b'}' || b == b'@' {
                return Err(err(self.pos, DiagnosticKind::Syntax, "invalid character in cite key"));
            }
            self.pos += 1;
        }
        let cite_key = self.src[key_start..self.pos].to_string();
        if cite_key.is_empty() {
            return Err(err(key_start, DiagnosticKind::Syntax, format!("@{entry_type} without a cite key")));
        }
        let mut fields = BTreeMap::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                    continue;
                }
                Some(b) if b == close => {
                    self.pos += 1;
                    break;
                }
                None => {
                    return Err(err(start, DiagnosticKind::UnbalancedBraces, format!("entry '{cite_key}' is not closed")));
                }
                _ => {}
            }
            if self.peek() == Some(b'@') && self.at_line_start(self.pos) {
                return Err(err(start, DiagnosticKind::UnbalancedBraces, format!("entry '{cite_key}' is not closed")));
            }
            let name_pos = self.pos;
            let name = self.ident().to_lowercase();
            if name.is_empty() {
                return Err(err(name_pos, DiagnosticKind::Syntax, format!("expected a field name in '{cite_key}'")));
            }
            self.skip_ws();
            if self.peek() != Some(b'=') {
                return Err(err(self.pos, DiagnosticKind::Syntax, format!("expected '=' after field '{name}'")));
            }
            self.pos += 1;
            let value = self.value().map_err(|mut e| {
                if e.kind == DiagnosticKind::UnbalancedBraces {
                    e.message = format!("unbalanced braces in field '{name}' of '{cite_key}'");
                    e.pos = start;
                }
                e
            })?;
            fields.insert(name, value);
        }
        if !self.seen_keys.insert(cite_key.clone()) {
            self.diag(start, DiagnosticKind::DuplicateKey, format!("duplicate cite key '{cite_key}'"));
        }
        self.out.entries.push(BibEntry {
            cite_key,
            entry_type,
            fields,
        });
        Ok(())
    }

    /// value := part ('#' part)*
    fn value(&mut self) -> Result<String, EntryError> {
        let mut out = String::new();
        loop {
            self.skip_ws();
            let part = match self.peek() {
                Some(b'{') => {
                    self.pos += 1;
                    self.delimited(b'}')?
                }
                Some(b'"') => {
                    self.pos += 1;
                    self.delimited(b'"')?
                }
                Some(b) if b.is_ascii_digit() => {
                    let s = self.pos;
                    while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                        self.pos += 1;
                    }
                    self.src[s..self.pos].to_string()
                }
                Some(_) => {
                    let s = self.pos;
                    let name = self.ident();
                    if name.is_empty() {
                        return Err(err(s, DiagnosticKind::Syntax, "expected a field value"));
                    }
                    match self.macros.get(&name.to_lowercase()) {
                        Some(v) => v.clone(),
                        None => {
                            self.diag(s, DiagnosticKind::UndefinedMacro, format!("undefined macro '{name}'"));
                            name
                        }
                    }
                }
                None => return Err(err(self.pos, DiagnosticKind::Syntax, "unexpected end of input")),
            };
            out.push_str(&part);
            self.skip_ws();
            if self.peek() == Some(b'#') {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(normalize_ws(&out))
    }

    /// Reads up to the matching terminator, removing grouping braces.
    /// Escaped braces (`\{`, `\}`) are kept verbatim and do not count.
    fn delimited(&mut self, term: u8) -> Result<String, EntryError> {
        let start = self.pos;
        let mut depth = 0usize;
        let mut out = String::new();
        let mut seg = self.pos;
        while let Some(b) = self.peek() {
            match b {
                b'\\' if matches!(self.bytes.get(self.pos + 1), Some(b'{' | b'}')) => {
                    self.pos += 2;
                    continue;
                }
                b'{' => {
                    out.push_str(&self.src[seg..self.pos]);
                    depth += 1;
                    self.pos += 1;
                    seg = self.pos;
                    continue;
                }
                b'}' if depth > 0 => {
                    out.push_str(&self.src[seg..self.pos]);
                    depth -= 1;
                    self.pos += 1;
                    seg = self.pos;
                    continue;
                }
                b'}' if term == b'"' => {
                    return Err(err(self.pos, DiagnosticKind::UnbalancedBraces, "unbalanced braces"));
                }
                b'@' if depth > 0 && self.at_line_start(self.pos) => {
                    return Err(err(start, DiagnosticKind::UnbalancedBraces, "unbalanced braces"));
                }
                _ if b == term && depth == 0 => {
                    out.push_str(&self.src[seg..self.pos]);
                    self.pos += 1;
                    return Ok(out);
                }
                _ => {}
            }
            self.pos += 1;
        }
        Err(err(start, DiagnosticKind::UnbalancedBraces, "unbalanced braces"))
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Writes entries back out as BibTeX with braced values.
pub fn to_bibtex(entries: &[BibEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(out, "@{}{{{},", e.entry_type, e.cite_key);
        for (name, value) in &e.fields {
            let _ = writeln!(out, "  {name} = {{{value}}},");
        }
        out.push_str("}\n\n");
    }
    out
}

/// Maps a BibTeX entry onto a [`Work`]. Entries without a title map to `None`.
pub fn bib_to_work(entry: &BibEntry) -> Option<Work> {
    let title = entry.field("title")?;
    let mut work = Work::new(format!("bib:{}", entry.cite_key), title);
    work.authors = entry
        .field("author")
        .map(|a| a.split(" and ").map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        .unwrap_or_default();
    work.year = entry.field("year").and_then(|y| y.trim().parse().ok());
    work.venue = entry
        .field("booktitle")
        .or_else(|| entry.field("journal"))
        .map(str::to_string);
    work.r#abstract = entry.field("abstract").map(str::to_string);
    work.citation_count = 0;
    Some(work)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_entry() {
        let p = parse_bibtex("@article{k1, title={A}, year={2020}}");
        assert!(p.diagnostics.is_empty());
        assert_eq!(p.entries.len(), 1);
        let e = &p.entries[0];
        assert_eq!(e.cite_key, "k1");
        assert_eq!(e.entry_type, "article");
        assert_eq!(e.fields.len(), 2);
        assert_eq!(e.fields["title"], "A");
        assert_eq!(e.fields["year"], "2020");
    }

    #[test]
    fn empty_file() {
        let p = parse_bibtex("");
        assert!(p.entries.is_empty());
        assert!(p.diagnostics.is_empty());
    }

    #[test]
    fn duplicate_keys_are_both_returned() {
        let p = parse_bibtex("@misc{dup, title={One}}\n@misc{dup, title={Two}}\n");
        assert_eq!(p.entries.len(), 2);
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].kind, DiagnosticKind::DuplicateKey);
        assert_eq!(p.diagnostics[0].line, 2);
    }

    #[test]
    fn strings_comments_preamble_and_concatenation() {
        let src = r#"
@comment{ ignore {me} }
@preamble{ "\newcommand{\x}{y}" }
@string{ acl = "Proceedings of {ACL}" }
@STRING( yr = {2023} )
@InProceedings{smith23,
  Title     = {{Large} Models
               Cite   Things},
  author    = "Smith, Ann and Jones, Bob",
  booktitle = acl # ", Long Papers",
  year      = yr,
  month     = jul,
  pages     = 12,
}
"#;
        let p = parse_bibtex(src);
        assert!(p.diagnostics.is_empty(), "{:?}", p.diagnostics);
        assert_eq!(p.entries.len(), 1);
        let e = &p.entries[0];
        assert_eq!(e.entry_type, "inproceedings");
        assert_eq!(e.fields["title"], "Large Models Cite Things");
        assert_eq!(e.fields["booktitle"], "Proceedings of ACL, Long Papers");
        assert_eq!(e.fields["year"], "2023");
        assert_eq!(e.fields["month"], "July");
        assert_eq!(e.fields["pages"], "12");
    }

    #[test]
    fn unbalanced_entry_is_skipped_not_fatal() {
        let src = "@article{bad, title={Oops {never closed}, year=2020}\n\n@article{good, title={Fine}}\n";
        let p = parse_bibtex(src);
        assert_eq!(p.entries.len(), 1);
        assert_eq!(p.entries[0].cite_key, "good");
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].kind, DiagnosticKind::UnbalancedBraces);
        assert_eq!(p.diagnostics[0].line, 1);
    }

    #[test]
    fn unbalanced_last_entry() {
        let p = parse_bibtex("@article{a, title={x}}\n@book{b, title={never");
        assert_eq!(p.entries.len(), 1);
        assert_eq!(p.diagnostics[0].kind, DiagnosticKind::UnbalancedBraces);
    }

    #[test]
    fn undefined_macro_is_diagnosed_but_entry_kept() {
        let p = parse_bibtex("@article{a, journal = nowhere, title={T}}");
        assert_eq!(p.entries.len(), 1);
        assert_eq!(p.entries[0].fields["journal"], "nowhere");
        assert_eq!(p.diagnostics[0].kind, DiagnosticKind::UndefinedMacro);
    }

    #[test]
    fn escaped_braces_survive() {
        let p = parse_bibtex(r"@misc{e, note={a \{b\} c}}");
        assert_eq!(p.entries[0].fields["note"], r"a \{b\} c");
        let again = parse_bibtex(&to_bibtex(&p.entries));
        assert_eq!(again.entries, p.entries);
    }

    #[test]
    fn bib_to_work_mapping() {
        let p = parse_bibtex(
            "@inproceedings{k1, title={Quick Work}, year={2020}, author={Doe, Jane and Roe, Rick}, booktitle={Conf}}\n@misc{k2, year={2020}}",
        );
        let w = bib_to_work(&p.entries[0]).unwrap();
        assert_eq!(w.id, "bib:k1");
        assert_eq!(w.year, Some(2020));
        assert_eq!(w.authors, vec!["Doe, Jane", "Roe, Rick"]);
        assert_eq!(w.venue.as_deref(), Some("Conf"));
        assert_eq!(w.citation_count, 0);
        assert!(bib_to_work(&p.entries[1]).is_none());
    }

    fn entry_strategy() -> impl Strategy<Value = BibEntry> {
        let value = "[A-Za-z0-9.,:;'-]{1,6}( [A-Za-z0-9.,:;'-]{1,6}){0,4}";
        (
            "[a-z][a-z0-9_]{0,8}",
            prop::sample::select(vec!["article", "book", "inproceedings", "misc"]),
            prop::collection::btree_map("[a-z]{1,8}", value, 0..6),
        )
            .prop_map(|(key, ty, fields)| BibEntry {
                cite_key: key,
                entry_type: ty.to_string(),
                fields,
            })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_round_trips(entries in prop::collection::vec(entry_strategy(), 0..5)) {
            let text = to_bibtex(&entries);
            let parsed = parse_bibtex(&text);
            prop_assert_eq!(&parsed.entries, &entries);
            let again = parse_bibtex(&to_bibtex(&parsed.entries));
            prop_assert_eq!(again.entries, parsed.entries);
        }
    }
}
