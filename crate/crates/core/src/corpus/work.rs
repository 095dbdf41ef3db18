use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};

use chrono::{Datelike, NaiveDate, Utc};
use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use super::CorpusError;

/// One scholarly record. This is the unit that gets embedded, indexed and
/// suggested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Work {
    pub id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r#abstract: Option<String>,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    /// Full publication date when the source has one; `year` stays the
    /// authoritative coarse field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub publication_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
    #[serde(default)]
    pub citation_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default)]
    pub reference_ids: Vec<String>,
}

impl Work {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        Work {
            id: id.into(),
            title: title.into(),
            r#abstract: None,
            authors: Vec::new(),
            year: None,
            publication_date: None,
            venue: None,
            citation_count: 0,
            language: None,
            reference_ids: Vec::new(),
        }
    }

    pub fn abstract_text(&self) -> Option<&str> {
        self.r#abstract.as_deref().filter(|a| !a.trim().is_empty())
    }

    /// Text handed to the embedder: the title, followed by a single space and
    /// the abstract when one exists.
    pub fn embedding_text(&self) -> String {
        match self.abstract_text() {
            Some(abs) => format!("{} {}", self.title, abs),
            None => self.title.clone(),
        }
    }

    /// Best-known publication date. Year-only records are dated January 1.
    pub fn published_on(&self) -> Option<NaiveDate> {
        self.publication_date
            .or_else(|| self.year.and_then(|y| NaiveDate::from_ymd_opt(y, 1, 1)))
    }
}

/// Case-folded, whitespace-collapsed title used for duplicate detection.
pub fn normalize_title(title: &str) -> String {
    title
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// On-disk record shape, one JSON object per line.
#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<String>,
    title: Option<String>,
    #[serde(default)]
    r#abstract: Option<String>,
    #[serde(default)]
    authors: Vec<String>,
    #[serde(default)]
    publication_year: Option<i32>,
    #[serde(default)]
    publication_date: Option<String>,
    #[serde(default)]
    venue: Option<String>,
    #[serde(default)]
    cited_by_count: Option<i64>,
    #[serde(default)]
    language: Option<String>,
    #[serde(default)]
    referenced_works: Vec<String>,
}

/// Why a record line was not turned into a [`Work`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Malformed,
    MissingId,
    MissingTitle,
    DuplicateId,
    YearOutOfRange,
    NegativeCitations,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedWorks {
    pub works: Vec<Work>,
    pub skipped: Vec<(usize, SkipReason)>,
}

impl ParsedWorks {
    pub fn skip_count(&self) -> usize {
        self.skipped.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub min_year: i32,
    pub max_year: i32,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            min_year: 1500,
            max_year: Utc::now().year() + 1,
        }
    }
}

/// Reads line-delimited records. Gzip input is detected by its magic bytes.
pub fn parse_works<R: Read>(reader: R) -> Result<ParsedWorks, CorpusError> {
    parse_works_with(reader, &IngestOptions::default())
}

pub fn parse_works_with<R: Read>(
    reader: R,
    opts: &IngestOptions,
) -> Result<ParsedWorks, CorpusError> {
    let mut buffered = BufReader::new(reader);
    let head = buffered.fill_buf()?;
    let gz = head.len() >= 2 && head[0] == 0x1f && head[1] == 0x8b;
    if gz {
        parse_lines(BufReader::new(MultiGzDecoder::new(buffered)), opts)
    } else {
        parse_lines(buffered, opts)
    }
}

fn parse_lines<R: BufRead>(reader: R, opts: &IngestOptions) -> Result<ParsedWorks, CorpusError> {
    let mut out = ParsedWorks::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match record_to_work(&line, opts) {
            Ok(work) => {
                if seen.contains_key(&work.id) {
                    out.skipped.push((lineno + 1, SkipReason::DuplicateId));
                    continue;
                }
                seen.insert(work.id.clone(), out.works.len());
                out.works.push(work);
            }
            Err(reason) => out.skipped.push((lineno + 1, reason)),
        }
    }
    Ok(out)
}

fn record_to_work(line: &str, opts: &IngestOptions) -> Result<Work, SkipReason> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|_| SkipReason::Malformed)?;
    let id = raw
        .id
        .filter(|s| !s.trim().is_empty())
        .ok_or(SkipReason::MissingId)?;
    let title = raw
        .title
        .map(|t| t.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|t| !t.is_empty())
        .ok_or(SkipReason::MissingTitle)?;
    if let Some(y) = raw.publication_year {
        if y < opts.min_year || y > opts.max_year {
            return Err(SkipReason::YearOutOfRange);
        }
    }
    let citation_count = match raw.cited_by_count {
        Some(c) if c < 0 => return Err(SkipReason::NegativeCitations),
        Some(c) => c as u64,
        None => 0,
    };
    let publication_date = raw
        .publication_date
        .as_deref()
        .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok());
    Ok(Work {
        id,
        title,
        r#abstract: raw.r#abstract.filter(|a| !a.trim().is_empty()),
        authors: raw.authors,
        year: raw.publication_year.or(publication_date.map(|d| d.year())),
        publication_date,
        venue: raw.venue.filter(|v| !v.trim().is_empty()),
        citation_count,
        language: raw.language.map(|l| l.to_lowercase()),
        reference_ids: raw.referenced_works,
    })
}

/// Serializes a work back into the record-line shape accepted by
/// [`parse_works`].
pub fn work_to_record_line(work: &Work) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("id".into(), work.id.clone().into());
    obj.insert("title".into(), work.title.clone().into());
    if let Some(a) = &work.r#abstract {
        obj.insert("abstract".into(), a.clone().into());
    }
    obj.insert("authors".into(), work.authors.clone().into());
    if let Some(y) = work.year {
        obj.insert("publication_year".into(), y.into());
    }
    if let Some(d) = work.publication_date {
        obj.insert("publication_date".into(), d.format("%Y-%m-%d").to_string().into());
    }
    if let Some(v) = &work.venue {
        obj.insert("venue".into(), v.clone().into());
    }
    obj.insert("cited_by_count".into(), work.citation_count.into());
    if let Some(l) = &work.language {
        obj.insert("language".into(), l.clone().into());
    }
    obj.insert("referenced_works".into(), work.reference_ids.clone().into());
    serde_json::Value::Object(obj).to_string()
}

/// Immutable, id-addressable collection of works.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    works: Vec<Work>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate or empty ids.
    pub fn new(works: Vec<Work>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(works.len());
        for (i, w) in works.iter().enumerate() {
            if w.id.is_empty() {
                return Err(CorpusError::EmptyId);
            }
            if by_id.insert(w.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(w.id.clone()));
            }
        }
        Ok(Corpus { works, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&Work> {
        self.by_id.get(id).map(|&i| &self.works[i])
    }

    pub fn works(&self) -> &[Work] {
        &self.works
    }

    pub fn len(&self) -> usize {
        self.works.len()
    }

    pub fn is_empty(&self) -> bool {
        self.works.is_empty()
    }

    /// Finds a work by normalized title. Linear; used for reference
    /// resolution, not on the suggestion hot path.
    pub fn find_by_title(&self, title: &str) -> Option<&Work> {
        let wanted = normalize_title(title);
        self.works.iter().find(|w| normalize_title(&w.title) == wanted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_stream_yields_nothing() {
        let parsed = parse_works("".as_bytes()).unwrap();
        assert!(parsed.works.is_empty());
        assert_eq!(parsed.skip_count(), 0);
    }

    #[test]
    fn garbage_line_is_skipped_and_counted() {
        let input = r#"{"id":"W1","title":"One","publication_year":2020,"cited_by_count":3}
{"id":"W2","title":"Two","abstract":"about two"}
this is not json
{"id":"W3","title":"Three","language":"EN"}
"#;
        let parsed = parse_works(input.as_bytes()).unwrap();
        assert_eq!(parsed.works.len(), 3);
        assert_eq!(parsed.skipped, vec![(3, SkipReason::Malformed)]);
        assert_eq!(parsed.works[0].citation_count, 3);
        assert_eq!(parsed.works[2].language.as_deref(), Some("en"));
    }

    #[test]
    fn absent_abstract_is_none() {
        let parsed = parse_works(r#"{"id":"W1","title":"T"}"#.as_bytes()).unwrap();
        assert_eq!(parsed.works[0].r#abstract, None);
    }

    #[test]
    fn missing_fields_and_bad_values_are_skipped() {
        let input = r#"{"title":"no id"}
{"id":"W1"}
{"id":"W2","title":"old","publication_year":1200}
{"id":"W3","title":"neg","cited_by_count":-1}
{"id":"W4","title":"ok"}
{"id":"W4","title":"dup"}
"#;
        let parsed = parse_works(input.as_bytes()).unwrap();
        assert_eq!(parsed.works.len(), 1);
        let reasons: Vec<_> = parsed.skipped.iter().map(|s| s.1).collect();
        assert_eq!(
            reasons,
            vec![
                SkipReason::MissingId,
                SkipReason::MissingTitle,
                SkipReason::YearOutOfRange,
                SkipReason::NegativeCitations,
                SkipReason::DuplicateId,
            ]
        );
    }

    #[test]
    fn gzip_input_is_detected() {
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        writeln!(enc, r#"{{"id":"W1","title":"Zipped"}}"#).unwrap();
        let bytes = enc.finish().unwrap();
        let parsed = parse_works(bytes.as_slice()).unwrap();
        assert_eq!(parsed.works[0].title, "Zipped");
    }

    #[test]
    fn record_line_round_trips() {
        let mut w = Work::new("W9", "A title");
        w.r#abstract = Some("Abs".into());
        w.year = Some(2021);
        w.publication_date = NaiveDate::from_ymd_opt(2021, 3, 4);
        w.citation_count = 7;
        w.authors = vec!["Doe, Jane".into()];
        w.reference_ids = vec!["W1".into()];
        let line = work_to_record_line(&w);
        let parsed = parse_works(line.as_bytes()).unwrap();
        assert_eq!(parsed.works, vec![w]);
    }

    #[test]
    fn embedding_text_joins_title_and_abstract() {
        let mut w = Work::new("x", "A");
        assert_eq!(w.embedding_text(), "A");
        w.r#abstract = Some("B".into());
        assert_eq!(w.embedding_text(), "A B");
    }

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let err = Corpus::new(vec![Work::new("a", "x"), Work::new("a", "y")]).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "a"));
    }
}
