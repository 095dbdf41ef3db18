//! Sentence segmentation and citation-slot placement.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::RecommendError;

pub const CITE_TOKEN: &str = "CITE-HERE";

/// Words that end in a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "e.g", "i.e", "al", "fig", "figs", "cf", "c.f", "vs", "etc", "eq", "eqs", "sec", "ref",
    "refs", "approx", "resp", "no", "vol", "pp", "ch", "dr", "prof", "mr", "mrs", "ms", "st",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub previous_sentence: Option<String>,
    /// The current sentence with exactly one citation token.
    pub masked_sentence: String,
    pub next_sentence: Option<String>,
}

impl ContextWindow {
    /// The masked sentence with the citation token removed.
    pub fn unmasked_sentence(&self) -> String {
        strip_token(&self.masked_sentence)
    }

    /// Template variables; absent neighbours render as empty strings.
    pub fn template_vars(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        m.insert(
            "previous_sentence".into(),
            self.previous_sentence.clone().unwrap_or_default().into(),
        );
        m.insert("masked_sentence".into(), self.masked_sentence.clone().into());
        m.insert(
            "next_sentence".into(),
            self.next_sentence.clone().unwrap_or_default().into(),
        );
        m
    }
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_token(s: &str) -> String {
    collapse_ws(&s.replace(CITE_TOKEN, " "))
}

fn is_abbreviation(chars: &[char], dot: usize) -> bool {
    let mut start = dot;
    while start > 0 && !chars[start - 1].is_whitespace() && chars[start - 1] != '(' {
        start -= 1;
    }
    let word: String = chars[start..dot].iter().collect::<String>().to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Sentence spans as char ranges, trimmed of surrounding whitespace.
///
/// A sentence ends at `.`, `?` or `!` followed by whitespace and an
/// uppercase letter, or by the end of the text; never inside parentheses or
/// braces and never after a known abbreviation.
pub fn segment_sentences(text: &str) -> Vec<Range<usize>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut depth: i32 = 0;
    let mut start: Option<usize> = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if start.is_none() && !c.is_whitespace() {
            start = Some(i);
        }
        match c {
            '(' | '{' | '[' => depth += 1,
            ')' | '}' | ']' => depth = (depth - 1).max(0),
            _ => {}
        }
        if matches!(c, '.' | '?' | '!') && depth == 0 {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j], '.' | '?' | '!' | '"' | '\'' | '”' | '’') {
                j += 1;
            }
            let mut k = j;
            while k < chars.len() && chars[k].is_whitespace() {
                k += 1;
            }
            let boundary = if k == chars.len() {
                true
            } else {
                k > j && chars[k].is_uppercase()
            };
            if boundary && !(c == '.' && is_abbreviation(&chars, i)) {
                if let Some(s) = start.take() {
                    out.push(s..j);
                }
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if let Some(s) = start {
        let mut end = chars.len();
        while end > s && chars[end - 1].is_whitespace() {
            end -= 1;
        }
        out.push(s..end);
    }
    out
}

fn insert_token(sentence: &[char], at: usize) -> String {
    let left: String = sentence[..at].iter().collect();
    let right: String = sentence[at..].iter().collect();
    let left = strip_token(&left);
    let right = strip_token(&right);
    let mut s = left;
    if !s.is_empty() {
        s.push(' ');
    }
    s.push_str(CITE_TOKEN);
    if !right.is_empty() {
        s.push(' ');
        s.push_str(&right);
    }
    s
}

/// Builds the context window around `cursor`, a char offset into
/// `document`. A cursor in the whitespace between two sentences belongs to
/// the earlier one; before the first sentence, to the first.
pub fn make_context(document: &str, cursor: usize) -> Result<ContextWindow, RecommendError> {
    let chars: Vec<char> = document.chars().collect();
    if cursor > chars.len() {
        return Err(RecommendError::Input(format!(
            "cursor {cursor} beyond document length {}",
            chars.len()
        )));
    }
    let spans = segment_sentences(document);
    if spans.is_empty() {
        return Ok(ContextWindow {
            previous_sentence: None,
            masked_sentence: CITE_TOKEN.to_string(),
            next_sentence: None,
        });
    }
    let idx = spans
        .iter()
        .rposition(|s| s.start <= cursor)
        .unwrap_or(0);
    let span = &spans[idx];
    let at = cursor.clamp(span.start, span.end) - span.start;
    let text = |r: &Range<usize>| strip_token(&chars[r.clone()].iter().collect::<String>());
    let neighbour = |r: Option<&Range<usize>>| r.map(text).filter(|s| !s.is_empty());
    Ok(ContextWindow {
        previous_sentence: neighbour(idx.checked_sub(1).map(|p| &spans[p])),
        masked_sentence: insert_token(&chars[span.clone()], at),
        next_sentence: neighbour(spans.get(idx + 1)),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sentences(text: &str) -> Vec<String> {
        let chars: Vec<char> = text.chars().collect();
        segment_sentences(text)
            .into_iter()
            .map(|r| chars[r].iter().collect())
            .collect()
    }

    #[test]
    fn splits_simple_sentences() {
        assert_eq!(sentences("A. B. C."), ["A.", "B.", "C."]);
        assert_eq!(sentences("Is it? Yes! Done"), ["Is it?", "Yes!", "Done"]);
    }

    #[test]
    fn abbreviations_and_brackets_do_not_split() {
        assert_eq!(
            sentences("Models, e.g. Transformers, work. Smith et al. Show it."),
            ["Models, e.g. Transformers, work.", "Smith et al. Show it."]
        );
        assert_eq!(sentences("We (see Sec. Two. Also) agree. Next."), ["We (see Sec. Two. Also) agree.", "Next."]);
        assert_eq!(sentences("Version 2.0 is out. Yes."), ["Version 2.0 is out.", "Yes."]);
        assert_eq!(sentences("lower. case continues."), ["lower. case continues."]);
    }

    #[test]
    fn cursor_at_end_of_middle_sentence() {
        let ctx = make_context("A. B. C.", 5).unwrap();
        assert_eq!(ctx.previous_sentence.as_deref(), Some("A."));
        assert_eq!(ctx.masked_sentence, "B. CITE-HERE");
        assert_eq!(ctx.next_sentence.as_deref(), Some("C."));
    }

    #[test]
    fn cursor_zero_single_sentence() {
        let ctx = make_context("Deep nets generalize.", 0).unwrap();
        assert_eq!(ctx.previous_sentence, None);
        assert_eq!(ctx.next_sentence, None);
        assert_eq!(ctx.masked_sentence, "CITE-HERE Deep nets generalize.");
    }

    #[test]
    fn cursor_mid_word_gets_spaces() {
        let ctx = make_context("Prior work shows this.", 10).unwrap();
        assert_eq!(ctx.masked_sentence, "Prior work CITE-HERE shows this.");
        let ctx = make_context("Prior work shows this.", 8).unwrap();
        assert_eq!(ctx.masked_sentence, "Prior wo CITE-HERE rk shows this.");
    }

    #[test]
    fn empty_document_and_bad_cursor() {
        assert_eq!(make_context("", 0).unwrap().masked_sentence, CITE_TOKEN);
        assert_eq!(make_context("   ", 2).unwrap().masked_sentence, CITE_TOKEN);
        assert!(make_context("abc", 4).is_err());
    }

    #[test]
    fn existing_tokens_are_replaced() {
        let ctx = make_context("See CITE-HERE here.", 18).unwrap();
        assert_eq!(ctx.masked_sentence, "See here CITE-HERE .");
    }

    proptest! {
        #[test]
        fn exactly_one_token(doc in "[A-Za-z .,?!()e]{0,80}", frac in 0.0f64..=1.0) {
            let n = doc.chars().count();
            let cursor = (n as f64 * frac).floor() as usize;
            let ctx = make_context(&doc, cursor).unwrap();
            prop_assert_eq!(ctx.masked_sentence.matches(CITE_TOKEN).count(), 1);
        }
    }
}
