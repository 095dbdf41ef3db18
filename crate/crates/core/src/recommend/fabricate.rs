use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ContextWindow, RecommendError, Stage};
use crate::providers::{self, names, GenerationRequest, LanguageModel, TemplateSet};

const FORMAT_REMINDER: &str = "\n\nReply with a single JSON object of the form \
{\"title\": \"...\", \"abstract\": \"...\"} and nothing else.";

/// A made-up paper used only as a retrieval query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FabricatedWork {
    pub title: String,
    #[serde(rename = "abstract")]
    pub r#abstract: String,
}

impl FabricatedWork {
    pub fn query_text(&self) -> String {
        format!("{} {}", self.title, self.r#abstract)
    }
}

/// Finds the end (exclusive, in bytes) of the balanced object opening at
/// `start`, honouring JSON string escapes.
fn balanced_end(s: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s[start..].char_indices() {
        if in_str {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// The first balanced `{...}` span in `text` that parses as a JSON object.
pub fn extract_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    for (start, _) in text.match_indices('{') {
        if let Some(end) = balanced_end(text, start) {
            if let Ok(Value::Object(m)) = serde_json::from_str(&text[start..end]) {
                return Some(m);
            }
        }
    }
    None
}

fn parse_fabrication(text: &str) -> Option<FabricatedWork> {
    let obj = extract_json_object(text)?;
    let field = |k: &str| {
        obj.get(k)
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
    };
    Some(FabricatedWork {
        title: field("title")?,
        r#abstract: field("abstract")?,
    })
}

/// Asks the model to invent a paper for the citation slot. An unparseable
/// answer earns one re-ask with a format reminder; a second one is a
/// [`RecommendError::Fabrication`].
pub fn fabricate_citation(
    ctx: &ContextWindow,
    llm: &dyn LanguageModel,
    templates: &TemplateSet,
) -> Result<FabricatedWork, RecommendError> {
    let prompt = templates
        .get(names::CITE_FABRICATE)?
        .render(&ctx.template_vars())
        .map_err(providers::TemplateSetError::from)?;
    let ask = |p: String| {
        providers::generate(llm, &GenerationRequest::new(p).max_tokens(512))
            .map_err(|source| RecommendError::Provider {
                stage: Stage::Fabricate,
                source,
            })
    };
    let first = ask(prompt.clone())?;
    if let Some(f) = parse_fabrication(&first.text) {
        return Ok(f);
    }
    tracing::debug!("fabrication unparseable, re-asking");
    let second = ask(prompt + FORMAT_REMINDER)?;
    parse_fabrication(&second.text).ok_or_else(|| RecommendError::Fabrication {
        response: second.text.chars().take(200).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::ScriptedLlm;

    fn ctx() -> ContextWindow {
        ContextWindow {
            previous_sentence: None,
            masked_sentence: "Attention suffices CITE-HERE.".into(),
            next_sentence: None,
        }
    }

    #[test]
    fn parses_plain_json() {
        let llm = ScriptedLlm::new(0).on("SENTENCES", r#"{"title":"T","abstract":"A"}"#);
        let f = fabricate_citation(&ctx(), &llm, &TemplateSet::builtin()).unwrap();
        assert_eq!(f, FabricatedWork { title: "T".into(), r#abstract: "A".into() });
        assert_eq!(llm.generate_count(), 1);
    }

    #[test]
    fn extracts_json_after_prose() {
        let llm = ScriptedLlm::new(0).on(
            "SENTENCES",
            "Sure! Here is {one} idea:\n{\"title\": \"Braces {in} titles\", \"abstract\": \"Says \\\"hi\\\" }\"} trailing",
        );
        let f = fabricate_citation(&ctx(), &llm, &TemplateSet::builtin()).unwrap();
        assert_eq!(f.title, "Braces {in} titles");
        assert_eq!(f.r#abstract, "Says \"hi\" }");
    }

    #[test]
    fn reasks_once_then_fails() {
        let llm = ScriptedLlm::new(0).on("SENTENCES", "no json here");
        let err = fabricate_citation(&ctx(), &llm, &TemplateSet::builtin()).unwrap_err();
        assert!(matches!(err, RecommendError::Fabrication { .. }));
        assert_eq!(llm.generate_count(), 2);
        let llm = ScriptedLlm::new(0).on_sequence("SENTENCES", ["garbage", r#"{"title":"X","abstract":"Y"}"#]);
        assert_eq!(fabricate_citation(&ctx(), &llm, &TemplateSet::builtin()).unwrap().title, "X");
    }

    #[test]
    fn empty_fields_are_rejected() {
        assert!(parse_fabrication(r#"{"title":"","abstract":"A"}"#).is_none());
        assert!(parse_fabrication(r#"{"title":"T"}"#).is_none());
    }
}
