use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::Work;
use crate::providers::{self, names, GenerationRequest, LanguageModel, ProviderError, TemplateSet};

/// Rendered summarize prompts longer than this many characters are split.
pub const DEFAULT_SUMMARY_BUDGET: usize = 24_000;
const MAX_SUMMARY_DEPTH: usize = 4;

fn render_summarize(paragraphs: &[String], templates: &TemplateSet) -> Result<String, ProviderError> {
    templates
        .render(names::INTRO_SUMMARIZE, &json!({ "novel_results": paragraphs }))
        .map_err(|e| ProviderError::InvalidInput(e.to_string()))
}

fn ask(llm: &dyn LanguageModel, prompt: String) -> Result<String, ProviderError> {
    Ok(providers::generate(llm, &GenerationRequest::new(prompt))?.text)
}

/// Greedy packing into consecutive batches whose prompt fits the budget;
/// an oversized paragraph travels alone.
fn pack(paragraphs: &[String], templates: &TemplateSet, budget: usize) -> Result<Vec<Vec<String>>, ProviderError> {
    let mut batches: Vec<Vec<String>> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for p in paragraphs {
        current.push(p.clone());
        if current.len() > 1 && render_summarize(&current, templates)?.len() > budget {
            let last = current.pop().expect("just pushed");
            batches.push(std::mem::replace(&mut current, vec![last]));
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Summarizes the kept paragraphs. When the prompt would exceed `budget`
/// characters, paragraphs are summarized in batches and the batch summaries
/// summarized again, until one prompt fits.
pub fn summarize_results(
    paragraphs: &[String],
    llm: &dyn LanguageModel,
    templates: &TemplateSet,
    budget: usize,
) -> Result<String, ProviderError> {
    if paragraphs.is_empty() {
        return Err(ProviderError::InvalidInput(
            "no paragraphs to summarize; lower keep_fraction".into(),
        ));
    }
    let mut level = paragraphs.to_vec();
    for depth in 0.. {
        let prompt = render_summarize(&level, templates)?;
        if prompt.len() <= budget || level.len() == 1 || depth == MAX_SUMMARY_DEPTH {
            return ask(llm, prompt);
        }
        let batches = pack(&level, templates, budget)?;
        tracing::debug!(items = level.len(), batches = batches.len(), "summarizing in batches");
        level = batches
            .iter()
            .map(|b| ask(llm, render_summarize(b, templates)?))
            .collect::<Result<_, _>>()?;
    }
    unreachable!("loop returns")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub intro_text: String,
    /// Bracket number → work id, for every in-range number the text cites.
    pub citation_map: BTreeMap<u32, String>,
    /// Bracket numbers in the text with no matching reference.
    pub dangling: Vec<u32>,
}

fn reference_json(w: &Work) -> serde_json::Value {
    json!({"title": w.title, "abstract": w.abstract_text().unwrap_or("")})
}

pub fn compose_prompt(
    title: &str,
    summary: &str,
    canonical: &[Work],
    recent: &[Work],
    instructions: Option<&str>,
    templates: &TemplateSet,
) -> Result<String, ProviderError> {
    templates
        .render(
            names::INTRO_COMPOSE,
            &json!({
                "title": title,
                "results": summary,
                "genesis_references": canonical.iter().map(reference_json).collect::<Vec<_>>(),
                "recent_references": recent.iter().map(reference_json).collect::<Vec<_>>(),
                "instructions": instructions.unwrap_or(""),
            }),
        )
        .map_err(|e| ProviderError::InvalidInput(e.to_string()))
}

/// Text between the first pair of `'''` fences, or after a lone opening
/// fence; unfenced text is returned trimmed.
pub fn strip_fences(text: &str) -> String {
    const FENCE: &str = "'''";
    match text.find(FENCE) {
        None => text.trim().to_string(),
        Some(open) => {
            let inner = &text[open + FENCE.len()..];
            match inner.find(FENCE) {
                Some(close) => inner[..close].trim().to_string(),
                None => inner.trim().to_string(),
            }
        }
    }
}

/// Every number cited in brackets: `[3]`, `[1, 4]`, `[2-5]`.
pub fn bracket_numbers(text: &str) -> BTreeSet<u32> {
    let group = Regex::new(r"\[(\s*\d+\s*(?:[-–,]\s*\d+\s*)*)\]").expect("valid regex");
    let item = Regex::new(r"(\d+)\s*(?:[-–]\s*(\d+))?").expect("valid regex");
    let mut out = BTreeSet::new();
    for g in group.captures_iter(text) {
        for m in item.captures_iter(&g[1]) {
            let Ok(a) = m[1].parse::<u32>() else { continue };
            match m.get(2).and_then(|b| b.as_str().parse::<u32>().ok()) {
                Some(b) if b >= a && b - a < 1000 => out.extend(a..=b),
                _ => {
                    out.insert(a);
                }
            }
        }
    }
    out
}

/// Writes the introduction. References are numbered canonical first, then
/// recent, continuing the count.
pub fn compose_intro(
    title: &str,
    summary: &str,
    canonical: &[Work],
    recent: &[Work],
    instructions: Option<&str>,
    llm: &dyn LanguageModel,
    templates: &TemplateSet,
) -> Result<Composition, ProviderError> {
    if canonical.is_empty() && recent.is_empty() {
        return Err(ProviderError::InvalidInput("no references to compose from".into()));
    }
    let prompt = compose_prompt(title, summary, canonical, recent, instructions, templates)?;
    let intro_text = strip_fences(&ask(llm, prompt)?);
    let numbered: Vec<&Work> = canonical.iter().chain(recent).collect();
    let mut citation_map = BTreeMap::new();
    let mut dangling = Vec::new();
    for n in bracket_numbers(&intro_text) {
        match n.checked_sub(1).and_then(|i| numbered.get(i as usize)) {
            Some(w) => {
                citation_map.insert(n, w.id.clone());
            }
            None => dangling.push(n),
        }
    }
    Ok(Composition {
        intro_text,
        citation_map,
        dangling,
    })
}
