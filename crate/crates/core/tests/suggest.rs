use std::collections::HashSet;

use quill_core::corpus::{Corpus, Work};
use quill_core::providers::mock::{Faulty, HashEmbedder, ScriptedLlm};
use quill_core::providers::{ProviderError, TemplateSet};
use quill_core::recommend::{
    assign_keys, score_candidates, suggest, suggest_observed, Candidate, ContextWindow, Library,
    Ranker, RecommendError, Source, Stage, SuggestConfig, SuggestEnv,
};
use quill_core::synthetic::{generate, SyntheticConfig};
use quill_core::vectorindex::{Backend, Metric};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DOC: &str = "Dense retrieval is popular. Graph methods are older. We compare both.";

fn library(works: Vec<Work>) -> Library {
    Library::build(Corpus::new(works).unwrap(), &HashEmbedder::default(), Metric::Cosine, Backend::Exact, 2).unwrap()
}

fn world_library(n: usize) -> Library {
    library(generate(&SyntheticConfig { works: n, papers: 0, ..Default::default() }).works)
}

fn fabricating(title: &str) -> ScriptedLlm {
    ScriptedLlm::new(1).on(
        "make up the title",
        serde_json::json!({"title": title, "abstract": format!("On {title}.")}).to_string(),
    )
}

fn bib_work(id: &str, title: &str) -> Work {
    let mut w = Work::new(id, title);
    w.r#abstract = Some(format!("About {title}."));
    w
}

#[test]
fn empty_bibliography_gives_index_sources_only() {
    let lib = world_library(60);
    let llm = fabricating("Anything at all");
    let embedder = HashEmbedder::default();
    let t = TemplateSet::builtin();
    let env = SuggestEnv { library: &lib, llm: &llm, embedder: &embedder, templates: &t };
    let batch = suggest(DOC, 30, &[], &env, &SuggestConfig::default()).unwrap();
    assert_eq!(batch.suggestions.len(), 10);
    assert!(batch.suggestions.iter().all(|s| s.source == Source::Index));
    let ranks: Vec<usize> = batch.suggestions.iter().map(|s| s.rank).collect();
    assert_eq!(ranks, (1..=10).collect::<Vec<_>>());
}

#[test]
fn empty_index_returns_bibliography() {
    let lib = library(Vec::new());
    let llm = fabricating("Graph methods");
    let embedder = HashEmbedder::default();
    let t = TemplateSet::builtin();
    let env = SuggestEnv { library: &lib, llm: &llm, embedder: &embedder, templates: &t };
    let bib = [bib_work("b1", "Graph methods for search"), bib_work("b2", "Dense retrieval revisited")];
    let batch = suggest(DOC, 30, &bib, &env, &SuggestConfig::default()).unwrap();
    let ids: HashSet<&str> = batch.suggestions.iter().map(|s| s.work_id.as_str()).collect();
    assert_eq!(ids, HashSet::from(["b1", "b2"]));
    assert!(batch.suggestions.iter().all(|s| s.source == Source::Bibtex));
}

#[test]
fn fabricated_title_never_appears_as_suggestion() {
    let lib = world_library(80);
    let fake = "Zzyzx quorble methods for flanging";
    let llm = fabricating(fake);
    let embedder = HashEmbedder::default();
    let t = TemplateSet::builtin();
    let env = SuggestEnv { library: &lib, llm: &llm, embedder: &embedder, templates: &t };
    let batch = suggest(DOC, 30, &[], &env, &SuggestConfig::default()).unwrap();
    let known: HashSet<&str> = lib.corpus().works().iter().map(|w| w.id.as_str()).collect();
    for s in &batch.suggestions {
        assert_ne!(s.title, fake);
        assert!(known.contains(s.work_id.as_str()));
    }
}

#[test]
fn garbage_fabrication_falls_back_to_sentence() {
    let lib = world_library(40);
    let llm = ScriptedLlm::new(0).on("make up the title", "I cannot help with that.");
    let embedder = HashEmbedder::default();
    let t = TemplateSet::builtin();
    let env = SuggestEnv { library: &lib, llm: &llm, embedder: &embedder, templates: &t };
    let batch = suggest(DOC, 30, &[], &env, &SuggestConfig::default()).unwrap();
    assert!(batch.used_fallback);
    assert!(!batch.suggestions.is_empty());
}

#[test]
fn same_seed_same_keys_different_seed_different_keys() {
    let lib = world_library(60);
    let llm = fabricating("Graph methods");
    let embedder = HashEmbedder::default();
    let t = TemplateSet::builtin();
    let env = SuggestEnv { library: &lib, llm: &llm, embedder: &embedder, templates: &t };
    let keys = |seed| {
        let b = suggest(DOC, 30, &[], &env, &SuggestConfig { seed, ..Default::default() }).unwrap();
        let mut k: Vec<String> = b.suggestions.into_iter().map(|s| s.key).collect();
        k.sort();
        k
    };
    assert_eq!(keys(9), keys(9));
    assert_ne!(keys(9), keys(10));
    let re = regex::Regex::new("^[0-9a-f]{4}$").unwrap();
    assert!(keys(9).iter().all(|k| re.is_match(k)));
}

#[test]
fn stages_are_observed_in_order() {
    let lib = world_library(30);
    let llm = fabricating("Graph methods");
    let embedder = HashEmbedder::default();
    let t = TemplateSet::builtin();
    let env = SuggestEnv { library: &lib, llm: &llm, embedder: &embedder, templates: &t };
    let mut seen = Vec::new();
    suggest_observed(DOC, 30, &[], &env, &SuggestConfig::default(), &mut |s| seen.push(s)).unwrap();
    assert_eq!(seen, [Stage::Context, Stage::Fabricate, Stage::Embed, Stage::Retrieve, Stage::Score]);

    let mut seen = Vec::new();
    let cfg = SuggestConfig { ranker: Ranker::Pairwise, k: 4, ..Default::default() };
    let llm = fabricating("Graph methods").with_handler(|p| {
        p.contains("CITATION A").then(|| {
            let at = p.find("\"key\": \"").unwrap() + 8;
            p[at..at + 4].to_string()
        })
    });
    let env = SuggestEnv { library: &lib, llm: &llm, embedder: &embedder, templates: &t };
    let b = suggest_observed(DOC, 30, &[], &env, &cfg, &mut |s| seen.push(s)).unwrap();
    assert_eq!(seen.last(), Some(&Stage::Pairwise));
    assert_eq!(b.suggestions.len(), 4);
}

#[test]
fn provider_failures_carry_their_stage() {
    let lib = world_library(30);
    let t = TemplateSet::builtin();
    let good = HashEmbedder::default();

    let llm = Faulty::always(fabricating("x"), ProviderError::Rejected("nope".into()));
    let env = SuggestEnv { library: &lib, llm: &llm, embedder: &good, templates: &t };
    let e = suggest(DOC, 30, &[], &env, &SuggestConfig::default()).unwrap_err();
    assert_eq!(e.stage(), Some(Stage::Fabricate));

    let llm = fabricating("Graph methods");
    let bad = Faulty::always(HashEmbedder::default(), ProviderError::Rejected("nope".into()));
    let env = SuggestEnv { library: &lib, llm: &llm, embedder: &bad, templates: &t };
    let e = suggest(DOC, 30, &[], &env, &SuggestConfig::default()).unwrap_err();
    assert_eq!(e.stage(), Some(Stage::Embed));

    let llm = fabricating("Graph methods").without_scoring();
    let env = SuggestEnv { library: &lib, llm: &llm, embedder: &good, templates: &t };
    let e = suggest(DOC, 30, &[], &env, &SuggestConfig::default()).unwrap_err();
    assert_eq!(e.stage(), Some(Stage::Score));

    let env = SuggestEnv { library: &lib, llm: &llm, embedder: &good, templates: &t };
    let e = suggest(DOC, DOC.len() + 5, &[], &env, &SuggestConfig::default()).unwrap_err();
    assert!(matches!(e, RecommendError::Input(_)));
}

fn ctx() -> ContextWindow {
    ContextWindow {
        previous_sentence: Some("Graph methods are older.".into()),
        masked_sentence: "Dense retrieval CITE-HERE .".into(),
        next_sentence: None,
    }
}

fn candidates(n: usize, seed: u64) -> Vec<Candidate> {
    let keys = assign_keys(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    keys.into_iter()
        .enumerate()
        .map(|(i, key)| Candidate {
            work: bib_work(&format!("w{i}"), &format!("Paper number {i}")),
            key,
            source: Source::Index,
            retrieval_distance: Some(0.1 * i as f32),
        })
        .collect()
}

#[test]
fn scoring_is_invariant_to_candidate_order() {
    let llm = ScriptedLlm::new(11);
    let t = TemplateSet::builtin();
    let forward = candidates(7, 3);
    let mut reversed = forward.clone();
    reversed.reverse();
    let a = score_candidates(&ctx(), forward, &llm, &t).unwrap();
    let b = score_candidates(&ctx(), reversed, &llm, &t).unwrap();
    let ids = |v: &[quill_core::recommend::ScoredCandidate]| v.iter().map(|s| (s.candidate.work.id.clone(), s.score)).collect::<Vec<_>>();
    assert_eq!(ids(&a), ids(&b));
    assert!(a.iter().all(|s| s.score <= 0.0));
    assert!(a.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn keys_are_unique_and_never_a_consecutive_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in [2, 5, 20] {
        for _ in 0..50 {
            let keys = assign_keys(n, &mut rng).unwrap();
            let values: Vec<u32> = keys.iter().map(|k| u32::from_str_radix(k, 16).unwrap()).collect();
            assert_eq!(values.iter().collect::<HashSet<_>>().len(), n);
            assert!(!values.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }
}
