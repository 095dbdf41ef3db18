use chrono::NaiveDate;
use quill_core::corpus::{Corpus, Work};
use quill_core::introgen::{
    resolve_references, run_intro_chain, ChainStage, IntroConfig, IntroEnv, IntroInput,
};
use quill_core::providers::mock::{Faulty, HashEmbedder, ScriptedLlm};
use quill_core::providers::{ProviderError, TemplateSet};

fn paragraph(topic: &str) -> String {
    format!(
        "Here we describe {topic} at some length, enough to count as a real paragraph of the \
         manuscript. The setting, the method and the outcome are each given a sentence, and a \
         closing remark rounds it off."
    )
}

fn manuscript() -> String {
    format!(
        "\\title{{Fast Search}}\n\n{}\n\n{}\n\n{}\n",
        paragraph("a new index layout"),
        paragraph("a restated baseline"),
        paragraph("a latency study")
    )
}

fn reference(id: &str, year: i32) -> Work {
    let mut w = Work::new(id, format!("Reference {id}"));
    w.r#abstract = Some(format!("Abstract of {id}."));
    w.year = Some(year);
    w
}

fn input() -> IntroInput {
    IntroInput {
        manuscript: manuscript(),
        title: None,
        r#abstract: "We make search fast.".into(),
        references: vec![reference("old1", 2005), reference("old2", 2012), reference("new1", 2022), reference("new2", 2023)],
        reference_date: NaiveDate::from_ymd_opt(2024, 6, 1).unwrap(),
        instructions: None,
    }
}

fn llm() -> ScriptedLlm {
    ScriptedLlm::new(0)
        .with_handler(|p| {
            p.contains("PARAGRAPH FROM THIS PAPER")
                .then(|| if p.contains("restated") { "NO. Already known." } else { "YES. New." }.to_string())
        })
        .on("Summarize the key", "An index layout and a latency study.")
        .on("INTRODUCTION:", "'''Search is old [1]. Layouts matter [3]. See [9].'''")
}

#[test]
fn three_paragraph_chain() {
    let llm = llm();
    let embedder = HashEmbedder::default();
    let t = TemplateSet::builtin();
    let env = IntroEnv { llm: &llm, embedder: &embedder, templates: &t };
    let state = run_intro_chain(&input(), &IntroConfig::default(), &env).unwrap();
    assert_eq!(state.title, "Fast Search");
    assert_eq!(state.paragraphs.len(), 3);
    let ids = |w: &[Work]| w.iter().map(|w| w.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&state.canonical_refs), ["old1", "old2"]);
    assert_eq!(ids(&state.recent_refs), ["new1", "new2"]);
    assert_eq!(state.votes.len(), 12);
    assert_eq!(state.kept_paragraphs.len(), 2);
    assert!(state.kept_paragraphs.iter().all(|p| !p.contains("restated")));
    assert_eq!(state.intro_text, "Search is old [1]. Layouts matter [3]. See [9].");
    assert_eq!(state.citation_map.get(&1).map(String::as_str), Some("old1"));
    assert_eq!(state.citation_map.get(&3).map(String::as_str), Some("new1"));
    assert_eq!(state.dangling_citations, [9]);
    assert_eq!(state.completed_stages.last(), Some(&ChainStage::Compose));

    let again = run_intro_chain(&input(), &IntroConfig::default(), &env).unwrap();
    assert_eq!(serde_json::to_string(&state).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn year_boundary_moves_references() {
    let llm = llm();
    let embedder = HashEmbedder::default();
    let t = TemplateSet::builtin();
    let env = IntroEnv { llm: &llm, embedder: &embedder, templates: &t };
    let state = run_intro_chain(&input(), &IntroConfig { y_years: 20, ..Default::default() }, &env).unwrap();
    assert!(state.canonical_refs.is_empty());
    assert_eq!(state.recent_refs.len(), 4);
    assert_eq!(state.y_years, 20);
}

#[test]
fn failures_name_stage_and_keep_partial_state() {
    let embedder = HashEmbedder::default();
    let t = TemplateSet::builtin();

    let mut no_abstract = input();
    no_abstract.r#abstract = "  ".into();
    let env = IntroEnv { llm: &llm(), embedder: &embedder, templates: &t };
    assert_eq!(run_intro_chain(&no_abstract, &IntroConfig::default(), &env).unwrap_err().stage, ChainStage::Extract);

    let mut bare = input();
    bare.references.iter_mut().for_each(|w| w.r#abstract = None);
    let e = run_intro_chain(&bare, &IntroConfig::default(), &env).unwrap_err();
    assert_eq!(e.stage, ChainStage::Resolve);
    assert_eq!(e.partial.resolution.missing_abstract.len(), 4);

    let e = run_intro_chain(&input(), &IntroConfig { keep_fraction: 1.5, ..Default::default() }, &env).unwrap_err();
    assert_eq!(e.stage, ChainStage::Filter);
    assert_eq!(e.partial.votes.len(), 12);

    let broken = Faulty::always(ScriptedLlm::new(0), ProviderError::Transport("down".into()));
    let env = IntroEnv { llm: &broken, embedder: &embedder, templates: &t };
    let e = run_intro_chain(&input(), &IntroConfig::default(), &env).unwrap_err();
    assert_eq!(e.stage, ChainStage::Vote);
    assert!(e.provider.is_some());
    assert_eq!(e.partial.paragraphs.len(), 3);
    assert_eq!(e.partial.completed_stages, [ChainStage::Extract, ChainStage::Resolve, ChainStage::Split]);
}

#[test]
fn references_are_completed_from_the_corpus() {
    let mut full = reference("c1", 2001);
    full.title = "Learning to Rank".into();
    let corpus = Corpus::new(vec![full]).unwrap();
    let mut sparse = Work::new("bib1", "learning to rank");
    sparse.r#abstract = None;
    let mut kept = Work::new("bib2", "Learning to Rank");
    kept.r#abstract = Some("Mine.".into());
    kept.year = Some(2019);
    let out = resolve_references(&[sparse, kept, Work::new("bib3", "Unknown")], &corpus);
    assert_eq!(out[0].r#abstract.as_deref(), Some("Abstract of c1."));
    assert_eq!(out[0].year, Some(2001));
    assert_eq!(out[1].r#abstract.as_deref(), Some("Mine."));
    assert_eq!(out[1].year, Some(2019));
    assert_eq!(out[2].r#abstract, None);
}
