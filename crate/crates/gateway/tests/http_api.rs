use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use quill::config::ServiceConfig;
use quill::engine::Engine;
use quill::server::{router, Health};
use quill::service::{IntroResponse, SuggestResponse};
use quill_core::corpus::{Corpus, Work};
use quill_core::offline::OfflineLlm;
use quill_core::providers::mock::{Faulty, HashEmbedder, ScriptedLlm};
use quill_core::providers::{LanguageModel, ProviderError, TemplateSet};
use quill_core::recommend::Library;
use quill_core::synthetic::{generate, SyntheticConfig};
use quill_core::vectorindex::{Backend, Metric};
use serde_json::{json, Value};
use tower::ServiceExt;

fn engine_with(llm: Arc<dyn LanguageModel>) -> Arc<Engine> {
    let mut works = generate(&SyntheticConfig { works: 120, papers: 0, ..Default::default() }).works;
    let mut known = Work::new("known:1", "Sparse attention for long documents");
    known.r#abstract = Some("Attention restricted to local windows scales to long documents.".into());
    known.year = Some(2011);
    works.push(known);
    let embedder = Arc::new(HashEmbedder::default());
    let library = Library::build(Corpus::new(works).unwrap(), &*embedder, Metric::Cosine, Backend::Exact, 2).unwrap();
    Arc::new(Engine {
        config: ServiceConfig::default(),
        library,
        llm,
        embedder,
        templates: TemplateSet::builtin(),
    })
}

fn app() -> Router {
    router(engine_with(Arc::new(OfflineLlm)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

const DOC: &str = "Long documents strain attention. Sparse windows reduce the cost. We extend them to graphs.";

fn suggest_body(doc: &str, cursor: usize) -> Value {
    json!({"document": doc, "cursor": cursor, "bibtex": "@article{k1, title={Windowed attention}, year={2020}}"})
}

fn without_timings(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings_ms");
    v
}

#[tokio::test]
async fn suggest_is_deterministic_and_reports_timings() {
    let app = app();
    let (s1, b1) = call(&app, "POST", "/suggest", Some(suggest_body(DOC, 60))).await;
    let (s2, b2) = call(&app, "POST", "/suggest", Some(suggest_body(DOC, 60))).await;
    assert_eq!(s1, StatusCode::OK, "{b1}");
    assert_eq!(s2, StatusCode::OK);
    for stage in ["context", "fabricate", "embed", "retrieve", "score", "total"] {
        assert!(b1["timings_ms"][stage].as_f64().unwrap() >= 0.0, "missing {stage}");
    }
    assert_eq!(without_timings(b1.clone()), without_timings(b2));
    assert_eq!(b1["seed"], 0);
    let sources: Vec<&str> = b1["suggestions"].as_array().unwrap().iter().map(|s| s["source"].as_str().unwrap()).collect();
    assert!(sources.contains(&"bibtex"));

    let parsed: SuggestResponse = serde_json::from_value(b1.clone()).unwrap();
    assert_eq!(serde_json::to_value(&parsed).unwrap(), b1);
}

#[tokio::test]
async fn suggest_rejects_bad_input() {
    let app = app();
    let (s, b) = call(&app, "POST", "/suggest", Some(suggest_body(DOC, DOC.chars().count() + 5))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["error"]["class"], "invalid_input");
    let (s, b) = call(&app, "POST", "/suggest", Some(json!({"document": 3}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["error"]["class"], "bad_request");
}

#[tokio::test]
async fn provider_down_is_502_with_stage() {
    let down = Faulty::always(OfflineLlm, ProviderError::Transport("connection refused".into()));
    let app = router(engine_with(Arc::new(down)));
    let (s, b) = call(&app, "POST", "/suggest", Some(suggest_body(DOC, 10))).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(b["error"]["stage"], "fabricate");
    assert_eq!(b["error"]["class"], "provider_failed");
}

fn paragraph(topic: &str) -> String {
    format!(
        "This paragraph presents {topic} in enough words to count as a real paragraph. It gives the \
         setting, the approach and the measured outcome in some detail, then closes with a short remark on \
         scope and on what remains open."
    )
}

fn intro_body() -> Value {
    let manuscript = format!(
        "\\title{{Sparse Graph Attention}}\n\n{}\n\n{}\n\n{}\n",
        paragraph("a sparse graph attention layer"),
        paragraph("a restated baseline"),
        paragraph("an ablation of window sizes")
    );
    let bibtex = "@article{a, title={Graph attention networks}, year={2005}, abstract={Attention over graph neighbourhoods.}}\n\
                  @article{b, title={Sparse attention for long documents}}\n\
                  @article{c, title={Window sizes in practice}, year={2023}, abstract={How window size changes accuracy.}}";
    json!({
        "manuscript": manuscript,
        "bibtex": bibtex,
        "abstract": "We propose sparse graph attention and ablate window sizes.",
        "reference_date": "2024-06-01",
    })
}

fn scripted() -> ScriptedLlm {
    ScriptedLlm::new(0)
        .with_handler(|p| {
            p.contains("PARAGRAPH FROM THIS PAPER")
                .then(|| if p.contains("restated") { "NO. Known." } else { "YES. New." }.to_string())
        })
        .on("Summarize the key", "A sparse layer and a window ablation.")
        .on("INTRODUCTION:", "'''Graphs matter [1]. Windows too [2]. Recent [3].'''")
}

#[tokio::test]
async fn intro_returns_text_and_trace() {
    let app = router(engine_with(Arc::new(scripted())));
    let (s, b) = call(&app, "POST", "/intro", Some(intro_body())).await;
    assert_eq!(s, StatusCode::OK, "{b}");
    assert_eq!(b["intro_text"], "Graphs matter [1]. Windows too [2]. Recent [3].");
    let stages: Vec<&str> = b["trace"]["completed_stages"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(stages, ["extract", "resolve", "split", "vote", "filter", "summarize", "compose"]);
    assert_eq!(b["trace"]["y_years"], 5);
    // the second entry had no abstract and was completed from the corpus by title
    assert_eq!(b["trace"]["resolution"]["resolved"], json!(["bib:a", "bib:b", "bib:c"]));
    assert_eq!(b["trace"]["citation_map"]["2"], "bib:b");
    assert_eq!(b["trace"]["paragraphs"].as_array().unwrap().len(), 3);
    assert_eq!(b["trace"]["kept_paragraphs"].as_array().unwrap().len(), 2);

    let parsed: IntroResponse = serde_json::from_value(b.clone()).unwrap();
    assert_eq!(serde_json::to_value(&parsed).unwrap(), b);

    let mut body = intro_body();
    body["y_years"] = json!(30);
    let (_, b) = call(&app, "POST", "/intro", Some(body)).await;
    assert_eq!(b["trace"]["y_years"], 30);
}

#[tokio::test]
async fn intro_error_statuses() {
    let app = router(engine_with(Arc::new(scripted())));
    let mut body = intro_body();
    body.as_object_mut().unwrap().remove("abstract");
    let (s, _) = call(&app, "POST", "/intro", Some(body)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let mut body = intro_body();
    body["bibtex"] = json!("@article{x, title={Nothing known}}\n@article{y, title={Also unknown}}");
    let (s, b) = call(&app, "POST", "/intro", Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(b["error"]["stage"], "resolve");
    assert_eq!(b["resolution"]["missing_abstract"], json!(["bib:x", "bib:y"]));

    let down = Faulty::always(scripted(), ProviderError::Server { status: 503, message: "busy".into() });
    let app = router(engine_with(Arc::new(down)));
    let (s, b) = call(&app, "POST", "/intro", Some(intro_body())).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(b["error"]["stage"], "vote");
    assert_eq!(b["trace"]["paragraphs"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn health_and_work_lookup() {
    let app = app();
    let (s, b) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    let h: Health = serde_json::from_value(b).unwrap();
    assert_eq!(h.index_count, 121);
    assert_eq!(h.version, env!("CARGO_PKG_VERSION"));

    let (s, b) = call(&app, "GET", "/works/known:1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["title"], "Sparse attention for long documents");
    let (s, b) = call(&app, "GET", "/works/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(b["error"]["class"], "not_found");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_do_not_share_state() {
    let app = app();
    let other = "Graph methods scale poorly. Sampling helps a lot. We revisit it.";
    let a = suggest_body(DOC, 60);
    let b = json!({"document": other, "cursor": 30, "seed": 9});
    let serial_a = call(&app, "POST", "/suggest", Some(a.clone())).await.1;
    let serial_b = call(&app, "POST", "/suggest", Some(b.clone())).await.1;
    let mut tasks = Vec::new();
    for i in 0..8 {
        let app = app.clone();
        let body = if i % 2 == 0 { a.clone() } else { b.clone() };
        tasks.push(tokio::spawn(async move { call(&app, "POST", "/suggest", Some(body)).await.1 }));
    }
    for (i, t) in tasks.into_iter().enumerate() {
        let got = without_timings(t.await.unwrap());
        let want = if i % 2 == 0 { &serial_a } else { &serial_b };
        assert_eq!(got, without_timings(want.clone()));
    }
}
