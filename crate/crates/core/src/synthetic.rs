//! Seeded synthetic corpora: topical works, source papers whose sentences
//! cite them, and an optional planted ground truth with near-twin works.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Work;
use crate::evalharness::{AnnotatedSentence, SourcePaper};

const ONSETS: &[&str] = &["b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "cl", "gr", "st", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: &[&str] = &["", "n", "r", "s", "x", "l", "th"];

const FILLER: &[&str] = &[
    "we", "study", "a", "new", "method", "for", "the", "problem", "of", "using", "data", "from", "large",
    "scale", "experiments", "and", "show", "that", "it", "improves", "over", "prior", "approaches", "in",
    "several", "settings", "with", "results", "on", "analysis", "model", "based",
];

const CITING_FRAMES: &[&str] = &[
    "Prior work on TOPIC established the basic approach \\cite{KEY}.",
    "Methods for TOPIC have been studied extensively \\cite{KEY}.",
    "Our setup follows the analysis of TOPIC \\cite{KEY}.",
    "Related results on TOPIC were reported earlier \\cite{KEY}.",
    "Several authors examine TOPIC in detail \\cite{KEY}.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub works: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub papers: usize,
    pub references_per_paper: usize,
    /// Citing sentences per paper; three plain sentences are added.
    pub citing_sentences: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            works: 1000,
            topics: 25,
            words_per_topic: 14,
            papers: 40,
            references_per_paper: 14,
            citing_sentences: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub works: Vec<Work>,
    pub papers: Vec<SourcePaper>,
    /// Topic of each work, parallel to `works`.
    pub topics: Vec<usize>,
}

/// A work planted for end-to-end checks, its near-twins, and the paper
/// that cites it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Planted {
    pub truth_id: String,
    pub twin_ids: Vec<String>,
    pub paper_id: String,
}

fn word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.gen_range(2..=3);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}{}",
                ONSETS.choose(rng).unwrap(),
                VOWELS.choose(rng).unwrap(),
                CODAS.choose(rng).unwrap()
            )
        })
        .collect()
}

fn vocabulary<R: Rng>(count: usize, taken: &mut BTreeSet<String>, rng: &mut R) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w = word(rng);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn pick<'a, R: Rng>(words: &'a [String], k: usize, rng: &mut R) -> Vec<&'a str> {
    words.choose_multiple(rng, k).map(String::as_str).collect()
}

fn make_work<R: Rng>(id: String, topic_words: &[String], rng: &mut R) -> Work {
    let title_words = pick(topic_words, rng.gen_range(3..=5), rng);
    let mut w = Work::new(id, capitalize(&title_words.join(" ")));
    let mut body: Vec<&str> = Vec::new();
    for _ in 0..rng.gen_range(25..40) {
        if rng.gen_bool(0.45) {
            body.push(topic_words.choose(rng).unwrap());
        } else {
            body.push(FILLER.choose(rng).unwrap());
        }
    }
    w.r#abstract = Some(format!("{}.", capitalize(&body.join(" "))));
    let year = rng.gen_range(1995..=2023);
    w.year = Some(year);
    w.publication_date = NaiveDate::from_ymd_opt(year, rng.gen_range(1..=12), rng.gen_range(1..=28));
    w.citation_count = rng.gen_range(0..500);
    w.language = Some("en".into());
    w
}

fn citing_sentence<R: Rng>(cited: &Work, rng: &mut R) -> String {
    let words: Vec<&str> = cited.title.split_whitespace().collect();
    let phrase = words[..words.len().min(3)].join(" ").to_lowercase();
    let frame = CITING_FRAMES.choose(rng).unwrap();
    frame.replace("TOPIC", &phrase).replace("KEY", &cited.id)
}

fn plain_sentence<R: Rng>(topic_words: &[String], rng: &mut R) -> String {
    let w = pick(topic_words, 2, rng);
    format!("We focus on {} and {} in this study.", w[0], w[1])
}

fn make_paper<R: Rng>(id: String, references: Vec<&Work>, topic_words: &[String], citing: usize, rng: &mut R) -> SourcePaper {
    let mut sentences: Vec<AnnotatedSentence> = (0..citing)
        .map(|i| {
            let cited = references[i % references.len()];
            AnnotatedSentence { text: citing_sentence(cited, rng), cited: vec![cited.id.clone()] }
        })
        .collect();
    for at in [2, 7, 12] {
        let s = AnnotatedSentence { text: plain_sentence(topic_words, rng), cited: vec![] };
        sentences.insert(at.min(sentences.len()), s);
    }
    SourcePaper {
        id,
        sentences,
        references: references.iter().map(|w| w.id.clone()).collect(),
    }
}

struct Builder {
    rng: ChaCha8Rng,
    topic_words: Vec<Vec<String>>,
}

/// Builds the corpus and source papers. Equal configs give equal output.
pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    let (corpus, _) = build(config);
    corpus
}

fn build(config: &SyntheticConfig) -> (SyntheticCorpus, Builder) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let topics = config.topics.max(1);
    let mut taken = BTreeSet::new();
    let topic_words: Vec<Vec<String>> = (0..topics)
        .map(|_| vocabulary(config.words_per_topic.max(6), &mut taken, &mut rng))
        .collect();
    let mut works = Vec::with_capacity(config.works);
    let mut topic_of = Vec::with_capacity(config.works);
    for i in 0..config.works {
        let t = i % topics;
        works.push(make_work(format!("syn:{i:05}"), &topic_words[t], &mut rng));
        topic_of.push(t);
    }
    let mut papers = Vec::with_capacity(config.papers);
    for p in 0..config.papers {
        let t = p % topics;
        let mut same: Vec<&Work> = works.iter().zip(&topic_of).filter(|(_, &wt)| wt == t).map(|(w, _)| w).collect();
        same.shuffle(&mut rng);
        let mut refs: Vec<&Work> = same.into_iter().take(config.references_per_paper.saturating_sub(2)).collect();
        while refs.len() < config.references_per_paper && refs.len() < works.len() {
            let w = &works[rng.gen_range(0..works.len())];
            if !refs.iter().any(|r| r.id == w.id) {
                refs.push(w);
            }
        }
        if refs.is_empty() {
            continue;
        }
        papers.push(make_paper(format!("src:{p:03}"), refs, &topic_words[t], config.citing_sentences, &mut rng));
    }
    (
        SyntheticCorpus { works, papers, topics: topic_of },
        Builder { rng, topic_words },
    )
}

/// Like [`generate`], plus one planted work with `twins` near-duplicates and
/// a source paper whose citing sentences all cite the planted work.
pub fn generate_planted(config: &SyntheticConfig, twins: usize) -> (SyntheticCorpus, Planted) {
    let (mut corpus, mut b) = build(config);
    let topic = 0;
    let words = b.topic_words[topic].clone();
    let mut truth = make_work("planted:truth".into(), &words, &mut b.rng);
    truth.title = format!("Planted {}", truth.title);
    let mut twin_ids = Vec::new();
    for i in 0..twins {
        let mut twin = truth.clone();
        twin.id = format!("planted:twin{i}");
        twin.title = format!("{} revisited {}", truth.title, i + 1);
        corpus.works.push(twin);
        corpus.topics.push(topic);
        twin_ids.push(format!("planted:twin{i}"));
    }
    corpus.works.push(truth.clone());
    corpus.topics.push(topic);

    let wanted = config.references_per_paper.max(10);
    let mut others: Vec<&Work> = corpus
        .works
        .iter()
        .zip(&corpus.topics)
        .filter(|(w, &t)| t == topic && !w.id.starts_with("planted:"))
        .map(|(w, _)| w)
        .take(wanted)
        .collect();
    for w in corpus.works.iter().filter(|w| !w.id.starts_with("planted:")) {
        if others.len() >= wanted {
            break;
        }
        if !others.iter().any(|o| o.id == w.id) {
            others.push(w);
        }
    }
    let mut sentences: Vec<AnnotatedSentence> = (0..config.citing_sentences.max(10))
        .map(|_| AnnotatedSentence { text: citing_sentence(&truth, &mut b.rng), cited: vec![truth.id.clone()] })
        .collect();
    for _ in 0..3 {
        sentences.push(AnnotatedSentence { text: plain_sentence(&words, &mut b.rng), cited: vec![] });
    }
    let paper = SourcePaper {
        id: "src:planted".into(),
        sentences,
        references: std::iter::once(truth.id.clone()).chain(others.iter().map(|w| w.id.clone())).collect(),
    };
    corpus.papers.push(paper);
    (
        corpus,
        Planted {
            truth_id: truth.id,
            twin_ids,
            paper_id: "src:planted".into(),
        },
    )
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn sizes_and_determinism() {
        let c = SyntheticConfig { works: 200, papers: 8, ..Default::default() };
        let a = generate(&c);
        assert_eq!(a.works.len(), 200);
        assert_eq!(a.papers.len(), 8);
        assert_eq!(a, generate(&c));
        let ids: HashSet<&str> = a.works.iter().map(|w| w.id.as_str()).collect();
        assert_eq!(ids.len(), 200);
        for p in &a.papers {
            let citing = p.sentences.iter().filter(|s| !s.cited.is_empty()).count();
            assert_eq!(citing, c.citing_sentences);
            assert_eq!(p.references.len(), c.references_per_paper);
            for s in &p.sentences {
                assert!(s.text.chars().next().unwrap().is_uppercase());
                assert!(s.cited.iter().all(|id| p.references.contains(id)));
            }
        }
        assert_ne!(a, generate(&SyntheticConfig { seed: 1, ..c }));
    }

    #[test]
    fn planted_work_is_cited() {
        let (c, planted) = generate_planted(&SyntheticConfig { works: 100, papers: 2, ..Default::default() }, 2);
        assert_eq!(c.works.len(), 103);
        let p = c.papers.iter().find(|p| p.id == planted.paper_id).unwrap();
        assert!(p.sentences.iter().filter(|s| s.cited == [planted.truth_id.clone()]).count() >= 10);
        assert!(p.references.len() >= 10);
        assert!(!p.references.iter().any(|r| planted.twin_ids.contains(r)));
    }
}
