use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{RecommendError, Stage};
use crate::corpus::{normalize_title, Corpus, Work};
use crate::parallel::map_bounded;
use crate::providers::{self, Embedder};
use crate::vectorindex::{Backend, EmbeddingVector, Metric, VectorIndex};

pub const KEY_SPACE: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Bibtex,
    Index,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Bibtex => "bibtex",
            Source::Index => "index",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub work: Work,
    /// Four lowercase hex digits, unique within a batch.
    pub key: String,
    pub source: Source,
    pub retrieval_distance: Option<f32>,
}

/// Draws `n` distinct four-digit hex keys uniformly without replacement.
/// Draws that happen to form a run of consecutive values are redrawn so the
/// labels never read as ordinals.
pub fn assign_keys<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<String>, RecommendError> {
    if n > KEY_SPACE {
        return Err(RecommendError::Capacity { requested: n, limit: KEY_SPACE });
    }
    loop {
        let values = rand::seq::index::sample(rng, KEY_SPACE, n).into_vec();
        let ordinal = n >= 2 && values.windows(2).all(|w| w[1] == w[0] + 1);
        if !ordinal {
            return Ok(values.into_iter().map(|v| format!("{v:04x}")).collect());
        }
    }
}

/// A corpus together with an index over its works' embeddings.
#[derive(Debug)]
pub struct Library {
    corpus: Corpus,
    index: VectorIndex,
}

impl Library {
    /// Pairs an index with the corpus it was built from; every indexed id
    /// must resolve to a work.
    pub fn new(corpus: Corpus, index: VectorIndex) -> Result<Self, RecommendError> {
        if let Some(missing) = index.ids().iter().find(|id| corpus.get(id).is_none()) {
            return Err(RecommendError::Input(format!(
                "indexed work '{missing}' is not in the corpus"
            )));
        }
        Ok(Library { corpus, index })
    }

    /// Embeds every work in batches and builds the index.
    pub fn build(
        corpus: Corpus,
        embedder: &dyn Embedder,
        metric: Metric,
        backend: Backend,
        parallelism: usize,
    ) -> Result<Self, RecommendError> {
        let vectors = embed_works(corpus.works(), embedder, parallelism)?;
        let items = corpus
            .works()
            .iter()
            .map(|w| w.id.clone())
            .zip(vectors)
            .collect();
        let index = VectorIndex::build(embedder.dimension(), items, metric, backend)?;
        Ok(Library { corpus, index })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }
}

const EMBED_BATCH: usize = 64;

/// Embeds each work's title and abstract, preserving order.
pub fn embed_works(
    works: &[Work],
    embedder: &dyn Embedder,
    parallelism: usize,
) -> Result<Vec<EmbeddingVector>, RecommendError> {
    let batches: Vec<Vec<String>> = works
        .chunks(EMBED_BATCH)
        .map(|c| c.iter().map(Work::embedding_text).collect())
        .collect();
    let mut out = Vec::with_capacity(works.len());
    for batch in map_bounded(&batches, parallelism, |b| providers::embed(embedder, b)) {
        out.extend(batch.map_err(|source| RecommendError::Provider {
            stage: Stage::Embed,
            source,
        })?);
    }
    Ok(out)
}

pub fn embed_query(embedder: &dyn Embedder, text: &str) -> Result<EmbeddingVector, RecommendError> {
    providers::embed(embedder, &[text.to_string()])
        .map(|mut v| v.remove(0))
        .map_err(|source| RecommendError::Provider {
            stage: Stage::Embed,
            source,
        })
}

/// Up to `k` index neighbours of `query` plus the user's bibliography.
///
/// A bibliography work replaces any index hit with the same normalised
/// title. Bibliography works are embedded so that every candidate carries a
/// distance; when the union exceeds `cap`, the nearest `cap` are kept.
/// Keys are assigned to the final list.
pub fn retrieve_candidates<R: Rng + ?Sized>(
    query: &EmbeddingVector,
    library: &Library,
    bib_works: &[Work],
    embedder: &dyn Embedder,
    k: usize,
    cap: usize,
    rng: &mut R,
) -> Result<Vec<Candidate>, RecommendError> {
    if k == 0 || cap == 0 {
        return Err(RecommendError::Input("k and the candidate cap must be at least 1".into()));
    }
    let index = library.index();
    let neighbours = if index.is_empty() {
        Vec::new()
    } else {
        index.query(query, k).map_err(|e| RecommendError::Index {
            stage: Stage::Retrieve,
            source: e,
        })?
    };

    let mut seen_bib = HashSet::new();
    let bib: Vec<&Work> = bib_works
        .iter()
        .filter(|w| seen_bib.insert(normalize_title(&w.title)))
        .collect();
    let bib_titles: HashSet<String> = bib.iter().map(|w| normalize_title(&w.title)).collect();

    let mut pool: Vec<(Work, Source, Option<f32>)> = Vec::new();
    for n in neighbours {
        let work = library
            .corpus()
            .get(&n.work_id)
            .expect("library ids resolve")
            .clone();
        if bib_titles.contains(&normalize_title(&work.title)) {
            continue;
        }
        pool.push((work, Source::Index, Some(n.distance)));
    }
    if !bib.is_empty() {
        let owned: Vec<Work> = bib.iter().map(|w| (*w).clone()).collect();
        let vectors = embed_works(&owned, embedder, 1)?;
        for (w, v) in owned.into_iter().zip(vectors) {
            let d = index
                .distance_between(query, &v)
                .map_err(|e| RecommendError::Index {
                    stage: Stage::Retrieve,
                    source: e,
                })?;
            pool.push((w, Source::Bibtex, Some(d)));
        }
    }
    if pool.len() > cap {
        pool.sort_by(|a, b| {
            a.2.unwrap_or(f32::INFINITY)
                .total_cmp(&b.2.unwrap_or(f32::INFINITY))
                .then_with(|| a.0.id.cmp(&b.0.id))
        });
        pool.truncate(cap);
    }
    let keys = assign_keys(pool.len(), rng)?;
    Ok(pool
        .into_iter()
        .zip(keys)
        .map(|((work, source, retrieval_distance), key)| Candidate {
            work,
            key,
            source,
            retrieval_distance,
        })
        .collect())
}
