//! Nearest-neighbor index over work embeddings.
//!
//! Two backends share one handle type: an exact linear scan, which is the
//! correctness reference, and an HNSW graph for large corpora. Both sort
//! results by distance and break ties by ascending work id. Once built, an
//! index is immutable and can be queried from any number of threads.

mod file;
mod hnsw;

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{load_index, read_index, read_info, save_index, write_index, FORMAT_VERSION, MAGIC};
pub use hnsw::HnswParams;

use hnsw::HnswGraph;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, vector has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("duplicate work id '{0}' in index input")]
    DuplicateId(String),
    #[error("empty work id in index input")]
    EmptyId,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an index file: bad magic at offset 0")]
    BadMagic,
    #[error("unsupported index version {found} at offset 4 (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("index file truncated at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("corrupt index file at offset {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
}

/// Fixed-dimension vector of finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, IndexError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(EmbeddingVector(values))
        } else {
            Err(IndexError::NonFinite)
        }
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = IndexError;

    fn try_from(v: Vec<f32>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        }
    }

    /// Distance between two stored (already prepared) vectors.
    #[inline]
    pub(crate) fn distance(self, a: &[f32], b: &[f32]) -> f32 {
        match self {
            Metric::Cosine => {
                let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (1.0 - dot).max(0.0)
            }
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f32>()
                .sqrt(),
        }
    }

    /// Distance between two raw vectors of equal dimension.
    pub fn between(self, a: &EmbeddingVector, b: &EmbeddingVector) -> f32 {
        self.distance(&self.prepare(a.as_slice()), &self.prepare(b.as_slice()))
    }

    /// Prepares a vector for storage or querying: cosine vectors are scaled
    /// to unit length (zero vectors stay zero), euclidean ones are untouched.
    pub(crate) fn prepare(self, v: &[f32]) -> Vec<f32> {
        match self {
            Metric::Cosine => {
                let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
                if norm == 0.0 {
                    v.to_vec()
                } else {
                    v.iter().map(|&x| ((x as f64) / norm) as f32).collect()
                }
            }
            Metric::Euclidean => v.to_vec(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            other => Err(format!("unknown metric '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Exact,
    Approximate(HnswParams),
}

impl Backend {
    pub fn approximate() -> Self {
        Backend::Approximate(HnswParams::default())
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Exact => BackendKind::Exact,
            Backend::Approximate(_) => BackendKind::Approximate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighbor {
    pub work_id: String,
    pub distance: f32,
}

/// Header-level description of an index, printable as JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexInfo {
    pub version: u16,
    pub dimension: usize,
    pub metric: Metric,
    pub backend: BackendKind,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hnsw: Option<HnswParams>,
}

pub struct VectorIndex {
    dimension: usize,
    metric: Metric,
    ids: Vec<String>,
    // Row-major, `dimension` floats per work, already prepared for `metric`.
    data: Vec<f32>,
    graph: Option<HnswGraph>,
}

impl fmt::Debug for VectorIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorIndex")
            .field("info", &self.info())
            .finish()
    }
}

/// Orders (distance, id) pairs: ascending distance, then ascending id.
pub(crate) fn neighbor_order(a: (f32, &str), b: (f32, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

impl VectorIndex {
    /// Builds an index. All vectors must share `dimension`; ids must be
    /// unique and non-empty.
    pub fn build(
        dimension: usize,
        items: Vec<(String, EmbeddingVector)>,
        metric: Metric,
        backend: Backend,
    ) -> Result<Self, IndexError> {
        let mut seen = HashSet::with_capacity(items.len());
        let mut ids = Vec::with_capacity(items.len());
        let mut data = Vec::with_capacity(items.len() * dimension);
        for (id, vec) in items {
            if id.is_empty() {
                return Err(IndexError::EmptyId);
            }
            if vec.dimension() != dimension {
                return Err(IndexError::DimensionMismatch {
                    expected: dimension,
                    found: vec.dimension(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(IndexError::DuplicateId(id));
            }
            data.extend(metric.prepare(vec.as_slice()));
            ids.push(id);
        }
        let mut index = VectorIndex {
            dimension,
            metric,
            ids,
            data,
            graph: None,
        };
        if let Backend::Approximate(params) = backend {
            index.graph = Some(HnswGraph::build(&index, params));
        }
        Ok(index)
    }

    pub(crate) fn from_parts(
        dimension: usize,
        metric: Metric,
        ids: Vec<String>,
        data: Vec<f32>,
        graph: Option<HnswGraph>,
    ) -> Self {
        VectorIndex {
            dimension,
            metric,
            ids,
            data,
            graph,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn backend(&self) -> Backend {
        match &self.graph {
            Some(g) => Backend::Approximate(g.params),
            None => Backend::Exact,
        }
    }

    pub fn info(&self) -> IndexInfo {
        IndexInfo {
            version: FORMAT_VERSION,
            dimension: self.dimension,
            metric: self.metric,
            backend: self.backend().kind(),
            count: self.len(),
            hnsw: self.graph.as_ref().map(|g| g.params),
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub(crate) fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub(crate) fn graph(&self) -> Option<&HnswGraph> {
        self.graph.as_ref()
    }

    /// Stored (prepared) vector for a work id.
    pub fn vector_of(&self, work_id: &str) -> Option<EmbeddingVector> {
        self.ids
            .iter()
            .position(|id| id == work_id)
            .map(|i| EmbeddingVector(self.row(i).to_vec()))
    }

    /// Distance from an arbitrary vector to a stored one, under this index's
    /// metric.
    pub fn distance_to(&self, query: &EmbeddingVector, work_id: &str) -> Result<Option<f32>, IndexError> {
        self.check_dim(query)?;
        let q = self.metric.prepare(query.as_slice());
        Ok(self
            .ids
            .iter()
            .position(|id| id == work_id)
            .map(|i| self.metric.distance(&q, self.row(i))))
    }

    /// Distance between two arbitrary vectors under this index's metric.
    pub fn distance_between(&self, a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f32, IndexError> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        let pa = self.metric.prepare(a.as_slice());
        let pb = self.metric.prepare(b.as_slice());
        Ok(self.metric.distance(&pa, &pb))
    }

    fn check_dim(&self, v: &EmbeddingVector) -> Result<(), IndexError> {
        if v.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                found: v.dimension(),
            });
        }
        Ok(())
    }

    /// Returns `min(k, len)` neighbors in ascending distance order.
    pub fn query(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<Neighbor>, IndexError> {
        self.check_dim(query)?;
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.metric.prepare(query.as_slice());
        let hits = match &self.graph {
            Some(g) => g.search(self, &q, k),
            None => self.scan(&q, k),
        };
        Ok(hits
            .into_iter()
            .map(|(d, i)| Neighbor {
                work_id: self.ids[i].clone(),
                distance: d,
            })
            .collect())
    }

    /// Exact search regardless of backend.
    pub fn query_exact(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<Neighbor>, IndexError> {
        self.check_dim(query)?;
        let q = self.metric.prepare(query.as_slice());
        Ok(self
            .scan(&q, k)
            .into_iter()
            .map(|(d, i)| Neighbor {
                work_id: self.ids[i].clone(),
                distance: d,
            })
            .collect())
    }

    fn scan(&self, q: &[f32], k: usize) -> Vec<(f32, usize)> {
        let mut all: Vec<(f32, usize)> = (0..self.len())
            .map(|i| (self.metric.distance(q, self.row(i)), i))
            .collect();
        let k = k.min(all.len());
        if k == 0 {
            return Vec::new();
        }
        let cmp = |a: &(f32, usize), b: &(f32, usize)| {
            neighbor_order((a.0, &self.ids[a.1]), (b.0, &self.ids[b.1]))
        };
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, cmp);
            all.truncate(k);
        }
        all.sort_by(cmp);
        all
    }
}
