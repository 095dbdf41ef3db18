//! Hierarchical navigable small-world graph.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{neighbor_order, VectorIndex};

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Links per node on upper layers; layer 0 allows twice as many.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// Seeds the level assignment, which makes builds reproducible.
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 0x5eed_cafe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    dist: f32,
    node: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.node.cmp(&other.node))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

trait VisitSet {
    /// Marks `node`; returns true if it was not yet marked.
    fn visit(&mut self, node: u32) -> bool;
}

impl VisitSet for HashSet<u32> {
    fn visit(&mut self, node: u32) -> bool {
        self.insert(node)
    }
}

/// Generation-stamped visited marks, reused across insertions.
struct Stamps {
    marks: Vec<u32>,
    gen: u32,
}

impl Stamps {
    fn new(n: usize) -> Self {
        Stamps {
            marks: vec![0; n],
            gen: 0,
        }
    }

    fn reset(&mut self) -> &mut Self {
        self.gen = self.gen.wrapping_add(1);
        if self.gen == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.gen = 1;
        }
        self
    }
}

impl VisitSet for Stamps {
    fn visit(&mut self, node: u32) -> bool {
        let slot = &mut self.marks[node as usize];
        if *slot == self.gen {
            false
        } else {
            *slot = self.gen;
            true
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct HnswGraph {
    pub(crate) params: HnswParams,
    pub(crate) entry: Option<u32>,
    /// `links[node][layer]`, one list per layer the node lives on.
    pub(crate) links: Vec<Vec<Vec<u32>>>,
}

impl HnswGraph {
    pub(crate) fn top_level(&self) -> usize {
        self.entry.map_or(0, |e| self.links[e as usize].len() - 1)
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            self.params.m * 2
        } else {
            self.params.m
        }
    }

    pub(crate) fn build(index: &VectorIndex, params: HnswParams) -> Self {
        let n = index.len();
        let mut graph = HnswGraph {
            params,
            entry: None,
            links: Vec::with_capacity(n),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let level_mult = 1.0 / (params.m.max(2) as f64).ln();
        let mut stamps = Stamps::new(n);
        for node in 0..n {
            let u: f64 = 1.0 - rng.gen::<f64>();
            let level = ((-u.ln() * level_mult).floor() as usize).min(MAX_LEVEL);
            graph.links.push(vec![Vec::new(); level + 1]);
            graph.insert(index, node as u32, level, &mut stamps);
        }
        graph
    }

    fn dist_nodes(index: &VectorIndex, a: u32, b: u32) -> f32 {
        index.metric.distance(index.row(a as usize), index.row(b as usize))
    }

    fn insert(&mut self, index: &VectorIndex, node: u32, level: usize, stamps: &mut Stamps) {
        let Some(entry) = self.entry else {
            self.entry = Some(node);
            return;
        };
        let q = index.row(node as usize);
        let top = self.top_level();
        let mut eps = vec![Cand {
            dist: index.metric.distance(q, index.row(entry as usize)),
            node: entry,
        }];
        for layer in (level + 1..=top).rev() {
            eps = self.search_layer(index, q, &eps, 1, layer, stamps.reset());
        }
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(index, q, &eps, self.params.ef_construction, layer, stamps.reset());
            let chosen = select_neighbors(index, &found, self.params.m);
            self.links[node as usize][layer] = chosen.iter().map(|c| c.node).collect();
            let cap = self.max_links(layer);
            for c in &chosen {
                let list = &mut self.links[c.node as usize][layer];
                list.push(node);
                if list.len() > cap {
                    let mut cands: Vec<Cand> = list
                        .iter()
                        .map(|&other| Cand {
                            dist: Self::dist_nodes(index, c.node, other),
                            node: other,
                        })
                        .collect();
                    cands.sort();
                    let kept = select_neighbors(index, &cands, cap);
                    self.links[c.node as usize][layer] = kept.into_iter().map(|k| k.node).collect();
                }
            }
            eps = found;
        }
        if level > top {
            self.entry = Some(node);
        }
    }

    /// Best-first search on one layer. Returns up to `ef` candidates sorted
    /// by ascending distance.
    fn search_layer<V: VisitSet>(
        &self,
        index: &VectorIndex,
        q: &[f32],
        entry_points: &[Cand],
        ef: usize,
        layer: usize,
        visited: &mut V,
    ) -> Vec<Cand> {
        let mut frontier: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut best: BinaryHeap<Cand> = BinaryHeap::new();
        for &ep in entry_points {
            if visited.visit(ep.node) {
                frontier.push(Reverse(ep));
                best.push(ep);
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(Reverse(cur)) = frontier.pop() {
            if let Some(worst) = best.peek() {
                if best.len() >= ef && cur.dist > worst.dist {
                    break;
                }
            }
            let Some(neigh) = self.links[cur.node as usize].get(layer) else {
                continue;
            };
            for &next in neigh {
                if !visited.visit(next) {
                    continue;
                }
                let d = index.metric.distance(q, index.row(next as usize));
                let cand = Cand { dist: d, node: next };
                if best.len() < ef || best.peek().is_some_and(|w| cand < *w) {
                    frontier.push(Reverse(cand));
                    best.push(cand);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    pub(crate) fn search(&self, index: &VectorIndex, q: &[f32], k: usize) -> Vec<(f32, usize)> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        let mut eps = vec![Cand {
            dist: index.metric.distance(q, index.row(entry as usize)),
            node: entry,
        }];
        for layer in (1..=self.top_level()).rev() {
            eps = self.search_layer(index, q, &eps, 1, layer, &mut HashSet::new());
        }
        let ef = self.params.ef_search.max(k);
        let mut found: Vec<(f32, usize)> = self
            .search_layer(index, q, &eps, ef, 0, &mut HashSet::with_capacity(ef * 8))
            .into_iter()
            .map(|c| (c.dist, c.node as usize))
            .collect();
        found.sort_by(|a, b| neighbor_order((a.0, &index.ids[a.1]), (b.0, &index.ids[b.1])));
        found.truncate(k);
        found
    }
}

/// Diversity heuristic: keep a candidate only if it is closer to the base
/// than to every neighbor already kept; top up with pruned candidates when
/// fewer than `m` survive. `sorted` must be ascending by distance.
fn select_neighbors(index: &VectorIndex, sorted: &[Cand], m: usize) -> Vec<Cand> {
    let mut kept: Vec<Cand> = Vec::with_capacity(m);
    let mut pruned: Vec<Cand> = Vec::new();
    for &c in sorted {
        if kept.len() >= m {
            break;
        }
        let diverse = kept
            .iter()
            .all(|k| c.dist < HnswGraph::dist_nodes(index, c.node, k.node));
        if diverse {
            kept.push(c);
        } else {
            pruned.push(c);
        }
    }
    for c in pruned {
        if kept.len() >= m {
            break;
        }
        kept.push(c);
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectorindex::{Backend, EmbeddingVector, Metric};

    fn random_items(n: usize, dim: usize, seed: u64) -> Vec<(String, EmbeddingVector)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (format!("w{i:05}"), EmbeddingVector::new(v).unwrap())
            })
            .collect()
    }

    #[test]
    fn every_node_is_linked_on_layer_zero() {
        let items = random_items(300, 8, 1);
        let idx = VectorIndex::build(8, items, Metric::Euclidean, Backend::approximate()).unwrap();
        let g = idx.graph().unwrap();
        for (i, l) in g.links.iter().enumerate() {
            assert!(!l[0].is_empty(), "node {i} isolated");
            for (layer, list) in l.iter().enumerate() {
                assert!(list.len() <= g.max_links(layer));
            }
        }
    }

    #[test]
    fn build_is_reproducible() {
        let a = VectorIndex::build(8, random_items(200, 8, 3), Metric::Cosine, Backend::approximate()).unwrap();
        let b = VectorIndex::build(8, random_items(200, 8, 3), Metric::Cosine, Backend::approximate()).unwrap();
        assert_eq!(a.graph().unwrap().links, b.graph().unwrap().links);
    }

    #[test]
    fn small_index_recall_is_high() {
        let items = random_items(500, 16, 9);
        let idx = VectorIndex::build(16, items, Metric::Cosine, Backend::approximate()).unwrap();
        let queries = random_items(30, 16, 10);
        let mut hit = 0;
        for (_, q) in &queries {
            let approx: HashSet<String> = idx.query(q, 10).unwrap().into_iter().map(|n| n.work_id).collect();
            let exact = idx.query_exact(q, 10).unwrap();
            hit += exact.iter().filter(|n| approx.contains(&n.work_id)).count();
        }
        assert!(hit as f64 / 300.0 >= 0.95, "recall {}", hit as f64 / 300.0);
    }
}
