use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{case_seed, EvalError};
use crate::corpus::Corpus;
use crate::recommend::{ContextWindow, CITE_TOKEN};
use crate::vectorindex::VectorIndex;

/// One sentence of a source paper with the corpus ids it cites. Citation
/// markers (`\cite{...}`) in the text mark the slot; without one the slot
/// goes at the end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub text: String,
    #[serde(default)]
    pub cited: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePaper {
    pub id: String,
    pub sentences: Vec<AnnotatedSentence>,
    #[serde(default)]
    pub references: Vec<String>,
}

/// Reads one JSON paper per line; blank lines are ignored.
pub fn parse_source_papers<R: BufRead>(reader: R) -> Result<Vec<SourcePaper>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Input(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// A sampled citing sentence and the work it cites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    /// `<paper id>#<sentence index>`.
    pub case_id: String,
    pub source_paper: String,
    pub context: ContextWindow,
    pub ground_truth_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub items: Vec<EvalItem>,
    pub papers_included: usize,
    /// Papers with fewer than `min_sentences` qualifying sentences.
    pub papers_excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSetOptions {
    pub per_paper: usize,
    pub min_sentences: usize,
}

impl Default for EvalSetOptions {
    fn default() -> Self {
        EvalSetOptions {
            per_paper: 5,
            min_sentences: 10,
        }
    }
}

fn cite_marker() -> Regex {
    Regex::new(r"\\[A-Za-z]*cite[A-Za-z]*\*?(?:\[[^\]]*\])*\{[^}]*\}").expect("valid regex")
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Sentence text with every citation marker removed.
pub fn strip_citations(text: &str) -> String {
    collapse(&cite_marker().replace_all(text, " ").replace(CITE_TOKEN, " "))
}

/// The sentence with its first citation marker replaced by the slot token
/// and any others removed.
pub fn mask_sentence(text: &str) -> String {
    let re = cite_marker();
    let text = text.replace(CITE_TOKEN, " ");
    match re.find(&text) {
        Some(m) => {
            let before = re.replace_all(&text[..m.start()], " ");
            let after = re.replace_all(&text[m.end()..], " ");
            collapse(&format!("{before} {CITE_TOKEN} {after}"))
        }
        None => collapse(&format!("{text} {CITE_TOKEN}")),
    }
}

fn sentence_context(sentences: &[AnnotatedSentence], i: usize) -> ContextWindow {
    let neighbour = |j: Option<usize>| {
        j.and_then(|j| sentences.get(j))
            .map(|s| strip_citations(&s.text))
            .filter(|s| !s.is_empty())
    };
    ContextWindow {
        previous_sentence: neighbour(i.checked_sub(1)),
        masked_sentence: mask_sentence(&sentences[i].text),
        next_sentence: neighbour(Some(i + 1)),
    }
}

/// Samples citing sentences per paper. A sentence qualifies when one of its
/// cited ids is in the corpus; the first such id is the ground truth.
pub fn build_eval_set<R: Rng + ?Sized>(
    corpus: &Corpus,
    papers: &[SourcePaper],
    options: &EvalSetOptions,
    rng: &mut R,
) -> EvalSet {
    let mut set = EvalSet::default();
    for paper in papers {
        let qualifying: Vec<(usize, &str)> = paper
            .sentences
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                s.cited
                    .iter()
                    .find(|id| corpus.get(id).is_some())
                    .map(|id| (i, id.as_str()))
            })
            .collect();
        if qualifying.len() < options.min_sentences.max(1) {
            set.papers_excluded += 1;
            continue;
        }
        set.papers_included += 1;
        let take = options.per_paper.min(qualifying.len());
        let mut picked = sample(rng, qualifying.len(), take).into_vec();
        picked.sort_unstable();
        for p in picked {
            let (i, gt) = qualifying[p];
            set.items.push(EvalItem {
                case_id: format!("{}#{i}", paper.id),
                source_paper: paper.id.clone(),
                context: sentence_context(&paper.sentences, i),
                ground_truth_id: gt.to_string(),
            });
        }
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    NearestNeighbors,
    References,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::NearestNeighbors, Strategy::References];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::NearestNeighbors => "nearest_neighbors",
            Strategy::References => "references",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "random" => Ok(Strategy::Random),
            "nearest_neighbors" | "nearest" | "nn" => Ok(Strategy::NearestNeighbors),
            "references" | "refs" => Ok(Strategy::References),
            other => Err(EvalError::Input(format!(
                "unknown strategy '{other}' (random, nearest_neighbors, references)"
            ))),
        }
    }
}

/// The ground truth plus `n - 1` distractors for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub case_id: String,
    pub source_paper: String,
    pub context: ContextWindow,
    pub ground_truth_id: String,
    pub distractor_ids: Vec<String>,
    pub strategy: Strategy,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipReason {
    PoolTooSmall { available: usize, needed: usize },
    NotIndexed,
    TooFewNeighbors { available: usize, needed: usize },
    ThinReferences { available: usize, needed: usize },
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::PoolTooSmall { available, needed } => {
                write!(f, "random pool has {available} works, {needed} needed")
            }
            SkipReason::NotIndexed => f.write_str("ground truth is not in the index"),
            SkipReason::TooFewNeighbors { available, needed } => {
                write!(f, "{available} neighbours available, {needed} needed")
            }
            SkipReason::ThinReferences { available, needed } => {
                write!(f, "source paper has {available} other references, {needed} needed")
            }
        }
    }
}

/// What distractors are drawn from.
pub struct DistractorSource<'a> {
    pub corpus: &'a Corpus,
    pub index: &'a VectorIndex,
    /// Candidates for the random strategy.
    pub pool: &'a [String],
}

fn uniform<R: Rng + ?Sized>(from: &[String], k: usize, rng: &mut R) -> Vec<String> {
    let mut idx = sample(rng, from.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| from[i].clone()).collect()
}

fn neighbours(
    ground_truth: &str,
    need: usize,
    exclude: &HashSet<&str>,
    source: &DistractorSource<'_>,
) -> Result<Vec<String>, SkipReason> {
    let v = source.index.vector_of(ground_truth).ok_or(SkipReason::NotIndexed)?;
    let hits = source
        .index
        .query(&v, need + exclude.len() + 1)
        .map_err(|_| SkipReason::NotIndexed)?;
    Ok(hits
        .into_iter()
        .map(|n| n.work_id)
        .filter(|id| id != ground_truth && !exclude.contains(id.as_str()))
        .take(need)
        .collect())
}

/// Draws `n - 1` distinct distractors, never the ground truth. A thin
/// reference list is skipped, or topped up with nearest neighbours when
/// `backfill` is set.
#[allow(clippy::too_many_arguments)]
pub fn make_distractors<R: Rng + ?Sized>(
    ground_truth: &str,
    strategy: Strategy,
    n: usize,
    source: &DistractorSource<'_>,
    source_paper_refs: &[String],
    backfill: bool,
    rng: &mut R,
) -> Result<Vec<String>, SkipReason> {
    let need = n.saturating_sub(1);
    match strategy {
        Strategy::Random => {
            let mut seen = HashSet::new();
            let pool: Vec<String> = source
                .pool
                .iter()
                .filter(|id| id.as_str() != ground_truth && seen.insert(id.as_str()))
                .cloned()
                .collect();
            if pool.len() < need {
                return Err(SkipReason::PoolTooSmall { available: pool.len(), needed: need });
            }
            Ok(uniform(&pool, need, rng))
        }
        Strategy::NearestNeighbors => {
            let found = neighbours(ground_truth, need, &HashSet::new(), source)?;
            if found.len() < need {
                return Err(SkipReason::TooFewNeighbors { available: found.len(), needed: need });
            }
            Ok(found)
        }
        Strategy::References => {
            let mut seen = HashSet::new();
            let refs: Vec<String> = source_paper_refs
                .iter()
                .filter(|id| {
                    id.as_str() != ground_truth
                        && source.corpus.get(id).is_some()
                        && seen.insert(id.as_str())
                })
                .cloned()
                .collect();
            if refs.len() >= need {
                return Ok(uniform(&refs, need, rng));
            }
            if !backfill {
                return Err(SkipReason::ThinReferences { available: refs.len(), needed: need });
            }
            let exclude: HashSet<&str> = refs.iter().map(String::as_str).collect();
            let extra = neighbours(ground_truth, need - refs.len(), &exclude, source)?;
            if refs.len() + extra.len() < need {
                return Err(SkipReason::TooFewNeighbors {
                    available: refs.len() + extra.len(),
                    needed: need,
                });
            }
            Ok(refs.into_iter().chain(extra).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedCase {
    pub case_id: String,
    pub strategy: Strategy,
    pub n: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CasePlan {
    pub cases: Vec<EvalCase>,
    pub skipped: Vec<SkippedCase>,
}

/// Expands each item into one case per (strategy, n). Every case draws from
/// its own generator, so the plan does not depend on item order.
#[allow(clippy::too_many_arguments)]
pub fn build_cases(
    items: &[EvalItem],
    papers: &[SourcePaper],
    strategies: &[Strategy],
    ns: &[usize],
    source: &DistractorSource<'_>,
    backfill: bool,
    seed: u64,
) -> CasePlan {
    let refs: BTreeMap<&str, &[String]> = papers
        .iter()
        .map(|p| (p.id.as_str(), p.references.as_slice()))
        .collect();
    let mut plan = CasePlan::default();
    for &strategy in strategies {
        for &n in ns {
            for item in items {
                let mut rng = ChaCha8Rng::seed_from_u64(case_seed(seed, "distractors", strategy, n, &item.case_id));
                let paper_refs = refs.get(item.source_paper.as_str()).copied().unwrap_or(&[]);
                match make_distractors(&item.ground_truth_id, strategy, n, source, paper_refs, backfill, &mut rng) {
                    Ok(distractor_ids) => plan.cases.push(EvalCase {
                        case_id: item.case_id.clone(),
                        source_paper: item.source_paper.clone(),
                        context: item.context.clone(),
                        ground_truth_id: item.ground_truth_id.clone(),
                        distractor_ids,
                        strategy,
                        n,
                    }),
                    Err(reason) => plan.skipped.push(SkippedCase {
                        case_id: item.case_id.clone(),
                        strategy,
                        n,
                        reason,
                    }),
                }
            }
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Work;
    use crate::vectorindex::{Backend, EmbeddingVector, Metric};

    #[test]
    fn masking() {
        assert_eq!(mask_sentence("As shown \\cite{a, b} and \\citep[p.~3]{c}."), "As shown CITE-HERE and .");
        assert_eq!(mask_sentence("No marker."), "No marker. CITE-HERE");
        assert_eq!(strip_citations("Prior \\cite{x} work."), "Prior work.");
    }

    fn corpus(n: usize) -> Corpus {
        Corpus::new((0..n).map(|i| Work::new(format!("w{i}"), format!("Title {i}"))).collect()).unwrap()
    }

    fn paper(id: &str, qualifying: usize, corpus_size: usize) -> SourcePaper {
        SourcePaper {
            id: id.into(),
            sentences: (0..qualifying + 3)
                .map(|i| AnnotatedSentence {
                    text: format!("Sentence {i} \\cite{{k{i}}}."),
                    cited: if i < qualifying { vec!["missing".into(), format!("w{}", i % corpus_size)] } else { vec!["absent".into()] },
                })
                .collect(),
            references: vec![],
        }
    }

    #[test]
    fn thresholds_and_sampling() {
        let c = corpus(20);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = build_eval_set(&c, &[paper("p12", 12, 20), paper("p9", 9, 20)], &EvalSetOptions::default(), &mut rng);
        assert_eq!(set.items.len(), 5);
        assert_eq!(set.papers_excluded, 1);
        assert_eq!(set.papers_included, 1);
        let ids: HashSet<&str> = set.items.iter().map(|i| i.case_id.as_str()).collect();
        assert_eq!(ids.len(), 5);
        assert!(set.items.iter().all(|i| i.ground_truth_id.starts_with('w')));
    }

    fn index_for(c: &Corpus) -> VectorIndex {
        let items = c
            .works()
            .iter()
            .enumerate()
            .map(|(i, w)| (w.id.clone(), EmbeddingVector::new(vec![1.0, i as f32 * 0.01]).unwrap()))
            .collect();
        VectorIndex::build(2, items, Metric::Euclidean, Backend::Exact).unwrap()
    }

    #[test]
    fn forced_sets() {
        let c = corpus(6);
        let idx = index_for(&c);
        let pool: Vec<String> = vec!["w0".into(), "w1".into(), "w2".into()];
        let src = DistractorSource { corpus: &c, index: &idx, pool: &pool };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = make_distractors("w0", Strategy::Random, 3, &src, &[], false, &mut rng).unwrap();
        assert_eq!(d, ["w1", "w2"]);
        let refs: Vec<String> = ["w4", "w0", "w5"].iter().map(|s| s.to_string()).collect();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(make_distractors("w0", Strategy::References, 3, &src, &refs, false, &mut rng).unwrap(), ["w4", "w5"]);
        }
        let thin = make_distractors("w0", Strategy::References, 5, &src, &refs, false, &mut rng);
        assert_eq!(thin, Err(SkipReason::ThinReferences { available: 2, needed: 4 }));
        let filled = make_distractors("w0", Strategy::References, 5, &src, &refs, true, &mut rng).unwrap();
        assert_eq!(filled, ["w4", "w5", "w1", "w2"]);
        let mut nn = make_distractors("w3", Strategy::NearestNeighbors, 3, &src, &[], false, &mut rng).unwrap();
        nn.sort();
        assert_eq!(nn, ["w2", "w4"]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("sideways".parse::<Strategy>().is_err());
    }
}
