//! Exact text→image retrieval over the embedding space, replacement
//! selection, and the retrieved-bias and neutrality-gain metrics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::embedspace::{EmbeddingTable, EmbeddingVector, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasProvenance {
    GroundTruth,
    Estimated,
}

/// Supplies scores for images without a ground-truth score.
pub trait BiasEstimator {
    fn estimate(&self, image_id: &str) -> Result<f64>;
}

impl<F: Fn(&str) -> Result<f64>> BiasEstimator for F {
    fn estimate(&self, image_id: &str) -> Result<f64> {
        self(image_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    /// Unit-normalized.
    pub vector: Vec<f64>,
    /// `None` marks an entry flagged for estimation.
    pub bias: Option<f64>,
    pub provenance: BiasProvenance,
}

/// Immutable image index, entries in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

fn check_score(id: &str, s: f64) -> Result<f64> {
    if (-1.0..=1.0).contains(&s) {
        Ok(s)
    } else {
        Err(Error::validation(format!("bias score {s} of image `{id}` is outside [-1, 1]")))
    }
}

/// Indexes every image embedding in `table`. Images missing from `scores`
/// are flagged for estimation.
pub fn build_index(table: &EmbeddingTable, scores: &BTreeMap<String, f64>) -> Result<RetrievalIndex> {
    build_index_from(
        table.of_modality(Modality::Image).map(|(id, v)| (id.to_string(), v.to_vec())),
        scores,
    )
}

/// Builds an index from raw `(id, vector)` pairs.
pub fn build_index_from(
    vectors: impl IntoIterator<Item = (String, Vec<f64>)>,
    scores: &BTreeMap<String, f64>,
) -> Result<RetrievalIndex> {
    let mut entries = Vec::new();
    let mut dim = None;
    for (id, values) in vectors {
        let d = *dim.get_or_insert(values.len());
        if values.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: values.len(),
            });
        }
        let bias = scores.get(&id).map(|&s| check_score(&id, s)).transpose()?;
        let vector = EmbeddingVector::new(values, Modality::Image)?.normalized().values;
        entries.push(IndexEntry {
            provenance: if bias.is_some() { BiasProvenance::GroundTruth } else { BiasProvenance::Estimated },
            id,
            vector,
            bias,
        });
    }
    let Some(dim) = dim else {
        return Err(Error::validation("cannot build an index without image embeddings"));
    };
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    if entries.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::validation("duplicate image id in index"));
    }
    Ok(RetrievalIndex { dim, entries })
}

impl RetrievalIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Ids still flagged for estimation.
    pub fn unscored(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| e.bias.is_none()).map(|e| e.id.as_str()).collect()
    }

    /// Fills every flagged entry from `estimator`, marking it estimated.
    pub fn with_estimates(mut self, estimator: &dyn BiasEstimator) -> Result<Self> {
        for e in self.entries.iter_mut().filter(|e| e.bias.is_none()) {
            e.bias = Some(check_score(&e.id, estimator.estimate(&e.id)?)?);
        }
        Ok(self)
    }

    /// Unit-norm Euclidean distance from `query` to the entry at `id`.
    pub fn distance_to(&self, query: &TextQuery, id: &str) -> Option<f64> {
        self.get(id).map(|e| distance(&query.unit, &e.vector))
    }
}

/// A query text and its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TextQuery {
    pub text: String,
    unit: Vec<f64>,
}

impl TextQuery {
    pub fn new(text: impl Into<String>, vector: EmbeddingVector) -> Self {
        Self {
            text: text.into(),
            unit: vector.normalized().values,
        }
    }

    pub fn vector(&self) -> &[f64] {
        &self.unit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_text: String,
    pub image_id: String,
    pub distance: f64,
    pub image_bias: f64,
    pub bias_provenance: BiasProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    /// Ascending distance, ties by ascending image id.
    pub results: Vec<RetrievalResult>,
    /// Set when `k` exceeded the index size.
    pub truncated: bool,
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Heap key ordered by distance, then entry position (= id order).
#[derive(PartialEq)]
struct Key(f64, usize);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Exact top-`k` images by unit-norm Euclidean distance.
pub fn nearest_images(index: &RetrievalIndex, query: &TextQuery, k: usize) -> Result<Retrieval> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    if query.unit.len() != index.dim {
        return Err(Error::DimensionMismatch {
            expected: index.dim,
            actual: query.unit.len(),
        });
    }
    let mut heap: BinaryHeap<Key> = BinaryHeap::with_capacity(k + 1);
    for (i, e) in index.entries.iter().enumerate() {
        let key = Key(distance(&query.unit, &e.vector), i);
        if heap.len() < k {
            heap.push(key);
        } else if heap.peek().is_some_and(|top| key < *top) {
            heap.pop();
            heap.push(key);
        }
    }
    let results = heap
        .into_sorted_vec()
        .into_iter()
        .map(|Key(d, i)| {
            let e = &index.entries[i];
            let bias = e.bias.ok_or_else(|| {
                Error::state(format!("image `{}` has no bias score and no estimate was attached", e.id))
            })?;
            Ok(RetrievalResult {
                query_text: query.text.clone(),
                image_id: e.id.clone(),
                distance: d,
                image_bias: bias,
                bias_provenance: e.provenance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Retrieval {
        results,
        truncated: k > index.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplacementPolicy {
    /// Candidates considered, nearest first.
    pub k: usize,
    /// Keep the original image unless a candidate is strictly less biased.
    pub keep_original_guard: bool,
}

impl Default for ReplacementPolicy {
    fn default() -> Self {
        Self {
            k: 5,
            keep_original_guard: true,
        }
    }
}

/// The image the article currently carries.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginalImage<'a> {
    /// Index id, when the original image is indexed.
    pub id: Option<&'a str>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Selection {
    Replace(RetrievalResult),
    KeepOriginal { reason: String },
}

impl Selection {
    pub fn replacement(&self) -> Option<&RetrievalResult> {
        match self {
            Selection::Replace(r) => Some(r),
            Selection::KeepOriginal { .. } => None,
        }
    }
}

/// Picks the least biased image among the top-`k` matches (ties to the
/// nearer). Under the guard, a candidate replaces the original only if its
/// |bias| is smaller, or equal and it is strictly closer to the query than
/// the indexed original.
pub fn select_replacement(
    index: &RetrievalIndex,
    query: &TextQuery,
    original: &OriginalImage<'_>,
    policy: &ReplacementPolicy,
) -> Result<Selection> {
    if index.is_empty() {
        return Err(Error::validation("cannot select from an empty index"));
    }
    check_score("original", original.bias)?;
    let retrieval = nearest_images(index, query, policy.k)?;
    let best = retrieval
        .results
        .into_iter()
        .filter(|r| Some(r.image_id.as_str()) != original.id)
        .fold(None::<RetrievalResult>, |acc, r| match acc {
            Some(b) if b.image_bias.abs() <= r.image_bias.abs() => Some(b),
            _ => Some(r),
        });
    let Some(best) = best else {
        return Ok(Selection::KeepOriginal {
            reason: "no candidate other than the original image".into(),
        });
    };
    if !policy.keep_original_guard {
        return Ok(Selection::Replace(best));
    }
    let (new, old) = (best.image_bias.abs(), original.bias.abs());
    let closer = || {
        original
            .id
            .and_then(|id| index.distance_to(query, id))
            .is_some_and(|d| best.distance < d)
    };
    if new < old || (new == old && closer()) {
        Ok(Selection::Replace(best))
    } else {
        Ok(Selection::KeepOriginal {
            reason: format!("best candidate |bias| {new} does not improve on original {old}"),
        })
    }
}

/// Mean absolute bias.
pub fn mean_abs_bias(biases: &[f64]) -> Result<f64> {
    if biases.is_empty() {
        return Err(Error::UndefinedMean("no retrieved images".into()));
    }
    Ok(biases.iter().map(|b| b.abs()).sum::<f64>() / biases.len() as f64)
}

/// Mean of `|original| − |retrieved|` over `(original, retrieved)` pairs.
pub fn mean_neutrality_gain(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::UndefinedMean("no test pairs".into()));
    }
    Ok(pairs.iter().map(|(o, r)| o.abs() - r.abs()).sum::<f64>() / pairs.len() as f64)
}

fn top1(index: &RetrievalIndex, query: &TextQuery) -> Result<f64> {
    let r = nearest_images(index, query, 1)?;
    Ok(r.results[0].image_bias)
}

/// Average |bias| of the top-1 image retrieved for each test text.
pub fn avg_retrieved_bias(queries: &[TextQuery], index: &RetrievalIndex) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::UndefinedMean("empty test set".into()));
    }
    let biases = queries.iter().map(|q| top1(index, q)).collect::<Result<Vec<_>>>()?;
    mean_abs_bias(&biases)
}

/// Average `|b(original)| − |b(top-1 retrieval)|` over `(original bias, text)` pairs.
pub fn avg_neutrality_gain(pairs: &[(f64, TextQuery)], index: &RetrievalIndex) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::UndefinedMean("empty test set".into()));
    }
    let scored = pairs
        .iter()
        .map(|(o, q)| Ok((check_score("original", *o)?, top1(index, q)?)))
        .collect::<Result<Vec<_>>>()?;
    mean_neutrality_gain(&scored)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub avg_bias: f64,
    pub avg_gain: f64,
    pub n: usize,
}
