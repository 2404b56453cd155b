use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 200;
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticNeighborhood {
    pub anchor_id: String,
    /// Nearest first.
    pub neighbor_ids: Vec<String>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasNeighborhood {
    pub anchor_id: String,
    pub epsilon: f64,
    /// Ascending id order.
    pub member_ids: Vec<String>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` documents closest to `doc_id` in Euclidean distance, excluding
/// itself. Ties go to the lower id.
pub fn semantic_neighbors(
    doc_id: &str,
    reference: &BTreeMap<String, Vec<f64>>,
    k: usize,
) -> Result<SemanticNeighborhood> {
    let anchor = reference
        .get(doc_id)
        .ok_or_else(|| Error::NotFound(format!("document `{doc_id}`")))?;
    if reference.len() < 2 {
        return Err(Error::validation("semantic neighbors need at least two documents"));
    }
    let mut scored: Vec<(f64, &String)> = Vec::with_capacity(reference.len() - 1);
    for (id, v) in reference {
        if id == doc_id {
            continue;
        }
        if v.len() != anchor.len() {
            return Err(Error::DimensionMismatch {
                expected: anchor.len(),
                actual: v.len(),
            });
        }
        scored.push((squared_distance(anchor, v), id));
    }
    // BTreeMap iteration is id-ascending, so a stable sort keeps the tie rule.
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.truncate(k);
    Ok(SemanticNeighborhood {
        anchor_id: doc_id.to_string(),
        neighbor_ids: scored.into_iter().map(|(_, id)| id.clone()).collect(),
        k,
    })
}

fn sample<'a, R: Rng + ?Sized>(ids: &'a [String], anchor: &str, rng: &mut R) -> Result<&'a str> {
    ids.choose(rng)
        .map(String::as_str)
        .ok_or_else(|| Error::EmptySample(format!("neighborhood of `{anchor}` is empty")))
}

/// Uniform draw from the semantic neighborhood.
pub fn sample_positive<'a, R: Rng + ?Sized>(neigh: &'a SemanticNeighborhood, rng: &mut R) -> Result<&'a str> {
    sample(&neigh.neighbor_ids, &neigh.anchor_id, rng)
}

/// Ids other than the anchor whose score lies within `epsilon` of the
/// anchor's score.
pub fn bias_neighborhood(
    anchor_id: &str,
    scores: &BTreeMap<String, f64>,
    epsilon: f64,
) -> Result<BiasNeighborhood> {
    let &b = scores
        .get(anchor_id)
        .ok_or_else(|| Error::NotFound(format!("no bias score for `{anchor_id}`")))?;
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::validation("epsilon must be finite and non-negative"));
    }
    Ok(BiasNeighborhood {
        anchor_id: anchor_id.to_string(),
        epsilon,
        member_ids: scores
            .iter()
            .filter(|&(id, &s)| id != anchor_id && (s - b).abs() <= epsilon)
            .map(|(id, _)| id.clone())
            .collect(),
    })
}

/// Uniform draw from the bias neighborhood of `anchor_id`.
pub fn sample_bias_positive<'a, R: Rng + ?Sized>(
    anchor_id: &str,
    neigh: &'a BiasNeighborhood,
    rng: &mut R,
) -> Result<&'a str> {
    if neigh.anchor_id != anchor_id {
        return Err(Error::validation(format!(
            "neighborhood belongs to `{}`, not `{anchor_id}`",
            neigh.anchor_id
        )));
    }
    sample(&neigh.member_ids, anchor_id, rng)
}
