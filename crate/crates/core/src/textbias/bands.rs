use serde::{Deserialize, Serialize};

use super::TokenBias;
use crate::error::{Error, Result};

/// Display band of a token's bias probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasBand {
    None,
    Low,
    Mid,
    High,
    /// The single most biased token of the sentence.
    Max,
}

impl BiasBand {
    /// Band of a probability, ignoring rank.
    pub fn of_probability(p: f64) -> Self {
        if p > 0.9 {
            BiasBand::High
        } else if p > 0.75 {
            BiasBand::Mid
        } else if p > 0.5 {
            BiasBand::Low
        } else {
            BiasBand::None
        }
    }
}

/// Assigns each prediction a band. The highest-probability token (lowest
/// index on ties) is always `Max`, whatever its probability.
pub fn classify_band(predictions: &[TokenBias]) -> Result<Vec<BiasBand>> {
    let top = argmax_lowest(predictions.iter().map(|p| p.probability))
        .ok_or_else(|| Error::validation("no predictions to classify"))?;
    Ok(predictions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i == top {
                BiasBand::Max
            } else {
                BiasBand::of_probability(p.probability)
            }
        })
        .collect())
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax_lowest(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}
