use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textbias::{argmax_lowest, Token, TokenBias, MASK};

/// Which words get masked before infilling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    /// Words whose probability strictly exceeds this are masked.
    pub threshold: f64,
    /// Mask the single most biased word when nothing clears the threshold.
    pub fallback_top1: bool,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            fallback_top1: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedSentence {
    /// Input tokens with every masked piece replaced by the mask sentinel.
    pub tokens: Vec<Token>,
    /// Strictly increasing token positions that were masked.
    pub mask_positions: Vec<usize>,
    /// The tokens originally at `mask_positions`.
    pub original_tokens: Vec<Token>,
}

impl MaskedSentence {
    /// Word indices touched by the mask, ascending and deduplicated.
    pub fn masked_words(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.original_tokens.iter().map(|t| t.word_index).collect();
        w.dedup();
        w
    }
}

/// Masks biased words. All pieces of a masked word are masked together.
pub fn mask_biased(
    tokens: &[Token],
    predictions: &[TokenBias],
    policy: &MaskPolicy,
    mask_id: usize,
) -> Result<MaskedSentence> {
    if tokens.is_empty() {
        return Err(Error::validation("cannot mask an empty token sequence"));
    }
    if predictions.len() != tokens.len()
        || predictions
            .iter()
            .zip(tokens)
            .any(|(p, t)| p.word_index != t.word_index)
    {
        return Err(Error::validation("predictions do not align with tokens"));
    }
    let words = select_words(predictions, policy);
    mask_words(tokens, &words, mask_id)
}

/// Word indices chosen by `policy`, ascending.
pub fn select_words(predictions: &[TokenBias], policy: &MaskPolicy) -> Vec<usize> {
    let n_words = predictions.iter().map(|p| p.word_index + 1).max().unwrap_or(0);
    let mut word_prob = vec![f64::NEG_INFINITY; n_words];
    for p in predictions {
        word_prob[p.word_index] = word_prob[p.word_index].max(p.probability);
    }
    let mut chosen: Vec<bool> = word_prob.iter().map(|&p| p > policy.threshold).collect();
    if !chosen.iter().any(|&c| c) && policy.fallback_top1 {
        if let Some(top) = argmax_lowest(word_prob.iter().copied()) {
            chosen[top] = true;
        }
    }
    (0..n_words).filter(|&w| chosen[w]).collect()
}

/// Masks every piece of the listed words.
pub fn mask_words(tokens: &[Token], words: &[usize], mask_id: usize) -> Result<MaskedSentence> {
    let mut masked = tokens.to_vec();
    let mut mask_positions = Vec::new();
    let mut original_tokens = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if words.contains(&t.word_index) {
            mask_positions.push(i);
            original_tokens.push(t.clone());
            masked[i] = Token {
                text: MASK.to_string(),
                id: mask_id,
                word_index: t.word_index,
            };
        }
    }
    if mask_positions.is_empty() {
        return Err(Error::validation("no tokens were masked"));
    }
    Ok(MaskedSentence {
        tokens: masked,
        mask_positions,
        original_tokens,
    })
}
