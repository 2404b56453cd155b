//! Token-level bias detection: subword tokenization, edit-diff labels,
//! a trainable tagger and probability bands for reporting.

mod bands;
mod labels;
mod tagger;
mod tokenizer;

use serde::{Deserialize, Serialize};

pub use bands::{classify_band, BiasBand};
pub use labels::{derive_diff_labels, LabeledToken};
pub use tagger::{diff_recall_at_k, train_tagger, TaggerConfig, TaggerModel, TrainReport};
pub use tokenizer::{detokenize, merge_words, Token, Tokenizer, MASK, PAD, UNK};

pub(crate) use bands::argmax_lowest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBias {
    pub token: String,
    /// Position in the token sequence.
    pub index: usize,
    pub word_index: usize,
    pub probability: f64,
}

/// Word indices of the `k` most biased words, most biased first. Ties are
/// broken by lower word index.
pub fn top_k_words(predictions: &[TokenBias], k: usize) -> Vec<usize> {
    let mut words: Vec<(usize, f64)> = Vec::new();
    for p in predictions {
        if words.last().is_none_or(|&(w, _)| w != p.word_index) {
            words.push((p.word_index, p.probability));
        }
    }
    words.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    words.into_iter().take(k).map(|(w, _)| w).collect()
}
