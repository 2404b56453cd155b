//! Masks biased words, infills neutral replacements conditioned on image
//! tokens, and scores replacements with word-vector cosine similarity.

mod image_tokens;
mod infill;
mod mask;
mod wordvec;

pub use image_tokens::{encode_image_tokens, ImageTokenizer, ImageTokens, PatchTokenizer};
pub use infill::{
    apply_replacements, train_infill, InfillConfig, InfillModel, NeutralExample, Replacement,
};
pub use mask::{mask_biased, mask_words, select_words, MaskPolicy, MaskedSentence};
pub use wordvec::{cosine_similarity, evaluate_neutralization, NeutralizationReport, WordVectorTable};
