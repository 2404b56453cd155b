//! End-to-end debiasing: detection, neutralization, embedding and image
//! retrieval, plus the human-evaluation session.

mod bundle;
mod judgments;
mod pipeline;
mod session;

pub use bundle::{
    attach_estimates, read_scores, train_bundle, write_scores, BundleConfig, INFILL_FILE, MANIFEST_FILE,
    NEUTRAL_BAND, REGRESSOR_FILE, SCORES_FILE, SPACE_FILE, TABLE_FILE, TAGGER_FILE,
};
pub use judgments::{
    aggregate_judgments, JudgmentRecord, JudgmentReport, JudgmentStore, JudgmentSummary, MAX_FLUENCY, MIN_FLUENCY,
};
pub use pipeline::{debias_article, DebiasedArticle, PipelineConfig, StageModels, StageRecord, STAGES};
pub use session::{load_pairs, sample_pairs, write_pairs, EvalPair, EvalSession, PairSide};
