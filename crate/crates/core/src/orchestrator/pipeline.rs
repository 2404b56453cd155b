use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Article;
use crate::embedspace::DualEncoder;
use crate::error::{Error, Result};
use crate::imagescore::BiasRegressor;
use crate::neutralize::{
    apply_replacements, encode_image_tokens, mask_words, select_words, InfillModel, MaskPolicy, PatchTokenizer,
    Replacement,
};
use crate::retrieval::{select_replacement, OriginalImage, ReplacementPolicy, RetrievalIndex, Selection, TextQuery};
use crate::text::words;
use crate::textbias::TaggerModel;

pub const STAGES: [&str; 4] = ["detect", "neutralize", "embed", "retrieve"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mask: MaskPolicy,
    pub replacement: ReplacementPolicy,
}

/// Everything `debias_article` needs.
pub struct StageModels {
    pub tagger: TaggerModel,
    pub infill: InfillModel,
    pub image_tokenizer: PatchTokenizer,
    pub space: DualEncoder,
    pub index: RetrievalIndex,
    /// Index id → image file.
    pub image_paths: BTreeMap<String, PathBuf>,
    pub regressor: Option<BiasRegressor>,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasedArticle {
    pub original: Article,
    pub neutralized_text: String,
    pub replacements: Vec<Replacement>,
    pub original_image_bias: f64,
    pub replacement_image: Selection,
    /// File of the replacement image, when one was selected.
    pub replacement_image_path: Option<PathBuf>,
    pub trace: Vec<StageRecord>,
}

struct Trace {
    records: Vec<StageRecord>,
}

impl Trace {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<(T, String)>) -> Result<T> {
        match f() {
            Ok((value, summary)) => {
                log::debug!("{stage}: {summary}");
                self.records.push(StageRecord {
                    stage: stage.to_string(),
                    summary,
                });
                Ok(value)
            }
            Err(cause) => Err(Error::Stage {
                stage,
                completed: STAGES[..self.records.len()].to_vec(),
                cause: Box::new(cause),
            }),
        }
    }
}

/// Runs detect → neutralize → embed → retrieve on one article. Image paths
/// are resolved against `image_root`. A missing original image keeps the
/// original and infills from text alone.
pub fn debias_article(article: &Article, image_root: &Path, models: &StageModels) -> Result<DebiasedArticle> {
    let mut trace = Trace { records: Vec::new() };
    let image_path = image_root.join(&article.image_ref);
    let image_present = image_path.is_file();

    let predictions = trace.run("detect", || {
        let p = models.tagger.predict_token_bias(&article.text)?;
        let top = p.iter().map(|t| t.probability).fold(0.0, f64::max);
        let summary = format!("{} tokens, max probability {top:.3}", p.len());
        Ok((p, summary))
    })?;

    let (neutralized_text, replacements) = trace.run("neutralize", || {
        let chosen = select_words(&predictions, &models.config.mask);
        let ws = words(&article.text);
        let tokens = models.infill.tokenizer().tokenize_words(&ws);
        let masked = mask_words(&tokens, &chosen, models.infill.tokenizer().mask_id())?;
        let image = encode_image_tokens(&image_path, &models.image_tokenizer)?;
        let reps = models.infill.predict_replacements(&masked, &image)?;
        let text = apply_replacements(&masked, &reps).join(" ");
        let summary = format!(
            "masked words {chosen:?}{}",
            if image.missing { ", text-only infill" } else { "" }
        );
        Ok(((text, reps), summary))
    })?;

    let query = trace.run("embed", || {
        let v = models.space.encode_text(&neutralized_text)?;
        Ok((TextQuery::new(neutralized_text.clone(), v), format!("dim {}", models.space.config().dim)))
    })?;

    let original_bias = article.source_score.value();
    let selection = trace.run("retrieve", || {
        let s = if image_present {
            let original = OriginalImage {
                id: models.index.get(&article.id).map(|_| article.id.as_str()),
                bias: original_bias,
            };
            select_replacement(&models.index, &query, &original, &models.config.replacement)?
        } else {
            Selection::KeepOriginal {
                reason: format!("original image missing: {}", image_path.display()),
            }
        };
        let summary = match &s {
            Selection::Replace(r) => format!("replace with `{}` (bias {:.3})", r.image_id, r.image_bias),
            Selection::KeepOriginal { reason } => format!("keep original: {reason}"),
        };
        Ok((s, summary))
    })?;

    Ok(DebiasedArticle {
        original: article.clone(),
        neutralized_text,
        replacements,
        original_image_bias: original_bias,
        replacement_image_path: selection
            .replacement()
            .and_then(|r| models.image_paths.get(&r.image_id).cloned()),
        replacement_image: selection,
        trace: trace.records,
    })
}

impl DebiasedArticle {
    /// Bias of the image the article ends up with.
    pub fn final_image_bias(&self) -> f64 {
        self.replacement_image
            .replacement()
            .map_or(self.original_image_bias, |r| r.image_bias)
    }
}
