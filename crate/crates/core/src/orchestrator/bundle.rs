use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::{PipelineConfig, StageModels};
use crate::corpus::{Article, NeutralityPair};
use crate::embedspace::{train_space, BagOfWordsEmbedder, DualEncoder, EmbeddingTable, SpaceConfig, SpaceItem};
use crate::error::{Error, Result};
use crate::imagescore::{fine_tune, BiasRegressor, FineTuneConfig, LabeledImage};
use crate::imaging::{features_from_path, load_rgb};
use crate::neutralize::{ImageTokenizer, InfillConfig, InfillModel, NeutralExample, PatchTokenizer};
use crate::retrieval::{build_index, RetrievalIndex};
use crate::textbias::{train_tagger, TaggerConfig, TaggerModel, Tokenizer};

/// Articles whose |bias| is at most this count as neutral infill examples.
pub const NEUTRAL_BAND: f64 = 0.1;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleConfig {
    pub tagger: TaggerConfig,
    pub infill: InfillConfig,
    pub space: SpaceConfig,
    /// Fine-tune a regressor for unscored images when set.
    pub regressor: Option<FineTuneConfig>,
    pub pipeline: PipelineConfig,
}

impl BundleConfig {
    /// Small models for demos and tests.
    pub fn tiny() -> Self {
        Self {
            tagger: TaggerConfig {
                epochs: 10,
                learning_rate: 1e-3,
                ..TaggerConfig::tiny()
            },
            infill: InfillConfig::tiny(),
            space: SpaceConfig {
                epochs: 60,
                k: 20,
                ..SpaceConfig::default()
            },
            regressor: Some(FineTuneConfig::default()),
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Trains every stage model. Articles' images are resolved against
/// `corpus_dir`; articles without an image file are left out of the space.
pub fn train_bundle(
    articles: &[Article],
    corpus_dir: &Path,
    pairs: &[NeutralityPair],
    config: &BundleConfig,
) -> Result<StageModels> {
    let (tagger, report) = train_tagger(pairs, config.tagger.clone())?;
    log::info!("tagger loss {:?}", report.epoch_losses.last());

    let image_tokenizer = PatchTokenizer::new(4, config.infill.image_dim, 0x1a6e);
    let mut examples: Vec<NeutralExample> = pairs
        .iter()
        .map(|p| NeutralExample {
            text: p.neutral_text(),
            image: None,
        })
        .collect();
    let mut items = Vec::new();
    let mut image_paths = BTreeMap::new();
    let mut scores = BTreeMap::new();
    for a in articles {
        let path = corpus_dir.join(&a.image_ref);
        if !path.is_file() {
            log::warn!("article `{}`: image {} missing; not indexed", a.id, path.display());
            continue;
        }
        let bias = a.source_score.value();
        if bias.abs() <= NEUTRAL_BAND {
            examples.push(NeutralExample {
                text: a.text.clone(),
                image: Some(image_tokenizer.tokens(&load_rgb(&path)?)),
            });
        }
        items.push(SpaceItem {
            id: a.id.clone(),
            text: a.text.clone(),
            image: features_from_path(&path)?,
            bias: Some(bias),
        });
        scores.insert(a.id.clone(), bias);
        image_paths.insert(a.id.clone(), path);
    }
    let vocab: Vec<String> = pairs
        .iter()
        .flat_map(|p| [p.biased_text(), p.neutral_text()])
        .chain(articles.iter().map(|a| a.text.clone()))
        .collect();
    let mut infill = InfillModel::new(
        config.infill.clone(),
        Tokenizer::build(vocab.iter().map(String::as_str), config.infill.min_count),
    )?;
    infill.fit(&examples)?;

    let trained = train_space(&items, &BagOfWordsEmbedder::default(), &config.space)?;
    let index = build_index(&trained.table, &scores)?;
    let regressor = match &config.regressor {
        Some(cfg) => {
            let mut model = BiasRegressor::from_space(&trained.encoder, cfg.seed);
            let labeled: Vec<LabeledImage> = items
                .iter()
                .map(|i| LabeledImage {
                    features: i.image.clone(),
                    score: i.bias.expect("indexed items are scored"),
                })
                .collect();
            fine_tune(&mut model, &labeled, cfg)?;
            Some(model)
        }
        None => None,
    };
    Ok(StageModels {
        tagger,
        infill,
        image_tokenizer,
        space: trained.encoder,
        index,
        image_paths,
        regressor,
        config: config.pipeline,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    pipeline: PipelineConfig,
    image_tokenizer: PatchTokenizer,
    image_paths: BTreeMap<String, PathBuf>,
    has_regressor: bool,
}

const BUNDLE_FORMAT: &str = "debias.bundle.v1";

pub const TAGGER_FILE: &str = "tagger.json";
pub const INFILL_FILE: &str = "infill.json";
pub const SPACE_FILE: &str = "space.json";
pub const TABLE_FILE: &str = "table.emb";
/// Ground-truth image scores, id → bias.
pub const SCORES_FILE: &str = "scores.json";
pub const REGRESSOR_FILE: &str = "regressor.json";
pub const MANIFEST_FILE: &str = "bundle.json";

impl StageModels {
    /// Writes every model and the image index into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.tagger.save(dir.join(TAGGER_FILE))?;
        self.infill.save(dir.join(INFILL_FILE))?;
        self.space.save(dir.join(SPACE_FILE))?;
        let mut table = EmbeddingTable::new(self.index.dim());
        for e in self.index.entries() {
            table.insert(
                &e.id,
                crate::embedspace::EmbeddingVector::new(e.vector.clone(), crate::embedspace::Modality::Image)?,
            )?;
        }
        table.save(dir.join(TABLE_FILE))?;
        let scores: BTreeMap<&str, f64> = self
            .index
            .entries()
            .iter()
            .filter(|e| e.provenance == crate::retrieval::BiasProvenance::GroundTruth)
            .filter_map(|e| e.bias.map(|b| (e.id.as_str(), b)))
            .collect();
        write_scores(dir.join(SCORES_FILE), &scores)?;
        if let Some(r) = &self.regressor {
            r.save(dir.join(REGRESSOR_FILE))?;
        }
        let manifest = Manifest {
            format: BUNDLE_FORMAT.into(),
            pipeline: self.config,
            image_tokenizer: self.image_tokenizer.clone(),
            image_paths: self.image_paths.clone(),
            has_regressor: self.regressor.is_some(),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(MANIFEST_FILE))?), &manifest)?;
        Ok(())
    }

    /// Loads a bundle written by [`StageModels::save`]. Indexed images
    /// without a score are estimated by the regressor when one is present.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST_FILE))?))?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(Error::validation(format!("not a model bundle (format `{}`)", manifest.format)));
        }
        let regressor = if manifest.has_regressor {
            Some(BiasRegressor::load(dir.join(REGRESSOR_FILE))?)
        } else {
            None
        };
        let table = EmbeddingTable::load(dir.join(TABLE_FILE))?;
        let mut index = build_index(&table, &read_scores(dir.join(SCORES_FILE))?)?;
        if let Some(r) = &regressor {
            if !index.unscored().is_empty() {
                index = attach_estimates(index, r, &manifest.image_paths)?;
            }
        }
        Ok(Self {
            tagger: TaggerModel::load(dir.join(TAGGER_FILE))?,
            infill: InfillModel::load(dir.join(INFILL_FILE))?,
            image_tokenizer: manifest.image_tokenizer,
            space: DualEncoder::load(dir.join(SPACE_FILE))?,
            index,
            image_paths: manifest.image_paths,
            regressor,
            config: manifest.pipeline,
        })
    }
}

/// Scores flagged index entries with `regressor`, reading each image from
/// `paths`.
pub fn attach_estimates(
    index: RetrievalIndex,
    regressor: &BiasRegressor,
    paths: &BTreeMap<String, PathBuf>,
) -> Result<RetrievalIndex> {
    let estimate = |id: &str| -> Result<f64> {
        let path = paths
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("image file for `{id}`")))?;
        crate::imagescore::predict_bias_path(regressor, path)
    };
    index.with_estimates(&estimate)
}

pub fn write_scores(path: impl AsRef<Path>, scores: &BTreeMap<&str, f64>) -> Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), scores)?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
