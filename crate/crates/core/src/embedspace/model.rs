use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::docembed::DocEmbedder;
use super::loss::{AngularObjective, LossConfig};
use super::neighbors::{bias_neighborhood, semantic_neighbors, DEFAULT_EPSILON, DEFAULT_K};
use super::table::{EmbeddingTable, EmbeddingVector, Modality};
use crate::error::{Error, Result};
use crate::imaging::FEATURE_DIM;
use crate::nn::{normal_init, Adam, Graph, Mat, Mlp, ParamId, ParamStore, TripletObjective, Var};
use crate::textbias::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    /// Output embedding dimension.
    pub dim: usize,
    pub hidden: usize,
    pub min_count: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Anchors per optimizer step.
    pub batch_size: usize,
    /// Semantic neighborhood size.
    pub k: usize,
    /// Bias neighborhood half-width.
    pub epsilon: f64,
    pub loss: LossConfig,
    /// Add text-anchor / own-image-positive triplets so text queries land
    /// near their images.
    pub cross_modal: bool,
    /// L2-normalize vectors written to the embedding table.
    pub unit_norm: bool,
    pub seed: u64,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            hidden: 64,
            min_count: 1,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 32,
            k: DEFAULT_K,
            epsilon: DEFAULT_EPSILON,
            loss: LossConfig::default(),
            cross_modal: true,
            unit_norm: true,
            seed: 0,
        }
    }
}

impl SpaceConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.dim == 0 || self.hidden == 0 || self.batch_size == 0 || self.k == 0 {
            return Err(Error::validation("space sizes must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::validation("learning rate must be finite and non-negative"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::validation("epsilon must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One training document: text, its image's pixel features and the image's
/// bias score.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceItem {
    pub id: String,
    pub text: String,
    pub image: Vec<f64>,
    pub bias: Option<f64>,
}

/// Text and image encoders mapping into one space.
///
/// Text: mean of token embeddings, then an MLP. Image: an MLP over pixel
/// features. Parameters are named `text.*` and `image.*`.
pub struct DualEncoder {
    config: SpaceConfig,
    tokenizer: Tokenizer,
    params: ParamStore,
    text_tokens: ParamId,
    text_mlp: Mlp,
    image_mlp: Mlp,
}

pub const IMAGE_PREFIX: &str = "image";
pub const IMAGE_DEPTH: usize = 2;

impl DualEncoder {
    pub fn new(config: SpaceConfig, tokenizer: Tokenizer) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let text_tokens = params.add("text.tok", normal_init(tokenizer.vocab_size(), config.hidden, 0.5, &mut rng));
        let text_mlp = Mlp::init(&mut params, "text.mlp", &[config.hidden, config.hidden, config.dim], &mut rng);
        let image_mlp = Mlp::init(&mut params, IMAGE_PREFIX, &[FEATURE_DIM, config.hidden, config.dim], &mut rng);
        Ok(Self {
            config,
            tokenizer,
            params,
            text_tokens,
            text_mlp,
            image_mlp,
        })
    }

    pub fn config(&self) -> &SpaceConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    /// Row-normalized token-count matrix for `texts`.
    fn bag(&self, texts: &[&str]) -> Result<Mat> {
        let mut m = Mat::zeros((texts.len(), self.tokenizer.vocab_size()));
        for (r, text) in texts.iter().enumerate() {
            let toks = self.tokenizer.tokenize(text)?;
            let w = 1.0 / toks.len() as f64;
            for t in toks {
                m[[r, t.id]] += w;
            }
        }
        Ok(m)
    }

    fn text_forward(&self, g: &mut Graph, bag: Mat) -> Var {
        let c = g.constant(bag);
        let e = g.param(self.text_tokens);
        let pooled = g.matmul(c, e);
        self.text_mlp.forward(g, pooled)
    }

    fn image_forward(&self, g: &mut Graph, features: Mat) -> Var {
        let x = g.constant(features);
        self.image_mlp.forward(g, x)
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != FEATURE_DIM {
            return Err(Error::DimensionMismatch {
                expected: FEATURE_DIM,
                actual: features.len(),
            });
        }
        Ok(())
    }

    /// Raw (unnormalized) text embeddings, one row per text.
    pub fn embed_texts(&self, texts: &[&str]) -> Result<Mat> {
        let bag = self.bag(texts)?;
        let mut g = Graph::new(&self.params);
        let out = self.text_forward(&mut g, bag);
        Ok(g.value(out).clone())
    }

    /// Raw image embeddings, one row per feature vector.
    pub fn embed_images(&self, features: &[&[f64]]) -> Result<Mat> {
        let mut m = Mat::zeros((features.len(), FEATURE_DIM));
        for (r, f) in features.iter().enumerate() {
            self.check_features(f)?;
            m.row_mut(r).assign(&ndarray::ArrayView1::from(*f));
        }
        let mut g = Graph::new(&self.params);
        let out = self.image_forward(&mut g, m);
        Ok(g.value(out).clone())
    }

    fn finish(&self, values: Vec<f64>, modality: Modality) -> Result<EmbeddingVector> {
        let v = EmbeddingVector::new(values, modality)?;
        Ok(if self.config.unit_norm { v.normalized() } else { v })
    }

    /// Text embedding as stored in the table (unit-normalized if configured).
    pub fn encode_text(&self, text: &str) -> Result<EmbeddingVector> {
        let m = self.embed_texts(&[text])?;
        self.finish(m.row(0).to_vec(), Modality::Text)
    }

    pub fn encode_image(&self, features: &[f64]) -> Result<EmbeddingVector> {
        let m = self.embed_images(&[features])?;
        self.finish(m.row(0).to_vec(), Modality::Image)
    }

    /// Embeds both modalities of every item.
    pub fn table(&self, items: &[SpaceItem]) -> Result<EmbeddingTable> {
        let texts: Vec<&str> = items.iter().map(|i| i.text.as_str()).collect();
        let images: Vec<&[f64]> = items.iter().map(|i| i.image.as_slice()).collect();
        let (t, im) = (self.embed_texts(&texts)?, self.embed_images(&images)?);
        let mut table = EmbeddingTable::new(self.config.dim);
        for (r, item) in items.iter().enumerate() {
            table.insert(&item.id, self.finish(t.row(r).to_vec(), Modality::Text)?)?;
            table.insert(&item.id, self.finish(im.row(r).to_vec(), Modality::Image)?)?;
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ckpt = SpaceCheckpoint {
            format: SPACE_FORMAT.into(),
            config: self.config.clone(),
            tokenizer: self.tokenizer.clone(),
            params: self.params.clone(),
        };
        serde_json::to_writer(BufWriter::new(File::create(path)?), &ckpt)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: SpaceCheckpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ckpt.format != SPACE_FORMAT {
            return Err(Error::validation(format!("not a space checkpoint (format `{}`)", ckpt.format)));
        }
        let text_tokens = ckpt
            .params
            .id("text.tok")
            .ok_or_else(|| Error::validation("checkpoint lacks `text.tok`"))?;
        Ok(Self {
            text_mlp: Mlp::bind(&ckpt.params, "text.mlp", 2)?,
            image_mlp: Mlp::bind(&ckpt.params, IMAGE_PREFIX, IMAGE_DEPTH)?,
            text_tokens,
            config: ckpt.config,
            tokenizer: ckpt.tokenizer,
            params: ckpt.params,
        })
    }
}

const SPACE_FORMAT: &str = "debias.space.v1";

#[derive(Serialize, Deserialize)]
struct SpaceCheckpoint {
    format: String,
    config: SpaceConfig,
    tokenizer: Tokenizer,
    params: ParamStore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub epoch: usize,
    /// Mean semantic angular loss over image, text and cross-modal triplets.
    pub semantic: f64,
    /// Mean bias angular loss, before weighting.
    pub bias: f64,
    /// `semantic + bias_weight × bias`; the bias term is omitted entirely at
    /// weight zero.
    pub total: f64,
}

pub struct SpaceTraining {
    pub encoder: DualEncoder,
    pub table: EmbeddingTable,
    pub history: Vec<StepLoss>,
}

/// Per-anchor sampling pools, as item indices.
struct Pools {
    neighbors: Vec<Vec<usize>>,
    non_neighbors: Vec<Vec<usize>>,
    bias_members: Vec<Vec<usize>>,
    bias_negatives: Vec<Vec<usize>>,
}

fn validate_items(items: &[SpaceItem]) -> Result<Vec<f64>> {
    if items.len() < 2 {
        return Err(Error::validation("space training needs at least two items"));
    }
    let mut seen = HashSet::new();
    let mut scores = Vec::with_capacity(items.len());
    for item in items {
        if !seen.insert(item.id.as_str()) {
            return Err(Error::validation(format!("duplicate item id `{}`", item.id)));
        }
        if item.image.len() != FEATURE_DIM {
            return Err(Error::DimensionMismatch {
                expected: FEATURE_DIM,
                actual: item.image.len(),
            });
        }
        match item.bias {
            Some(b) if (-1.0..=1.0).contains(&b) => scores.push(b),
            Some(b) => return Err(Error::validation(format!("bias score {b} of `{}` is outside [-1, 1]", item.id))),
            None => return Err(Error::validation(format!("image `{}` has no bias score", item.id))),
        }
    }
    Ok(scores)
}

fn build_pools(items: &[SpaceItem], scores: &[f64], embedder: &dyn DocEmbedder, cfg: &SpaceConfig) -> Result<Pools> {
    let index: HashMap<&str, usize> = items.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
    let reference: BTreeMap<String, Vec<f64>> =
        items.iter().map(|it| (it.id.clone(), embedder.embed(&it.text))).collect();
    let score_map: BTreeMap<String, f64> = items.iter().zip(scores).map(|(it, &s)| (it.id.clone(), s)).collect();
    let n = items.len();
    let mut pools = Pools {
        neighbors: Vec::with_capacity(n),
        non_neighbors: Vec::with_capacity(n),
        bias_members: Vec::with_capacity(n),
        bias_negatives: Vec::with_capacity(n),
    };
    for (a, item) in items.iter().enumerate() {
        let neigh: Vec<usize> = semantic_neighbors(&item.id, &reference, cfg.k)?
            .neighbor_ids
            .iter()
            .map(|id| index[id.as_str()])
            .collect();
        let neigh_set: HashSet<usize> = neigh.iter().copied().collect();
        let members: Vec<usize> = bias_neighborhood(&item.id, &score_map, cfg.epsilon)?
            .member_ids
            .iter()
            .map(|id| index[id.as_str()])
            .collect();
        let outside = |i: &usize| *i != a && (scores[*i] - scores[a]).abs() > cfg.epsilon;
        let local: Vec<usize> = neigh.iter().copied().filter(outside).collect();
        let negatives = if local.is_empty() { (0..n).filter(outside).collect() } else { local };
        pools.non_neighbors.push((0..n).filter(|i| *i != a && !neigh_set.contains(i)).collect());
        pools.neighbors.push(neigh);
        pools.bias_members.push(members);
        pools.bias_negatives.push(negatives);
    }
    Ok(pools)
}

/// Uniform negative outside the anchor's neighborhood, falling back to any
/// item other than the anchor and positive.
fn semantic_negative(pools: &Pools, a: usize, p: usize, n: usize, rng: &mut ChaCha8Rng) -> usize {
    if let Some(&x) = pools.non_neighbors[a].choose(rng) {
        return x;
    }
    let others: Vec<usize> = (0..n).filter(|&i| i != a && i != p).collect();
    *others.choose(rng).unwrap_or(&p)
}

#[derive(Default)]
struct Triplets {
    a: Vec<usize>,
    p: Vec<usize>,
    n: Vec<usize>,
}

impl Triplets {
    fn push(&mut self, a: usize, p: usize, n: usize) {
        self.a.push(a);
        self.p.push(p);
        self.n.push(n);
    }

    fn len(&self) -> usize {
        self.a.len()
    }
}

/// Trains the dual encoder with semantic angular triplets (image, text and
/// optionally cross-modal) plus `bias_weight` × image bias triplets.
pub fn train_space(items: &[SpaceItem], embedder: &dyn DocEmbedder, config: &SpaceConfig) -> Result<SpaceTraining> {
    config.validate()?;
    let scores = validate_items(items)?;
    let pools = build_pools(items, &scores, embedder, config)?;
    let tokenizer = Tokenizer::build(items.iter().map(|i| i.text.as_str()), config.min_count);
    let mut encoder = DualEncoder::new(config.clone(), tokenizer)?;

    let n = items.len();
    let texts: Vec<&str> = items.iter().map(|i| i.text.as_str()).collect();
    let bag = encoder.bag(&texts)?;
    let mut features = Mat::zeros((n, FEATURE_DIM));
    for (r, it) in items.iter().enumerate() {
        features.row_mut(r).assign(&ndarray::ArrayView1::from(&it.image[..]));
    }
    let objective: Arc<dyn TripletObjective> = Arc::new(AngularObjective::new(&config.loss)?);
    let weight = config.loss.bias_weight;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5ace);
    let mut opt = Adam::new(config.learning_rate);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (mut img, mut txt, mut cross, mut bias) =
                (Triplets::default(), Triplets::default(), Triplets::default(), Triplets::default());
            for &a in batch {
                if let Some(&p) = pools.neighbors[a].choose(&mut rng) {
                    let neg = semantic_negative(&pools, a, p, n, &mut rng);
                    img.push(a, p, neg);
                }
                if let Some(&p) = pools.neighbors[a].choose(&mut rng) {
                    let neg = semantic_negative(&pools, a, p, n, &mut rng);
                    txt.push(a, p, neg);
                }
                if config.cross_modal {
                    let neg = semantic_negative(&pools, a, a, n, &mut rng);
                    cross.push(a, a, neg);
                }
                if let (Some(&p), Some(&neg)) =
                    (pools.bias_members[a].choose(&mut rng), pools.bias_negatives[a].choose(&mut rng))
                {
                    bias.push(a, p, neg);
                }
            }

            let mut g = Graph::new(&encoder.params);
            let t_out = encoder.text_forward(&mut g, bag.clone());
            let i_out = encoder.image_forward(&mut g, features.clone());
            let group = |g: &mut Graph, src_a: Var, src_p: Var, src_n: Var, t: &Triplets| -> Option<(Var, usize)> {
                if t.len() == 0 {
                    return None;
                }
                let a = g.gather(src_a, &t.a);
                let p = g.gather(src_p, &t.p);
                let ng = g.gather(src_n, &t.n);
                let col = g.triplet(a, p, ng, Arc::clone(&objective));
                Some((g.mean(col), t.len()))
            };
            let groups: Vec<(Var, usize)> = [
                group(&mut g, i_out, i_out, i_out, &img),
                group(&mut g, t_out, t_out, t_out, &txt),
                group(&mut g, t_out, i_out, i_out, &cross),
            ]
            .into_iter()
            .flatten()
            .collect();
            let bias_term = group(&mut g, i_out, i_out, i_out, &bias);
            let total_count: usize = groups.iter().map(|(_, c)| c).sum();
            if total_count == 0 && bias_term.is_none() {
                continue;
            }
            let mut semantic: Option<Var> = None;
            for (mean, count) in &groups {
                let part = g.scale(*mean, *count as f64 / total_count as f64);
                semantic = Some(match semantic {
                    Some(s) => g.add(s, part),
                    None => part,
                });
            }
            let semantic_value = semantic.map_or(0.0, |s| g.scalar(s));
            let bias_value = bias_term.map_or(0.0, |(b, _)| g.scalar(b));
            let objective_var = match (semantic, bias_term) {
                (Some(s), Some((b, _))) if weight > 0.0 => {
                    let wb = g.scale(b, weight);
                    Some(g.add(s, wb))
                }
                (None, Some((b, _))) if weight > 0.0 => Some(g.scale(b, weight)),
                (s, _) => s,
            };
            let Some(obj) = objective_var else { continue };
            history.push(StepLoss {
                epoch,
                semantic: semantic_value,
                bias: bias_value,
                total: g.scalar(obj),
            });
            let grads = g.backward(obj);
            drop(g);
            opt.step(&mut encoder.params, &grads);
        }
    }
    let table = encoder.table(items)?;
    Ok(SpaceTraining {
        encoder,
        table,
        history,
    })
}
