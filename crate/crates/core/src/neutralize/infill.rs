use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image_tokens::ImageTokens;
use super::mask::MaskedSentence;
use crate::error::{Error, Result};
use crate::nn::{log_sum_exp, Adam, EncoderDescriptor, Graph, Linear, Mat, ParamStore, SequenceEncoder, Var};
use crate::textbias::{merge_words, Token, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillConfig {
    pub hidden: usize,
    pub layers: usize,
    pub context_len: usize,
    /// Width of each image token; must match the image tokenizer.
    pub image_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Probability that a word is masked during training.
    pub mask_rate: f64,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for InfillConfig {
    fn default() -> Self {
        Self {
            hidden: 768,
            layers: 12,
            context_len: 128,
            image_dim: 16,
            learning_rate: 1e-4,
            epochs: 1,
            batch_size: 32,
            mask_rate: 0.15,
            min_count: 1,
            seed: 0,
        }
    }
}

impl InfillConfig {
    pub fn tiny() -> Self {
        Self {
            hidden: 48,
            layers: 2,
            context_len: 48,
            learning_rate: 3e-3,
            epochs: 40,
            batch_size: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.image_dim == 0 || self.batch_size == 0 || self.context_len == 0 {
            return Err(Error::validation("infill sizes must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::validation("learning rate must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::validation("mask rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One neutral sentence, optionally paired with its image's tokens.
#[derive(Debug, Clone)]
pub struct NeutralExample {
    pub text: String,
    pub image: Option<Mat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    /// Token position in the masked sentence.
    pub position: usize,
    pub original: String,
    pub predicted: String,
    /// Probability of `predicted` among non-special vocabulary entries.
    pub score: f64,
}

/// Masked-token predictor conditioned on pooled image tokens.
pub struct InfillModel {
    config: InfillConfig,
    tokenizer: Tokenizer,
    params: ParamStore,
    encoder: Box<dyn SequenceEncoder>,
    image_proj: Linear,
    output: Linear,
    trained: bool,
}

struct TrainItem {
    tokens: Vec<Token>,
    image: Option<Mat>,
}

impl InfillModel {
    pub fn new(config: InfillConfig, tokenizer: Tokenizer) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = EncoderDescriptor::Conv {
            vocab_size: tokenizer.vocab_size(),
            hidden: config.hidden,
            layers: config.layers,
            context_len: config.context_len,
        }
        .init(&mut params, "encoder", &mut rng);
        let image_proj = Linear::init(&mut params, "image_proj", config.image_dim, config.hidden, &mut rng);
        let output = Linear::init(&mut params, "output", config.hidden, tokenizer.vocab_size(), &mut rng);
        Ok(Self {
            config,
            tokenizer,
            params,
            encoder,
            image_proj,
            output,
            trained: false,
        })
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn config(&self) -> &InfillConfig {
        &self.config
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn check_image(&self, image: Option<&Mat>) -> Result<()> {
        match image {
            Some(m) if m.nrows() > 0 && m.ncols() != self.config.image_dim => Err(Error::DimensionMismatch {
                expected: self.config.image_dim,
                actual: m.ncols(),
            }),
            _ => Ok(()),
        }
    }

    fn logits(&self, g: &mut Graph, ids: &[usize], image: Option<&Mat>, positions: &[usize]) -> Var {
        let mut h = self.encoder.encode(g, ids);
        if let Some(img) = image.filter(|m| m.nrows() > 0) {
            let tokens = g.constant(img.clone());
            let pooled = g.mean_rows(tokens);
            let ctx = self.image_proj.forward(g, pooled);
            h = g.add_row(h, ctx);
        }
        let rows = g.gather(h, positions);
        self.output.forward(g, rows)
    }

    /// Trains with whole-word masking on neutral sentences.
    pub fn fit(&mut self, examples: &[NeutralExample]) -> Result<Vec<f64>> {
        if examples.is_empty() {
            return Err(Error::validation("infill training set is empty"));
        }
        let mut items = Vec::new();
        for ex in examples {
            self.check_image(ex.image.as_ref())?;
            let tokens = self.tokenizer.tokenize(&ex.text)?;
            for chunk in tokens.chunks(self.config.context_len) {
                items.push(TrainItem {
                    tokens: chunk.to_vec(),
                    image: ex.image.clone(),
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x1f11);
        let mut opt = Adam::new(self.config.learning_rate);
        let mut history = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            items.shuffle(&mut rng);
            let (mut total, mut steps) = (0.0, 0usize);
            for batch in items.chunks(self.config.batch_size) {
                let mut g = Graph::new(&self.params);
                let mut losses = Vec::new();
                for item in batch {
                    let (ids, positions, targets) = self.training_mask(&item.tokens, &mut rng);
                    if positions.is_empty() {
                        continue;
                    }
                    let z = self.logits(&mut g, &ids, item.image.as_ref(), &positions);
                    losses.push(g.softmax_cross_entropy(z, &targets));
                }
                if losses.is_empty() {
                    continue;
                }
                let mut sum = losses[0];
                for &l in &losses[1..] {
                    sum = g.add(sum, l);
                }
                let mean = g.scale(sum, 1.0 / losses.len() as f64);
                total += g.scalar(mean);
                steps += 1;
                let grads = g.backward(mean);
                drop(g);
                opt.step(&mut self.params, &grads);
            }
            history.push(if steps > 0 { total / steps as f64 } else { 0.0 });
        }
        self.trained = true;
        Ok(history)
    }

    /// Masks whole words at `mask_rate` (at least one word), skipping
    /// unknown-token targets.
    fn training_mask(&self, tokens: &[Token], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let first = tokens[0].word_index;
        let n_words = tokens.last().map_or(0, |t| t.word_index + 1) - first;
        let mut chosen: Vec<bool> = (0..n_words).map(|_| rng.random_bool(self.config.mask_rate)).collect();
        if !chosen.iter().any(|&c| c) {
            chosen[rng.random_range(0..n_words)] = true;
        }
        let mut ids = Vec::with_capacity(tokens.len());
        let (mut positions, mut targets) = (Vec::new(), Vec::new());
        for (i, t) in tokens.iter().enumerate() {
            if chosen[t.word_index - first] && t.id != self.tokenizer.unk_id() {
                ids.push(self.tokenizer.mask_id());
                positions.push(i);
                targets.push(t.id);
            } else {
                ids.push(t.id);
            }
        }
        (ids, positions, targets)
    }

    /// Predicts one vocabulary piece per masked position. Special tokens,
    /// including the mask sentinel, are never predicted.
    pub fn predict_replacements(&self, masked: &MaskedSentence, image: &ImageTokens) -> Result<Vec<Replacement>> {
        if !self.trained {
            return Err(Error::state("infill model has not been trained"));
        }
        self.check_image(Some(&image.tokens))?;
        let ids: Vec<usize> = masked.tokens.iter().map(|t| t.id).collect();
        let n = ids.len();
        let len = self.config.context_len.min(n);
        let mut out = Vec::with_capacity(masked.mask_positions.len());
        for (k, &pos) in masked.mask_positions.iter().enumerate() {
            let start = pos.saturating_sub(len / 2).min(n - len);
            let mut g = Graph::new(&self.params);
            let z = self.logits(&mut g, &ids[start..start + len], Some(&image.tokens), &[pos - start]);
            let row = g.value(z).row(0).to_vec();
            let allowed: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .filter(|(id, _)| !self.tokenizer.is_special(*id))
                .map(|(id, &v)| (id, v))
                .collect();
            let lse = log_sum_exp(&allowed.iter().map(|&(_, v)| v).collect::<Vec<_>>());
            let (best, logit) = allowed
                .iter()
                .copied()
                .fold(None::<(usize, f64)>, |acc, (id, v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((id, v)),
                })
                .ok_or_else(|| Error::state("vocabulary has no predictable tokens"))?;
            out.push(Replacement {
                position: pos,
                original: masked.original_tokens[k].text.clone(),
                predicted: self.tokenizer.piece(best).to_string(),
                score: (logit - lse).exp(),
            });
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ckpt = InfillCheckpoint {
            format: INFILL_FORMAT.into(),
            config: self.config.clone(),
            encoder: self.encoder.descriptor(),
            tokenizer: self.tokenizer.clone(),
            params: self.params.clone(),
            trained: self.trained,
        };
        serde_json::to_writer(BufWriter::new(File::create(path)?), &ckpt)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: InfillCheckpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ckpt.format != INFILL_FORMAT {
            return Err(Error::validation(format!(
                "not an infill checkpoint (format `{}`)",
                ckpt.format
            )));
        }
        Ok(Self {
            encoder: ckpt.encoder.bind(&ckpt.params, "encoder")?,
            image_proj: Linear::bind(&ckpt.params, "image_proj")?,
            output: Linear::bind(&ckpt.params, "output")?,
            config: ckpt.config,
            tokenizer: ckpt.tokenizer,
            params: ckpt.params,
            trained: ckpt.trained,
        })
    }
}

const INFILL_FORMAT: &str = "debias.infill.v1";

#[derive(Serialize, Deserialize)]
struct InfillCheckpoint {
    format: String,
    config: InfillConfig,
    encoder: EncoderDescriptor,
    tokenizer: Tokenizer,
    params: ParamStore,
    trained: bool,
}

/// Builds a vocabulary from `examples` and trains an infill model.
pub fn train_infill(examples: &[NeutralExample], config: InfillConfig) -> Result<(InfillModel, Vec<f64>)> {
    let tokenizer = Tokenizer::build(examples.iter().map(|e| e.text.as_str()), config.min_count);
    let mut model = InfillModel::new(config, tokenizer)?;
    let history = model.fit(examples)?;
    Ok((model, history))
}

/// Substitutes predictions into the masked sentence and merges pieces back
/// into words.
pub fn apply_replacements(masked: &MaskedSentence, replacements: &[Replacement]) -> Vec<String> {
    let mut tokens = masked.tokens.clone();
    for r in replacements {
        tokens[r.position].text = r.predicted.clone();
    }
    merge_words(&tokens)
}
