use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::derive_diff_labels;
use super::tokenizer::{Token, Tokenizer};
use super::{top_k_words, TokenBias};
use crate::corpus::NeutralityPair;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Adam, EncoderDescriptor, Graph, Linear, ParamStore, SequenceEncoder, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub hidden: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Longest token window the encoder sees at once.
    pub context_len: usize,
    /// Tokens shared by consecutive windows over long inputs.
    pub window_overlap: usize,
    /// Minimum word frequency for a whole-word vocabulary entry.
    pub min_count: usize,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            hidden: 768,
            layers: 12,
            learning_rate: 1e-4,
            epochs: 1,
            batch_size: 32,
            context_len: 128,
            window_overlap: 32,
            min_count: 1,
            seed: 0,
        }
    }
}

impl TaggerConfig {
    /// Small encoder used by tests and demos.
    pub fn tiny() -> Self {
        Self {
            hidden: 32,
            layers: 2,
            context_len: 32,
            window_overlap: 8,
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::validation("hidden size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::validation("learning rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be positive"));
        }
        if self.context_len < 2 || self.window_overlap >= self.context_len {
            return Err(Error::validation(
                "context length must be ≥ 2 and exceed the window overlap",
            ));
        }
        Ok(())
    }

    fn descriptor(&self, vocab_size: usize) -> EncoderDescriptor {
        EncoderDescriptor::Conv {
            vocab_size,
            hidden: self.hidden,
            layers: self.layers,
            context_len: self.context_len,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mini-batch objective after every optimizer step.
    pub step_losses: Vec<f64>,
    /// Full training-set loss; entry 0 is before the first epoch.
    pub epoch_losses: Vec<f64>,
}

/// Token-level bias tagger: sequence encoder plus a sigmoid head.
pub struct TaggerModel {
    config: TaggerConfig,
    tokenizer: Tokenizer,
    params: ParamStore,
    encoder: Box<dyn SequenceEncoder>,
    head: Linear,
    trained: bool,
}

struct Example {
    ids: Vec<usize>,
    labels: Vec<f64>,
}

impl TaggerModel {
    /// Creates an untrained model with the built-in convolutional encoder.
    pub fn new(config: TaggerConfig, tokenizer: Tokenizer) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = config
            .descriptor(tokenizer.vocab_size())
            .init(&mut params, "encoder", &mut rng);
        let head = Linear::init(&mut params, "head", config.hidden, 1, &mut rng);
        Ok(Self {
            config,
            tokenizer,
            params,
            encoder,
            head,
            trained: false,
        })
    }

    /// Creates an untrained model around a caller-supplied encoder whose
    /// parameters are already registered in `params`.
    pub fn with_encoder(
        config: TaggerConfig,
        tokenizer: Tokenizer,
        mut params: ParamStore,
        encoder: Box<dyn SequenceEncoder>,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let head = Linear::init(&mut params, "head", encoder.hidden_size(), 1, &mut rng);
        Ok(Self {
            config,
            tokenizer,
            params,
            encoder,
            head,
            trained: false,
        })
    }

    pub fn config(&self) -> &TaggerConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn examples(&self, pairs: &[NeutralityPair]) -> Result<Vec<Example>> {
        let mut out = Vec::new();
        for pair in pairs {
            let labels = derive_diff_labels(pair)?;
            let tokens = self.tokenizer.tokenize_words(&pair.biased_tokens);
            let piece_labels: Vec<f64> = tokens
                .iter()
                .map(|t| f64::from(labels[t.word_index].label))
                .collect();
            let ids: Vec<usize> = tokens.iter().map(|t| t.id).collect();
            for (start, end) in windows(ids.len(), self.config.context_len, self.config.window_overlap) {
                out.push(Example {
                    ids: ids[start..end].to_vec(),
                    labels: piece_labels[start..end].to_vec(),
                });
            }
        }
        Ok(out)
    }

    fn logits(&self, g: &mut Graph, ids: &[usize]) -> Var {
        let h = self.encoder.encode(g, ids);
        self.head.forward(g, h)
    }

    fn example_loss(&self, g: &mut Graph, ex: &Example) -> Var {
        let z = self.logits(g, &ex.ids);
        let targets = Array2::from_shape_vec((ex.labels.len(), 1), ex.labels.clone())
            .expect("one label per token");
        g.bce_with_logits(z, targets)
    }

    fn dataset_loss(&self, examples: &[Example]) -> f64 {
        let total: f64 = examples
            .iter()
            .map(|ex| {
                let mut g = Graph::new(&self.params);
                let l = self.example_loss(&mut g, ex);
                g.scalar(l)
            })
            .sum();
        total / examples.len() as f64
    }

    /// Trains on the biased side of `pairs` with edit-diff labels.
    pub fn fit(&mut self, pairs: &[NeutralityPair]) -> Result<TrainReport> {
        if pairs.is_empty() {
            return Err(Error::validation("training set is empty"));
        }
        let examples = self.examples(pairs)?;
        // Shuffle an index so the epoch loss is summed in a fixed order.
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x7a66_e75e);
        let mut opt = Adam::new(self.config.learning_rate);
        let mut report = TrainReport {
            epoch_losses: vec![self.dataset_loss(&examples)],
            ..Default::default()
        };
        for _ in 0..self.config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(self.config.batch_size) {
                let mut g = Graph::new(&self.params);
                let losses: Vec<Var> = batch.iter().map(|&i| self.example_loss(&mut g, &examples[i])).collect();
                let mut total = losses[0];
                for &l in &losses[1..] {
                    total = g.add(total, l);
                }
                let mean = g.scale(total, 1.0 / batch.len() as f64);
                report.step_losses.push(g.scalar(mean));
                let grads = g.backward(mean);
                drop(g);
                opt.step(&mut self.params, &grads);
            }
            report.epoch_losses.push(self.dataset_loss(&examples));
        }
        self.trained = true;
        Ok(report)
    }

    /// Per-token bias probabilities for `text`; each token carries the
    /// probability of its word (max over the word's pieces).
    pub fn predict_token_bias(&self, text: &str) -> Result<Vec<TokenBias>> {
        let tokens = self.tokenizer.tokenize(text)?;
        self.predict_tokens(&tokens)
    }

    pub fn predict_tokens(&self, tokens: &[Token]) -> Result<Vec<TokenBias>> {
        if !self.trained {
            return Err(Error::state("tagger has not been trained"));
        }
        if tokens.is_empty() {
            return Err(Error::validation("cannot tag an empty token sequence"));
        }
        let ids: Vec<usize> = tokens.iter().map(|t| t.id).collect();
        let mut piece = vec![0.0f64; ids.len()];
        for (start, end) in windows(ids.len(), self.config.context_len, self.config.window_overlap) {
            let mut g = Graph::new(&self.params);
            let z = self.logits(&mut g, &ids[start..end]);
            for (k, &zv) in g.value(z).column(0).iter().enumerate() {
                piece[start + k] = piece[start + k].max(sigmoid(zv));
            }
        }
        let n_words = tokens.last().map_or(0, |t| t.word_index + 1);
        let mut word = vec![0.0f64; n_words];
        for (t, &p) in tokens.iter().zip(&piece) {
            word[t.word_index] = word[t.word_index].max(p);
        }
        Ok(tokens
            .iter()
            .enumerate()
            .map(|(index, t)| TokenBias {
                token: t.text.clone(),
                index,
                word_index: t.word_index,
                probability: word[t.word_index],
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ckpt = TaggerCheckpoint {
            format: TAGGER_FORMAT.into(),
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
        let ckpt: TaggerCheckpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ckpt.format != TAGGER_FORMAT {
            return Err(Error::validation(format!(
                "not a tagger checkpoint (format `{}`)",
                ckpt.format
            )));
        }
        let encoder = ckpt.encoder.bind(&ckpt.params, "encoder")?;
        let head = Linear::bind(&ckpt.params, "head")?;
        Ok(Self {
            config: ckpt.config,
            tokenizer: ckpt.tokenizer,
            params: ckpt.params,
            encoder,
            head,
            trained: ckpt.trained,
        })
    }
}

const TAGGER_FORMAT: &str = "debias.tagger.v1";

#[derive(Serialize, Deserialize)]
struct TaggerCheckpoint {
    format: String,
    config: TaggerConfig,
    encoder: EncoderDescriptor,
    tokenizer: Tokenizer,
    params: ParamStore,
    trained: bool,
}

/// Builds a vocabulary from both sides of `pairs` and trains a tagger.
pub fn train_tagger(pairs: &[NeutralityPair], config: TaggerConfig) -> Result<(TaggerModel, TrainReport)> {
    if pairs.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let texts: Vec<String> = pairs
        .iter()
        .flat_map(|p| [p.biased_text(), p.neutral_text()])
        .collect();
    let tokenizer = Tokenizer::build(texts.iter().map(String::as_str), config.min_count);
    let mut model = TaggerModel::new(config, tokenizer)?;
    let report = model.fit(pairs)?;
    Ok((model, report))
}

/// Fraction of edited (diff-labeled) words that the tagger ranks within the
/// top `k` words of their sentence.
pub fn diff_recall_at_k(model: &TaggerModel, pairs: &[NeutralityPair], k: usize) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for pair in pairs {
        let labels = derive_diff_labels(pair)?;
        let tokens = model.tokenizer.tokenize_words(&pair.biased_tokens);
        let preds = model.predict_tokens(&tokens)?;
        let top = top_k_words(&preds, k);
        for (w, l) in labels.iter().enumerate() {
            if l.label == 1 {
                total += 1;
                hits += usize::from(top.contains(&w));
            }
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMean("no labeled words to recall".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// `[start, end)` windows of at most `len` tokens covering `n` tokens, with
/// `overlap` tokens shared between neighbours.
pub(crate) fn windows(n: usize, len: usize, overlap: usize) -> Vec<(usize, usize)> {
    if n <= len {
        return vec![(0, n)];
    }
    let stride = len - overlap;
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        if start + len >= n {
            out.push((n - len, n));
            break;
        }
        out.push((start, start + len));
        start += stride;
    }
    out
}
