//! Image bias-score regression and its RMSE / R² evaluation.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedspace::{DualEncoder, IMAGE_DEPTH, IMAGE_PREFIX};
use crate::error::{Error, Result};
use crate::imaging::{features_from_path, pixel_features, FEATURE_DIM};
use crate::nn::{Adam, Graph, Linear, Mat, Mlp, ParamStore};

const BACKBONE: &str = "backbone";

/// Image encoder backbone plus a scalar head squashed by `tanh`, so every
/// output lies in (−1, 1).
pub struct BiasRegressor {
    params: ParamStore,
    backbone: Mlp,
    head: Linear,
    hidden: usize,
    dim: usize,
}

impl BiasRegressor {
    /// Fresh backbone with the space encoder's image architecture.
    pub fn cold_start(hidden: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let backbone = Mlp::init(&mut params, BACKBONE, &[FEATURE_DIM, hidden, dim], &mut rng);
        let head = Linear::init(&mut params, "head", dim, 1, &mut rng);
        Self {
            params,
            backbone,
            head,
            hidden,
            dim,
        }
    }

    /// Backbone initialized from a trained space's image encoder.
    pub fn from_space(space: &DualEncoder, seed: u64) -> Self {
        let cfg = space.config();
        let mut model = Self::cold_start(cfg.hidden, cfg.dim, seed);
        let copied = model.params.copy_prefixed(space.params(), &format!("{IMAGE_PREFIX}."), &format!("{BACKBONE}."));
        debug_assert_eq!(copied, 2 * IMAGE_DEPTH);
        model
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn forward(&self, g: &mut Graph, features: Mat) -> crate::nn::Var {
        let x = g.constant(features);
        let h = self.backbone.forward(g, x);
        let h = g.tanh(h);
        let y = self.head.forward(g, h);
        g.tanh(y)
    }

    fn batch(features: &[&[f64]]) -> Result<Mat> {
        let mut m = Mat::zeros((features.len(), FEATURE_DIM));
        for (r, f) in features.iter().enumerate() {
            if f.len() != FEATURE_DIM {
                return Err(Error::DimensionMismatch {
                    expected: FEATURE_DIM,
                    actual: f.len(),
                });
            }
            m.row_mut(r).assign(&ndarray::ArrayView1::from(*f));
        }
        Ok(m)
    }

    /// Scores for a batch of pixel-feature vectors.
    pub fn predict_features(&self, features: &[&[f64]]) -> Result<Vec<f64>> {
        let m = Self::batch(features)?;
        let mut g = Graph::new(&self.params);
        let y = self.forward(&mut g, m);
        Ok(g.value(y).column(0).to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ckpt = RegressorCheckpoint {
            format: REGRESSOR_FORMAT.into(),
            hidden: self.hidden,
            dim: self.dim,
            params: self.params.clone(),
        };
        serde_json::to_writer(BufWriter::new(File::create(path)?), &ckpt)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: RegressorCheckpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ckpt.format != REGRESSOR_FORMAT {
            return Err(Error::validation(format!("not a regressor checkpoint (format `{}`)", ckpt.format)));
        }
        Ok(Self {
            backbone: Mlp::bind(&ckpt.params, BACKBONE, IMAGE_DEPTH)?,
            head: Linear::bind(&ckpt.params, "head")?,
            params: ckpt.params,
            hidden: ckpt.hidden,
            dim: ckpt.dim,
        })
    }
}

const REGRESSOR_FORMAT: &str = "debias.regressor.v1";

#[derive(Serialize, Deserialize)]
struct RegressorCheckpoint {
    format: String,
    hidden: usize,
    dim: usize,
    params: ParamStore,
}

/// Bias score of an in-memory image.
pub fn predict_bias(model: &BiasRegressor, image: &RgbImage) -> f64 {
    let f = pixel_features(image);
    model.predict_features(&[&f]).expect("pixel features have the fixed width")[0]
}

/// Bias score of the image at `path`; unreadable files are errors.
pub fn predict_bias_path(model: &BiasRegressor, path: impl AsRef<Path>) -> Result<f64> {
    let f = features_from_path(path)?;
    Ok(model.predict_features(&[&f])?[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub features: Vec<f64>,
    pub score: f64,
}

impl LabeledImage {
    pub fn new(image: &RgbImage, score: f64) -> Self {
        Self {
            features: pixel_features(image),
            score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTuneConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Share of samples held out for validation. Ignored for a single sample.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 40,
            batch_size: 16,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Mean squared error per epoch. Entry 0 is measured before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneReport {
    pub train_loss: Vec<f64>,
    /// Empty when nothing was held out.
    pub val_loss: Vec<f64>,
}

fn mse(model: &BiasRegressor, data: &[&LabeledImage]) -> Result<f64> {
    let feats: Vec<&[f64]> = data.iter().map(|d| d.features.as_slice()).collect();
    let pred = model.predict_features(&feats)?;
    Ok(pred.iter().zip(data).map(|(p, d)| (p - d.score).powi(2)).sum::<f64>() / data.len() as f64)
}

/// Squared-error fine-tuning with Adam.
pub fn fine_tune(model: &mut BiasRegressor, labeled: &[LabeledImage], config: &FineTuneConfig) -> Result<FineTuneReport> {
    if labeled.is_empty() {
        return Err(Error::validation("fine-tuning needs at least one labeled image"));
    }
    if let Some(bad) = labeled.iter().find(|l| !(-1.0..=1.0).contains(&l.score)) {
        return Err(Error::validation(format!("label {} is outside [-1, 1]", bad.score)));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) || config.batch_size == 0 {
        return Err(Error::validation("validation fraction must lie in [0, 1) and batch size be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<&LabeledImage> = labeled.iter().collect();
    order.shuffle(&mut rng);
    let n_val = if labeled.len() > 1 {
        ((labeled.len() as f64 * config.validation_fraction).round() as usize).min(labeled.len() - 1)
    } else {
        0
    };
    let (val, train) = (order[..n_val].to_vec(), order[n_val..].to_vec());
    // Batches are drawn from a shuffled copy; losses sum in a fixed order.
    let mut shuffled = train.clone();

    let mut report = FineTuneReport {
        train_loss: vec![mse(model, &train)?],
        val_loss: if val.is_empty() { Vec::new() } else { vec![mse(model, &val)?] },
    };
    let mut opt = Adam::new(config.learning_rate);
    for _ in 0..config.epochs {
        shuffled.shuffle(&mut rng);
        for batch in shuffled.chunks(config.batch_size) {
            let feats: Vec<&[f64]> = batch.iter().map(|d| d.features.as_slice()).collect();
            let x = BiasRegressor::batch(&feats)?;
            let target = Mat::from_shape_fn((batch.len(), 1), |(r, _)| batch[r].score);
            let mut g = Graph::new(&model.params);
            let y = model.forward(&mut g, x);
            let loss = g.mean_squared_error(y, target);
            let grads = g.backward(loss);
            drop(g);
            opt.step(&mut model.params, &grads);
        }
        report.train_loss.push(mse(model, &train)?);
        if !val.is_empty() {
            report.val_loss.push(mse(model, &val)?);
        }
    }
    Ok(report)
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptySample("no predictions".into()));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Coefficient of determination with the total sum of squares taken about
/// the truth mean. Undefined for constant truth.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMean("R² is undefined for constant truth".into()));
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub rmse: f64,
    /// `None` when the truth is constant.
    pub r2: Option<f64>,
    pub n: usize,
}

pub fn evaluate(model: &BiasRegressor, labeled: &[LabeledImage]) -> Result<RegressionReport> {
    let feats: Vec<&[f64]> = labeled.iter().map(|l| l.features.as_slice()).collect();
    let pred = model.predict_features(&feats)?;
    let truth: Vec<f64> = labeled.iter().map(|l| l.score).collect();
    Ok(RegressionReport {
        rmse: rmse(&pred, &truth)?,
        r2: match r2(&pred, &truth) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMean(_)) => None,
            Err(e) => return Err(e),
        },
        n: labeled.len(),
    })
}
