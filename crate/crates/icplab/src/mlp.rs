//! Feed-forward network with ReLU hidden layers and independent sigmoid
//! outputs, trained by mini-batch SGD on per-output binary cross-entropy
//! against one-hot targets.
//!
//! The output layer deliberately has no softmax: each class score is its own
//! sigmoid, so scores need not sum to one. Training is deterministic given
//! the seed in [`TrainConfig`].

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("network needs at least an input and an output layer, got {got} sizes")]
    TooFewLayers { got: usize },
    #[error("layer sizes must be nonzero")]
    ZeroLayer,
    #[error("expected input of length {expected}, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("network expects {expected} input features but data has {got}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("network has {outputs} outputs but data has {classes} classes")]
    ClassMismatch { outputs: usize, classes: usize },
    #[error("training set is empty")]
    EmptyData,
    #[error("invalid training configuration: {reason}")]
    BadTrainConfig { reason: String },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file invalid: {reason}")]
    BadModelFile { reason: String },
}

/// Mini-batch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 60,
            seed: 0,
        }
    }
}

/// Weights for one fully connected network.
///
/// `weights[l]` is the row-major `sizes[l+1] x sizes[l]` matrix of layer `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Loss gradient with the same shapes as the model parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy computed from the logit, stable for large |z|.
fn bce_from_logit(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

fn validate_sizes(sizes: &[usize]) -> Result<(), MlpError> {
    if sizes.len() < 2 {
        return Err(MlpError::TooFewLayers { got: sizes.len() });
    }
    if sizes.contains(&0) {
        return Err(MlpError::ZeroLayer);
    }
    Ok(())
}

/// Draws initial weights from N(0, 2/fan_in) per layer; biases start at zero.
pub fn init_model(sizes: &[usize], rng: &mut impl Rng) -> Result<MlpModel, MlpError> {
    validate_sizes(sizes)?;
    let mut weights = Vec::with_capacity(sizes.len() - 1);
    let mut biases = Vec::with_capacity(sizes.len() - 1);
    for pair in sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std is finite and positive");
        weights.push((0..fan_in * fan_out).map(|_| normal.sample(rng)).collect());
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpModel {
        sizes: sizes.to_vec(),
        weights,
        biases,
    })
}

// Scratch buffers reused across forward/backward passes.
struct Workspace {
    // values[0] is the input; values[l+1] holds layer l's post-activation,
    // except the last entry, which holds the output layer's logits.
    values: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Workspace {
    fn new(sizes: &[usize]) -> Self {
        let widest = *sizes.iter().max().expect("validated sizes") ;
        Workspace {
            values: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            delta: vec![0.0; widest],
            delta_next: vec![0.0; widest],
        }
    }
}

impl MlpModel {
    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("validated sizes")
    }

    /// Number of weight layers.
    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn layer_biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn layer_weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn layer_biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    /// Sigmoid class scores for one input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, MlpError> {
        if input.len() != self.input_len() {
            return Err(MlpError::InputLength {
                expected: self.input_len(),
                got: input.len(),
            });
        }
        let mut ws = Workspace::new(&self.sizes);
        self.forward_ws(input, &mut ws);
        Ok(ws.values[self.layer_count()]
            .iter()
            .map(|&z| sigmoid(z))
            .collect())
    }

    // Fills ws.values; the final entry receives logits, hidden entries
    // receive post-ReLU activations.
    fn forward_ws(&self, input: &[f64], ws: &mut Workspace) {
        ws.values[0].copy_from_slice(input);
        for layer in 0..self.layer_count() {
            let (before, after) = ws.values.split_at_mut(layer + 1);
            let src = &before[layer];
            let dst = &mut after[0];
            let in_dim = self.sizes[layer];
            let weights = &self.weights[layer];
            let biases = &self.biases[layer];
            let last = layer + 1 == self.layer_count();
            for (o, out) in dst.iter_mut().enumerate() {
                let row = &weights[o * in_dim..(o + 1) * in_dim];
                let mut z = biases[o];
                for (w, a) in row.iter().zip(src.iter()) {
                    z += w * a;
                }
                *out = if last { z } else { z.max(0.0) };
            }
        }
    }

    fn check_data(&self, data: &Dataset) -> Result<(), MlpError> {
        if data.is_empty() {
            return Err(MlpError::EmptyData);
        }
        if data.feature_len() != self.input_len() {
            return Err(MlpError::FeatureMismatch {
                expected: self.input_len(),
                got: data.feature_len(),
            });
        }
        if data.n_classes() != self.output_len() {
            return Err(MlpError::ClassMismatch {
                outputs: self.output_len(),
                classes: data.n_classes(),
            });
        }
        Ok(())
    }

    /// Mean loss over a dataset: per-output binary cross-entropy against the
    /// one-hot label, summed over outputs, averaged over examples.
    pub fn batch_loss(&self, data: &Dataset) -> Result<f64, MlpError> {
        self.check_data(data)?;
        let mut ws = Workspace::new(&self.sizes);
        let mut total = 0.0;
        for (features, label) in data.iter() {
            self.forward_ws(features, &mut ws);
            let logits = &ws.values[self.layer_count()];
            for (c, &z) in logits.iter().enumerate() {
                total += bce_from_logit(z, if c == label { 1.0 } else { 0.0 });
            }
        }
        Ok(total / data.len() as f64)
    }

    /// Mean loss gradient over a batch.
    pub fn gradient(&self, data: &Dataset) -> Result<Gradients, MlpError> {
        self.check_data(data)?;
        let mut grads = Gradients::zeroed(self);
        let mut ws = Workspace::new(&self.sizes);
        self.accumulate_batch(data, &mut grads, &mut ws);
        let scale = 1.0 / data.len() as f64;
        grads.scale(scale);
        Ok(grads)
    }

    // Adds the summed (not averaged) gradient over `data` into `grads` and
    // returns the summed loss.
    fn accumulate_batch(&self, data: &Dataset, grads: &mut Gradients, ws: &mut Workspace) -> f64 {
        let layers = self.layer_count();
        let mut loss = 0.0;
        for (features, label) in data.iter() {
            self.forward_ws(features, ws);
            {
                let logits = &ws.values[layers];
                let delta = &mut ws.delta[..self.output_len()];
                for (c, (&z, d)) in logits.iter().zip(delta.iter_mut()).enumerate() {
                    let target = if c == label { 1.0 } else { 0.0 };
                    loss += bce_from_logit(z, target);
                    *d = sigmoid(z) - target;
                }
            }
            for layer in (0..layers).rev() {
                let in_dim = self.sizes[layer];
                let out_dim = self.sizes[layer + 1];
                let src = &ws.values[layer];
                let delta = &ws.delta[..out_dim];
                let gw = &mut grads.weights[layer];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for (g, a) in row.iter_mut().zip(src.iter()) {
                        *g += d * a;
                    }
                    grads.biases[layer][o] += d;
                }
                if layer > 0 {
                    let weights = &self.weights[layer];
                    let prev = &mut ws.delta_next[..in_dim];
                    prev.fill(0.0);
                    for (o, &d) in delta.iter().enumerate() {
                        let row = &weights[o * in_dim..(o + 1) * in_dim];
                        for (p, w) in prev.iter_mut().zip(row.iter()) {
                            *p += w * d;
                        }
                    }
                    // ReLU derivative: pass gradient only where the unit fired.
                    for (p, &a) in prev.iter_mut().zip(src.iter()) {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    std::mem::swap(&mut ws.delta, &mut ws.delta_next);
                }
            }
        }
        loss
    }
}

impl Gradients {
    fn zeroed(model: &MlpModel) -> Self {
        Gradients {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn zero(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }

    fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            for g in w {
                *g *= factor;
            }
        }
        for b in &mut self.biases {
            for g in b {
                *g *= factor;
            }
        }
    }
}

/// Trains a fresh network on `data` with per-epoch reshuffling.
///
/// The whole procedure is a deterministic function of `config.seed`, the
/// layer sizes, and the data. Returns a divergence error naming the epoch if
/// the mean epoch loss stops being finite.
pub fn train_sgd(
    data: &Dataset,
    layer_sizes: &[usize],
    config: &TrainConfig,
) -> Result<MlpModel, MlpError> {
    validate_sizes(layer_sizes)?;
    if config.epochs == 0 {
        return Err(MlpError::BadTrainConfig {
            reason: "epochs must be at least 1".into(),
        });
    }
    if config.batch_size == 0 {
        return Err(MlpError::BadTrainConfig {
            reason: "batch_size must be at least 1".into(),
        });
    }
    if !config.learning_rate.is_finite() || config.learning_rate < 0.0 {
        return Err(MlpError::BadTrainConfig {
            reason: format!("learning_rate must be finite and >= 0, got {}", config.learning_rate),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init_model(layer_sizes, &mut rng)?;
    model.check_data(data)?;

    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut grads = Gradients::zeroed(&model);
    let mut ws = Workspace::new(layer_sizes);

    for epoch in 1..=config.epochs {
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in indices.chunks(config.batch_size) {
            grads.zero();
            let batch = data.subset(chunk);
            epoch_loss += model.accumulate_batch(&batch, &mut grads, &mut ws);
            let step = config.learning_rate / chunk.len() as f64;
            for layer in 0..model.layer_count() {
                for (w, g) in model.weights[layer].iter_mut().zip(&grads.weights[layer]) {
                    *w -= step * g;
                }
                for (b, g) in model.biases[layer].iter_mut().zip(&grads.biases[layer]) {
                    *b -= step * g;
                }
            }
        }
        if !(epoch_loss / data.len() as f64).is_finite() {
            return Err(MlpError::Diverged { epoch });
        }
    }
    Ok(model)
}

/// Writes model parameters as JSON.
pub fn save_model(model: &MlpModel, path: &Path) -> Result<(), MlpError> {
    let io = |source: std::io::Error| MlpError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, model).map_err(|e| MlpError::BadModelFile {
        reason: e.to_string(),
    })?;
    use std::io::Write as _;
    w.flush().map_err(io)
}

/// Reads model parameters written by [`save_model`], validating shapes.
pub fn load_model(path: &Path) -> Result<MlpModel, MlpError> {
    let file = File::open(path).map_err(|source| MlpError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let model: MlpModel =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| MlpError::BadModelFile {
            reason: e.to_string(),
        })?;
    validate_sizes(&model.sizes)?;
    let layers = model.sizes.len() - 1;
    if model.weights.len() != layers || model.biases.len() != layers {
        return Err(MlpError::BadModelFile {
            reason: format!("expected {layers} weight layers"),
        });
    }
    for layer in 0..layers {
        let (in_dim, out_dim) = (model.sizes[layer], model.sizes[layer + 1]);
        if model.weights[layer].len() != in_dim * out_dim {
            return Err(MlpError::BadModelFile {
                reason: format!(
                    "layer {layer}: expected {} weights, got {}",
                    in_dim * out_dim,
                    model.weights[layer].len()
                ),
            });
        }
        if model.biases[layer].len() != out_dim {
            return Err(MlpError::BadModelFile {
                reason: format!(
                    "layer {layer}: expected {out_dim} biases, got {}",
                    model.biases[layer].len()
                ),
            });
        }
        if model.weights[layer].iter().any(|w| !w.is_finite())
            || model.biases[layer].iter().any(|b| !b.is_finite())
        {
            return Err(MlpError::BadModelFile {
                reason: format!("layer {layer}: non-finite parameter"),
            });
        }
    }
    Ok(model)
}
