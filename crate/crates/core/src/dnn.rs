//! Fully-connected ReLU network with a softmax output, trained by plain
//! mini-batch gradient descent on cross-entropy.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{Reader, Writer};
use crate::error::{Error, Result, ResultExt};

/// `max(0, x)`; the derivative used in training is 0 at `x = 0`.
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Clamped to the dataset size.
    pub batch_size: usize,
    pub seed: u64,
    /// Multiplicative learning-rate factor applied after each epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.2,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            lr_decay: 0.98,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr decay {} outside (0, 1]", self.lr_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
    pub hidden: Vec<usize>,
    pub output_size: usize,
}

impl Architecture {
    /// Four hidden layers of 128 units.
    pub fn standard(input_size: usize, output_size: usize) -> Self {
        Architecture {
            input_size,
            hidden: vec![128; 4],
            output_size,
        }
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_size];
        s.extend(&self.hidden);
        s.push(self.output_size);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `outputs × inputs`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    inputs: usize,
    outputs: usize,
}

impl Layer {
    fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()),
        );
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }
}

/// Per-dimension `(x − mean) / std` applied before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population statistics; near-constant dimensions get unit scale.
    pub fn fit(inputs: &[Vec<f64>]) -> Result<Self> {
        let first = inputs.first().ok_or_else(|| Error::Input("no inputs to standardize".into()))?;
        let d = first.len();
        let n = inputs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in inputs {
            if x.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: x.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for x in inputs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardization { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DnnTrainMeta {
    pub config: TrainConfig,
    /// Mean training cross-entropy of the final model.
    pub final_loss: f64,
    /// Mean mini-batch loss per epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnnModel {
    layers: Vec<Layer>,
    pub standardization: Option<Standardization>,
    /// Output class names, index-aligned with the posterior.
    pub class_labels: Vec<String>,
    /// What the inputs represent, e.g. `likelihood` or `mfcc-stats`.
    pub input_kind: String,
    pub train_meta: DnnTrainMeta,
}

/// Outputs of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub posterior: Vec<f64>,
    /// Affine outputs of every layer; the last entry holds the logits.
    pub pre_activations: Vec<Vec<f64>>,
    /// Layer inputs: the (standardized) network input followed by each
    /// hidden layer's ReLU output.
    pub activations: Vec<Vec<f64>>,
}

/// Parameter gradients laid out like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &DnnModel) -> Self {
        Gradients {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Flattened in [`DnnModel::param`] order.
    pub fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

/// Labeled training inputs.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn push(&mut self, input: Vec<f64>, label: usize) {
        self.inputs.push(input);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

const DNN_MAGIC: &[u8; 8] = b"EMSDNN\0\0";
const DNN_VERSION: u32 = 1;

impl DnnModel {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let sizes = arch.sizes();
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("layer sizes must be positive: {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = 1.0 / (inputs as f64).sqrt();
                Layer {
                    weights: (0..inputs * outputs)
                        .map(|_| rng.random_range(-bound..=bound))
                        .collect(),
                    bias: vec![0.0; outputs],
                    inputs,
                    outputs,
                }
            })
            .collect();
        Ok(DnnModel {
            layers,
            standardization: None,
            class_labels: (0..arch.output_size).map(|i| i.to_string()).collect(),
            input_kind: String::new(),
            train_meta: DnnTrainMeta::default(),
        })
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.outputs)
            .collect()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Zeroes every weight and bias.
    pub fn zero_parameters(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn locate(&self, mut idx: usize) -> (usize, bool, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if idx < l.weights.len() {
                return (li, true, idx);
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return (li, false, idx);
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameters are numbered layer by layer, weights before biases.
    pub fn param(&self, idx: usize) -> f64 {
        let (l, is_w, i) = self.locate(idx);
        if is_w {
            self.layers[l].weights[i]
        } else {
            self.layers[l].bias[i]
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let (l, is_w, i) = self.locate(idx);
        if is_w {
            self.layers[l].weights[i] = value;
        } else {
            self.layers[l].bias[i] = value;
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(Error::Dimension {
                expected: self.input_size(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("network input contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let input = match &self.standardization {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        };
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(input);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine_into(activations.last().unwrap(), &mut z);
            if i < last {
                activations.push(z.iter().map(|&v| relu(v)).collect());
            }
            pre_activations.push(z);
        }
        let posterior = softmax(pre_activations.last().unwrap());
        Ok(Forward {
            posterior,
            pre_activations,
            activations,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.posterior)
    }

    /// Adds the gradient of `−log p[label]` for one example into `grads`
    /// (scaled by `scale`) and returns the example's loss.
    fn accumulate(&self, x: &[f64], label: usize, scale: f64, grads: &mut Gradients) -> Result<f64> {
        let fwd = self.forward(x)?;
        let loss = -fwd.posterior[label].max(f64::MIN_POSITIVE).ln();
        let mut delta: Vec<f64> = fwd.posterior.clone();
        delta[label] -= 1.0;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let a_prev = &fwd.activations[li];
            let gw = &mut grads.weights[li];
            for (o, d) in delta.iter().enumerate() {
                let sd = scale * d;
                if sd == 0.0 {
                    continue;
                }
                for (g, a) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(a_prev) {
                    *g += sd * a;
                }
                grads.bias[li][o] += sd;
            }
            if li == 0 {
                break;
            }
            let z_prev = &fwd.pre_activations[li - 1];
            let mut next = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (n, w) in next.iter_mut().zip(&layer.weights[o * layer.inputs..(o + 1) * layer.inputs]) {
                    *n += w * d;
                }
            }
            for (n, z) in next.iter_mut().zip(z_prev) {
                if *z <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
        Ok(loss)
    }

    /// Mean cross-entropy over the examples and its gradient.
    pub fn loss_and_gradients(&self, inputs: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Gradients)> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::Input("need equally many (non-zero) inputs and labels".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let scale = 1.0 / inputs.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            self.check_label(y)?;
            loss += self.accumulate(x, y, scale, &mut grads)?;
        }
        Ok((loss * scale, grads))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.output_size() {
            return Err(Error::Input(format!(
                "label {label} outside 0..{}",
                self.output_size()
            )));
        }
        Ok(())
    }

    pub fn mean_loss(&self, data: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            self.check_label(y)?;
            total -= self.forward(x)?.posterior[y].max(f64::MIN_POSITIVE).ln();
        }
        Ok(total / data.len() as f64)
    }

    fn apply_step(&mut self, grads: &Gradients, lr: f64) {
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&grads.weights[li]) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&grads.bias[li]) {
                *b -= lr * g;
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(DNN_MAGIC, DNN_VERSION);
        w.str(&self.input_kind);
        w.usize(self.class_labels.len());
        for c in &self.class_labels {
            w.str(c);
        }
        w.usize(self.layers.len());
        for l in &self.layers {
            w.usize(l.inputs);
            w.usize(l.outputs);
        }
        match &self.standardization {
            Some(s) => {
                w.bool(true);
                w.raw_f64s(&s.mean);
                w.raw_f64s(&s.std);
            }
            None => w.bool(false),
        }
        for l in &self.layers {
            w.raw_f64s(&l.weights);
            w.raw_f64s(&l.bias);
        }
        w.str(&serde_json::to_string(&self.train_meta).expect("train metadata serializes"));
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, DNN_MAGIC, DNN_VERSION)?;
        let input_kind = r.str()?;
        let nc = r.len(8)?;
        let class_labels = (0..nc).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let nl = r.len(16)?;
        if nl == 0 {
            return Err(Error::Container("model has no layers".into()));
        }
        let mut shapes = Vec::with_capacity(nl);
        for _ in 0..nl {
            shapes.push((r.usize()?, r.usize()?));
        }
        if shapes.windows(2).any(|w| w[0].1 != w[1].0) || shapes.iter().any(|s| s.0 == 0 || s.1 == 0) {
            return Err(Error::Container(format!("inconsistent layer shapes {shapes:?}")));
        }
        if shapes[nl - 1].1 != nc {
            return Err(Error::Container("class labels do not match output size".into()));
        }
        let input_size = shapes[0].0;
        let standardization = if r.bool()? {
            Some(Standardization {
                mean: r.raw_f64s(input_size)?,
                std: r.raw_f64s(input_size)?,
            })
        } else {
            None
        };
        let mut layers = Vec::with_capacity(nl);
        for &(inputs, outputs) in &shapes {
            let n = inputs
                .checked_mul(outputs)
                .filter(|n| n.saturating_mul(8) <= r.remaining())
                .ok_or_else(|| Error::Container("layer payload truncated".into()))?;
            layers.push(Layer {
                weights: r.raw_f64s(n)?,
                bias: r.raw_f64s(outputs)?,
                inputs,
                outputs,
            });
        }
        let train_meta = serde_json::from_str(&r.str()?)
            .map_err(|e| Error::Container(format!("training metadata: {e}")))?;
        r.finish()?;
        let model = DnnModel {
            layers,
            standardization,
            class_labels,
            input_kind,
            train_meta,
        };
        let finite = model.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Container("non-finite parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::from(e).in_file(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::from_bytes(&bytes).in_file(path)
    }
}

/// Trains a fresh network. Examples are reshuffled every epoch from a seeded
/// stream; the whole run is bit-reproducible given `(data, config, arch)`.
pub fn train(
    data: &Dataset,
    config: &TrainConfig,
    arch: &Architecture,
    standardization: Option<Standardization>,
) -> Result<DnnModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if data.inputs.len() != data.labels.len() {
        return Err(Error::Input("inputs and labels differ in length".into()));
    }
    let mut model = DnnModel::init(arch, config.seed)?;
    model.standardization = standardization;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        model.check_input(x)?;
        model.check_label(y)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_5a1e);
    let batch_size = config.batch_size.min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut lr = config.learning_rate;
    let mut history = Vec::with_capacity(config.epochs);
    let mut grads = Gradients::zeros_like(&model);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(batch_size) {
            grads.weights.iter_mut().flatten().for_each(|g| *g = 0.0);
            grads.bias.iter_mut().flatten().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in batch {
                loss += model.accumulate(&data.inputs[i], data.labels[i], scale, &mut grads)?;
            }
            epoch_loss += loss * scale;
            batches += 1;
            model.apply_step(&grads, lr);
        }
        let mean = epoch_loss / batches as f64;
        if !mean.is_finite() || !model.layers.iter().all(|l| l.weights.iter().all(|w| w.is_finite())) {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("epoch {epoch}: loss {mean:.6}, lr {lr:.5}");
        history.push(mean);
        lr *= config.lr_decay;
    }

    let final_loss = model.mean_loss(data)?;
    model.train_meta = DnnTrainMeta {
        config: config.clone(),
        final_loss,
        loss_history: history,
    };
    Ok(model)
}
