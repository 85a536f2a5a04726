//! A small 1-D CNN classifier: conv blocks with ReLU, global average pooling
//! and a dense head producing log-probabilities.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::data::{Dataset, TimeSeries};
use crate::error::{Error, Result};
use crate::prob::ProbVector;
use crate::scalar::{argmax, DType, Scalar};
use crate::tensor::Tensor;

/// Bumped whenever the weights file layout changes.
pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TSAW";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub channels: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ModelConfig {
    pub num_classes: usize,
    pub input_length: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub seed: u64,
    /// Original class labels by index, when known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_names: Vec<String>,
}

impl ModelConfig {
    /// Two conv blocks of 16 channels with widths 7 and 5.
    pub fn small(num_classes: usize, input_length: usize, seed: u64) -> Self {
        Self {
            num_classes,
            input_length,
            conv_blocks: vec![
                ConvBlock {
                    channels: 16,
                    width: 7,
                },
                ConvBlock {
                    channels: 16,
                    width: 5,
                },
            ],
            seed,
            label_names: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.conv_blocks.is_empty() {
            return Err(Error::config("need at least one conv block"));
        }
        if !self.label_names.is_empty() && self.label_names.len() != self.num_classes {
            return Err(Error::config(format!(
                "{} label names for {} classes",
                self.label_names.len(),
                self.num_classes
            )));
        }
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.channels == 0 || b.width % 2 == 0 {
                return Err(Error::config(format!(
                    "conv block {i}: channels must be positive and width odd (got {} x {})",
                    b.channels, b.width
                )));
            }
            if b.width > self.input_length {
                return Err(Error::config(format!(
                    "conv block {i}: width {} exceeds input length {}",
                    b.width, self.input_length
                )));
            }
        }
        Ok(())
    }

    /// Tensor names and shapes, in file order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = 1;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            out.push((format!("conv{i}.weight"), vec![b.channels, cin, b.width]));
            out.push((format!("conv{i}.bias"), vec![b.channels]));
            cin = b.channels;
        }
        out.push(("head.weight".into(), vec![self.num_classes, cin]));
        out.push(("head.bias".into(), vec![self.num_classes]));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "epochs, batch size and learning rate must be positive (got {}, {}, {})",
                self.epochs, self.batch_size, self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Graph handles of a model's parameters.
#[derive(Debug, Clone)]
pub struct BoundParams {
    names: Vec<String>,
    nodes: Vec<NodeId>,
}

impl BoundParams {
    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.nodes.iter().copied())
    }
}

/// Trained (or freshly initialised) parameters together with the config that
/// produced them. Immutable once built; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<S> {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ModelWeights<S> {
    /// He-normal kernels, Glorot-normal head, zero biases.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.layout() {
            let n: usize = shape.iter().product();
            let values = if name.ends_with(".bias") {
                vec![S::zero(); n]
            } else {
                let std = if name.starts_with("conv") {
                    (2.0 / (shape[1] * shape[2]) as f64).sqrt()
                } else {
                    (2.0 / (shape[0] + shape[1]) as f64).sqrt()
                };
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| S::lit(dist.sample(&mut rng))).collect()
            };
            tensors.insert(name, Tensor::new(shape, values)?);
        }
        Ok(Self { config, tensors })
    }

    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor<S>>) -> Result<Self> {
        let w = Self { config, tensors };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let layout = self.config.layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::Persistence(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in layout {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Persistence(format!("missing tensor '{name}'")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Persistence(format!(
                    "tensor '{name}' has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Persistence(format!("tensor '{name}' is not finite")));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<S>> {
        &self.tensors
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.tensors.get_mut(name)
    }

    /// Adds the parameters to `g`, as variables when `trainable`.
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> BoundParams {
        let mut names = Vec::new();
        let mut nodes = Vec::new();
        for (name, _) in self.config.layout() {
            let t = self.tensors[&name].clone();
            nodes.push(if trainable {
                g.variable(t)
            } else {
                g.constant(t)
            });
            names.push(name);
        }
        BoundParams { names, nodes }
    }

    /// Appends the forward pass for `input` (a `[T]` node) and returns the
    /// log-probability node.
    pub fn log_probs_node(
        &self,
        g: &mut Graph<S>,
        params: &BoundParams,
        input: NodeId,
    ) -> Result<NodeId> {
        let len = g.value(input).len();
        if len != self.config.input_length {
            return Err(Error::dim(format!(
                "series length {len} does not match model input length {}",
                self.config.input_length
            )));
        }
        let mut h = input;
        let blocks = self.config.conv_blocks.len();
        for i in 0..blocks {
            let conv = g.conv1d(h, params.nodes[2 * i], params.nodes[2 * i + 1])?;
            h = g.relu(conv)?;
        }
        let pooled = g.global_avg_pool(h)?;
        let logits = g.dense(
            pooled,
            params.nodes[2 * blocks],
            params.nodes[2 * blocks + 1],
        )?;
        g.log_softmax(logits)
    }

    pub fn log_probs(&self, series: &[S]) -> Result<Vec<S>> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let x = g.constant(Tensor::vector(series.to_vec()));
        let out = self.log_probs_node(&mut g, &params, x)?;
        Ok(g.value(out).values().to_vec())
    }

    pub fn predict_proba(&self, series: &TimeSeries<S>) -> Result<ProbVector<S>> {
        ProbVector::from_log_probs(&self.log_probs(&series.values)?)
    }

    pub fn predict(&self, series: &TimeSeries<S>) -> Result<usize> {
        Ok(argmax(&self.log_probs(&series.values)?))
    }

    pub fn accuracy(&self, ds: &Dataset<S>) -> Result<f64> {
        let mut correct = 0;
        for s in &ds.samples {
            if Some(self.predict(s)?) == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / ds.len().max(1) as f64)
    }

    pub fn cast<T: Scalar>(&self) -> ModelWeights<T> {
        ModelWeights {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    // ---- persistence ---------------------------------------------------------

    /// Serialises to the little-endian weights container:
    ///
    /// ```text
    /// "TSAW" | version u32 | dtype u8 | config-json-len u32 | config json
    /// | tensor-count u32 | { name-len u16 | name | ndim u8 | dims u32* | values }*
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(S::DTYPE.tag());
        let config = serde_json::to_vec(&self.config).expect("config serialises");
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.values() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Persistence("not a weights file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let dtype = DType::from_tag(r.u8()?)
            .ok_or_else(|| Error::Persistence("unknown scalar type tag".into()))?;
        let clen = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(clen)?)
            .map_err(|e| Error::Persistence(format!("bad config block: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Persistence("tensor name is not utf-8".into()))?
                .to_string();
            let ndim = r.u8()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(dtype.width())
                    .ok_or_else(|| Error::Persistence(format!("tensor '{name}' too large")))?,
            )?;
            let values: Vec<S> = match dtype {
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| S::lit(f64::read_le(c)))
                    .collect(),
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| S::lit(f32::read_le(c) as f64))
                    .collect(),
            };
            tensors.insert(name, Tensor::new(shape, values)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Persistence(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Self::from_tensors(config, tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn save_weights<S: Scalar>(weights: &ModelWeights<S>, path: impl AsRef<Path>) -> Result<()> {
    weights.save(path)
}

pub fn load_weights<S: Scalar>(path: impl AsRef<Path>) -> Result<ModelWeights<S>> {
    ModelWeights::load(path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Persistence(format!("file truncated at byte {}", self.bytes.len()))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub weights: ModelWeights<S>,
    pub log: Vec<EpochRecord>,
}

impl<S> TrainOutcome<S> {
    /// Training log as CSV with header `epoch,train-loss,train-acc,test-acc`.
    pub fn log_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for rec in &self.log {
            w.serialize(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Mean cross-entropy of a batch, built from log-softmax outputs.
fn batch_loss<S: Scalar>(
    g: &mut Graph<S>,
    weights: &ModelWeights<S>,
    params: &BoundParams,
    batch: &[&TimeSeries<S>],
) -> Result<NodeId> {
    let c = weights.num_classes();
    let mut total: Option<NodeId> = None;
    for s in batch {
        let x = g.constant(Tensor::vector(s.values.clone()));
        let ls = weights.log_probs_node(g, params, x)?;
        let label = s
            .label
            .ok_or_else(|| Error::data("training sample without label"))?;
        let mut onehot = vec![S::zero(); c];
        onehot[label] = S::one();
        let mask = g.constant(Tensor::vector(onehot));
        let picked = g.mul(ls, mask)?;
        let nll = g.sum(picked)?;
        total = Some(match total {
            None => nll,
            Some(t) => g.add(t, nll)?,
        });
    }
    let total = total.ok_or_else(|| Error::data("empty batch"))?;
    g.scale(total, -S::one() / S::lit(batch.len() as f64))
}

/// Mini-batch gradient descent on the mean cross-entropy. Deterministic in
/// `model.seed` (initialisation) and `train.seed` (shuffling).
pub fn train<S: Scalar>(
    train_set: &Dataset<S>,
    test_set: Option<&Dataset<S>>,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    model.validate()?;
    train.validate()?;
    train_set.validate()?;
    if train_set.series_len() != model.input_length {
        return Err(Error::data(format!(
            "training series have length {} but the model expects {}",
            train_set.series_len(),
            model.input_length
        )));
    }
    if train_set.num_classes > model.num_classes {
        return Err(Error::config(format!(
            "dataset has {} classes but the model only {}",
            train_set.num_classes, model.num_classes
        )));
    }
    if let Some(t) = test_set {
        t.validate()?;
        if t.series_len() != model.input_length {
            return Err(Error::data(format!(
                "test series have length {} but the model expects {}",
                t.series_len(),
                model.input_length
            )));
        }
    }

    let mut weights = ModelWeights::<S>::init(model.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let lr = S::lit(train.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(train.epochs);

    for epoch in 1..=train.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(train.batch_size).enumerate() {
            let batch: Vec<&TimeSeries<S>> = chunk.iter().map(|&i| &train_set.samples[i]).collect();
            let mut g = Graph::new();
            let params = weights.bind(&mut g, true);
            let loss = batch_loss(&mut g, &weights, &params, &batch)?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss {value} at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += value.as_f64() * chunk.len() as f64;
            g.backward(loss)?;
            for (name, node) in params.iter() {
                let grad = g.grad(node).expect("trainable parameter has a gradient");
                let t = weights.tensors.get_mut(name).expect("bound from layout");
                for (w, &d) in t.values_mut().iter_mut().zip(grad.values()) {
                    *w -= lr * d;
                }
            }
        }
        if weights.tensors.values().any(|t| !t.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite weights after epoch {epoch}"
            )));
        }
        log.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: weights.accuracy(train_set)?,
            test_acc: test_set.map(|t| weights.accuracy(t)).transpose()?,
        });
    }
    Ok(TrainOutcome { weights, log })
}
