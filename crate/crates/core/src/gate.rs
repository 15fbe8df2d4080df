//! Learned confidence gate for experts without a usable native confidence.
//!
//! A small multilayer perceptron maps a caller-supplied feature vector to a
//! logit. It is trained only to order samples by their metric: for every
//! in-batch pair the target is 1, 0.5 or 0 depending on which sample scored
//! higher, and the loss is binary cross-entropy on the sigmoid of the logit
//! difference. The routed confidence is the sigmoid of the logit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows used to score each epoch when picking the best parameters.
const LOSS_EVAL_ROWS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `[outputs × inputs]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl GateModel {
    fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "a gate needs at least an input and an output layer".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer sizes {layer_sizes:?} contain an empty layer"
            )));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidConfig(format!(
                "gate output must have size 1, got {layer_sizes:?}"
            )));
        }
        Ok(())
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(GateModel {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    /// He-style normal initialisation scaled by `scale`, zero biases.
    pub fn random(layer_sizes: &[usize], scale: f64, rng: &mut impl rand::Rng) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes)?;
        for (layer, w) in model.layers.iter_mut().zip(layer_sizes.windows(2)) {
            let std = scale * (2.0 / w[0] as f64).sqrt();
            for v in &mut layer.weights {
                let z: f64 = StandardNormal.sample(rng);
                *v = std * z;
            }
        }
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Dimension {
                what: "gate parameters",
                expected: self.n_params(),
                found: params.len(),
            });
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        Self::check_sizes(&self.layer_sizes)?;
        if self.layers.len() != self.layer_sizes.len() - 1 {
            return Err(Error::Dimension {
                what: "gate layers",
                expected: self.layer_sizes.len() - 1,
                found: self.layers.len(),
            });
        }
        for (l, w) in self.layers.iter().zip(self.layer_sizes.windows(2)) {
            if l.weights.len() != w[0] * w[1] {
                return Err(Error::Dimension {
                    what: "gate weights",
                    expected: w[0] * w[1],
                    found: l.weights.len(),
                });
            }
            if l.bias.len() != w[1] {
                return Err(Error::Dimension {
                    what: "gate bias",
                    expected: w[1],
                    found: l.bias.len(),
                });
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("gate has non-finite parameters".into()));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "gate features",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping every layer's post-activation output.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let input = &acts[k];
            let n_in = input.len();
            let out: Vec<f64> = layer
                .bias
                .iter()
                .enumerate()
                .map(|(o, &b)| {
                    let row = &layer.weights[o * n_in..(o + 1) * n_in];
                    let z = b + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
                    if k == last {
                        z
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward_trace(x).last().unwrap()[0])
    }

    /// Accumulates `upstream * d logit / d params` into `grad`.
    fn backward(&self, acts: &[Vec<f64>], upstream: f64, grad: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.weights.len() + l.bias.len();
        }
        let mut delta = vec![upstream];
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &acts[k];
            let n_in = input.len();
            let base = offsets[k];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                for (g, v) in row.iter_mut().zip(input) {
                    *g += d * v;
                }
                grad[base + layer.weights.len() + o] += d;
            }
            if k == 0 {
                break;
            }
            // hidden activations are ReLU outputs: positive exactly where active
            delta = (0..n_in)
                .map(|i| {
                    if input[i] > 0.0 {
                        delta
                            .iter()
                            .enumerate()
                            .map(|(o, d)| d * layer.weights[o * n_in + i])
                            .sum()
                    } else {
                        0.0
                    }
                })
                .collect();
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn pairwise_target(m_i: f64, m_j: f64) -> Result<f64> {
    if !m_i.is_finite() || !m_j.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "pairwise target needs finite metrics, got {m_i} and {m_j}"
        )));
    }
    Ok(if m_i > m_j {
        1.0
    } else if m_i < m_j {
        0.0
    } else {
        0.5
    })
}

/// Binary cross-entropy of `sigmoid(z)` against `target`.
pub fn pair_bce(z: f64, target: f64) -> f64 {
    softplus(z) - target * z
}

#[derive(Debug, Clone, Copy)]
pub struct RankingBatch<'a> {
    features: &'a [Vec<f64>],
    metric: &'a [f64],
}

impl<'a> RankingBatch<'a> {
    pub fn new(features: &'a [Vec<f64>], metric: &'a [f64]) -> Result<Self> {
        if features.len() != metric.len() {
            return Err(Error::Dimension {
                what: "batch metrics",
                expected: features.len(),
                found: metric.len(),
            });
        }
        if features.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a ranking batch needs at least 2 rows, got {}",
                features.len()
            )));
        }
        if metric.iter().any(|m| !m.is_finite())
            || features.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument("ranking batch has non-finite values".into()));
        }
        Ok(RankingBatch { features, metric })
    }

    pub fn len(&self) -> usize {
        self.metric.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metric.is_empty()
    }
}

fn pair_norm(b: usize) -> f64 {
    2.0 / (b as f64 * (b as f64 - 1.0))
}

fn logits_of(model: &GateModel, features: &[Vec<f64>]) -> Result<Vec<f64>> {
    features.iter().map(|x| model.logit(x)).collect()
}

fn loss_from_logits(logits: &[f64], metric: &[f64]) -> f64 {
    let b = logits.len();
    let mut total = 0.0;
    for i in 0..b {
        let mut row = 0.0;
        for j in i + 1..b {
            let t = pairwise_target(metric[i], metric[j]).unwrap_or(0.5);
            row += pair_bce(logits[i] - logits[j], t);
        }
        total += row;
    }
    total * pair_norm(b)
}

pub fn pairwise_loss(model: &GateModel, batch: &RankingBatch) -> Result<f64> {
    let logits = logits_of(model, batch.features)?;
    Ok(loss_from_logits(&logits, batch.metric))
}

/// Analytic gradient of [`pairwise_loss`], flattened like [`GateModel::params`].
pub fn loss_gradient(model: &GateModel, batch: &RankingBatch) -> Result<Vec<f64>> {
    for x in batch.features {
        model.check_input(x)?;
    }
    let traces: Vec<Vec<Vec<f64>>> = batch.features.iter().map(|x| model.forward_trace(x)).collect();
    let logits: Vec<f64> = traces.iter().map(|t| t.last().unwrap()[0]).collect();
    let b = logits.len();
    let norm = pair_norm(b);
    let mut upstream = vec![0.0; b];
    for i in 0..b {
        for j in i + 1..b {
            let t = pairwise_target(batch.metric[i], batch.metric[j])?;
            let d = (sigmoid(logits[i] - logits[j]) - t) * norm;
            upstream[i] += d;
            upstream[j] -= d;
        }
    }
    let mut grad = vec![0.0; model.n_params()];
    for (acts, &u) in traces.iter().zip(&upstream) {
        if u != 0.0 {
            model.backward(acts, u, &mut grad);
        }
    }
    Ok(grad)
}

pub fn confidence(model: &GateModel, x: &[f64]) -> Result<f64> {
    Ok(sigmoid(model.logit(x)?))
}

/// Fraction of pairs with distinct metrics that the scores order the same
/// way. Equal scores count as half a match. Returns 0.5 when no pair has
/// distinct metrics.
pub fn ranking_accuracy(scores: &[f64], metric: &[f64]) -> f64 {
    let mut agree = 0.0;
    let mut pairs = 0u64;
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            if metric[i] == metric[j] {
                continue;
            }
            pairs += 1;
            let ds = scores[i] - scores[j];
            let dm = metric[i] - metric[j];
            if ds == 0.0 {
                agree += 0.5;
            } else if (ds > 0.0) == (dm > 0.0) {
                agree += 1.0;
            }
        }
    }
    if pairs == 0 {
        0.5
    } else {
        agree / pairs as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCfg {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainCfg {
    fn default() -> Self {
        TrainCfg {
            hidden: vec![16],
            batch_size: 32,
            learning_rate: 0.1,
            epochs: 100,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl TrainCfg {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch size {} must be at least 2",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "init scale {} must be non-negative",
                self.init_scale
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layers must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub id: String,
    pub x: Vec<f64>,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: GateModel,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub best_epoch: Option<usize>,
}

/// Mini-batch gradient descent on the pairwise loss. After every epoch the
/// loss is measured on a fixed subset of at most 1024 rows and the best
/// parameters seen so far (starting with the initialisation) are kept.
pub fn train(rows: &[FeatureRow], cfg: &TrainCfg) -> Result<TrainReport> {
    cfg.validate()?;
    if rows.len() < cfg.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{} rows is fewer than the batch size {}",
            rows.len(),
            cfg.batch_size
        )));
    }
    let dim = rows[0].x.len();
    if dim == 0 {
        return Err(Error::InvalidArgument("feature vectors are empty".into()));
    }
    for r in rows {
        if r.x.len() != dim {
            return Err(Error::Dimension {
                what: "feature vector",
                expected: dim,
                found: r.x.len(),
            });
        }
        if !r.metric.is_finite() || r.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("row {} has non-finite values", r.id)));
        }
    }

    let mut sizes = vec![dim];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = GateModel::random(&sizes, cfg.init_scale, &mut rng)?;

    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng);
    let eval_idx = &order[..rows.len().min(LOSS_EVAL_ROWS)];
    let eval_x: Vec<Vec<f64>> = eval_idx.iter().map(|&i| rows[i].x.clone()).collect();
    let eval_m: Vec<f64> = eval_idx.iter().map(|&i| rows[i].metric).collect();
    let eval_loss = |m: &GateModel| -> Result<f64> {
        Ok(loss_from_logits(&logits_of(m, &eval_x)?, &eval_m))
    };

    let initial_loss = eval_loss(&model)?;
    if rows.iter().all(|r| r.metric == rows[0].metric) {
        log::warn!("every row has the same metric; returning the initial gate");
        return Ok(TrainReport {
            model,
            initial_loss,
            final_loss: initial_loss,
            best_epoch: None,
        });
    }

    let mut best = (initial_loss, model.params(), None);
    let mut params = model.params();
    let mut bx: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_size);
    let mut bm: Vec<f64> = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            bx.clear();
            bm.clear();
            for &i in chunk {
                bx.push(rows[i].x.clone());
                bm.push(rows[i].metric);
            }
            let batch = RankingBatch::new(&bx, &bm)?;
            let grad = loss_gradient(&model, &batch)?;
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            model.set_params(&params)?;
        }
        let loss = eval_loss(&model)?;
        log::debug!("epoch {epoch}: loss {loss:.6}");
        if loss < best.0 {
            best = (loss, params.clone(), Some(epoch));
        }
    }
    model.set_params(&best.1)?;
    Ok(TrainReport {
        model,
        initial_loss,
        final_loss: best.0,
        best_epoch: best.2,
    })
}

pub fn read_features<R: BufRead>(reader: R) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Malformed {
            line: k + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: FeatureRow = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: k + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(BufReader::new(file))
}

pub fn write_features<W: Write>(rows: &[FeatureRow], mut out: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<features>", e))?;
    }
    Ok(())
}

pub fn save_features(rows: &[FeatureRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_features(rows, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_model(model: &GateModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(model)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GateModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: GateModel = serde_json::from_str(&text)?;
    model.validate()?;
    Ok(model)
}
