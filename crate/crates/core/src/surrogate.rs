//! Desk-scale stand-in for the jointly fine-tuned network.
//!
//! A shared linear trunk maps a standardized descriptor vector `x` to `F`
//! features `h = W^T x`; two disjoint softmax heads map `h` to target and
//! source class scores. A mini-batch contributes
//! `L = mean CE(target half) + lambda * mean CE(source half)`, each sample
//! only through the head of its own domain. Parameters are updated by SGD
//! with momentum and decoupled-from-loss weight decay (`v = mu v + g + wd theta`).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batcher::BatchSchedule;
use crate::codec::{self, Reader, Writer};
use crate::corpus::SampleId;
use crate::descriptor::{Descriptor, DescriptorTable};
use crate::error::{Error, Result};
use crate::hardloop::PredictionRecord;

/// Training contract consumed by the hard-sample loop.
///
/// `train` with a warm model continues from that model's parameters;
/// `predict` returns one valid probability vector per target sample.
pub trait Trainer {
    type Model: Clone;

    fn train(
        &mut self,
        schedule: &BatchSchedule,
        targets: &DescriptorTable,
        source: &DescriptorTable,
        warm: Option<&Self::Model>,
    ) -> Result<(Self::Model, TrainMetrics)>;

    fn predict(&self, model: &Self::Model, targets: &DescriptorTable) -> Result<Vec<PredictionRecord>>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub steps: usize,
    pub mean_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Shared feature width `F`.
    pub features: usize,
    /// Weight of the source-task loss.
    pub source_weight: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            features: 64,
            source_weight: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Target,
    Source,
}

/// Trainable parameter blocks; also used for gradients and momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `input x F`, row-major.
    pub trunk: Vec<f64>,
    /// `F x C_t`, row-major.
    pub target_w: Vec<f64>,
    pub target_b: Vec<f64>,
    /// `F x C_s`, row-major.
    pub source_w: Vec<f64>,
    pub source_b: Vec<f64>,
}

impl Params {
    fn zeros_like(other: &Params) -> Params {
        Params {
            trunk: vec![0.0; other.trunk.len()],
            target_w: vec![0.0; other.target_w.len()],
            target_b: vec![0.0; other.target_b.len()],
            source_w: vec![0.0; other.source_w.len()],
            source_b: vec![0.0; other.source_b.len()],
        }
    }

    pub fn blocks(&self) -> [&Vec<f64>; 5] {
        [&self.trunk, &self.target_w, &self.target_b, &self.source_w, &self.source_b]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.trunk,
            &mut self.target_w,
            &mut self.target_b,
            &mut self.source_w,
            &mut self.source_b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    input_dim: usize,
    features: usize,
    target_classes: usize,
    source_classes: usize,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    pub params: Params,
}

/// One training sample with already standardized features.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub label: usize,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

impl SurrogateModel {
    pub fn zeros(input_dim: usize, features: usize, target_classes: usize, source_classes: usize) -> Self {
        Self {
            input_dim,
            features,
            target_classes,
            source_classes,
            input_mean: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
            params: Params {
                trunk: vec![0.0; input_dim * features],
                target_w: vec![0.0; features * target_classes],
                target_b: vec![0.0; target_classes],
                source_w: vec![0.0; features * source_classes],
                source_b: vec![0.0; source_classes],
            },
        }
    }

    /// Seeded init: Glorot-uniform trunk, heads uniform in `[-0.01, 0.01]`.
    pub fn random(input_dim: usize, target_classes: usize, source_classes: usize, hp: &Hyperparameters) -> Self {
        let mut m = Self::zeros(input_dim, hp.features, target_classes, source_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let a = (6.0 / (input_dim + hp.features) as f64).sqrt();
        m.params.trunk.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
        for v in m.params.target_w.iter_mut().chain(m.params.source_w.iter_mut()) {
            *v = rng.random_range(-0.01..0.01);
        }
        m
    }

    /// Sets per-dimension standardization from the descriptors of `table`.
    pub fn fit_scaler(&mut self, table: &DescriptorTable) {
        let n = table.len().max(1) as f64;
        let mut mean = vec![0.0; self.input_dim];
        for d in table.descriptors() {
            mean.iter_mut().zip(d.values()).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; self.input_dim];
        for d in table.descriptors() {
            var.iter_mut()
                .zip(d.values().iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
        }
        self.input_scale = var.iter().map(|v| 1.0 / v.sqrt().max(1e-3)).collect();
        self.input_mean = mean;
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn classes(&self, head: Head) -> usize {
        match head {
            Head::Target => self.target_classes,
            Head::Source => self.source_classes,
        }
    }

    pub fn standardize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} inputs, descriptor has {}",
                self.input_dim,
                raw.len()
            )));
        }
        Ok(raw
            .iter()
            .zip(self.input_mean.iter().zip(&self.input_scale))
            .map(|(v, (m, s))| (v - m) * s)
            .collect())
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let f = self.features;
        let mut h = vec![0.0; f];
        for (xi, row) in x.iter().zip(self.params.trunk.chunks_exact(f)) {
            if *xi != 0.0 {
                h.iter_mut().zip(row).for_each(|(hj, w)| *hj += xi * w);
            }
        }
        h
    }

    fn head(&self, head: Head) -> (&[f64], &[f64], usize) {
        match head {
            Head::Target => (&self.params.target_w, &self.params.target_b, self.target_classes),
            Head::Source => (&self.params.source_w, &self.params.source_b, self.source_classes),
        }
    }

    fn logits_from_hidden(&self, head: Head, h: &[f64]) -> Vec<f64> {
        let (w, b, c) = self.head(head);
        let mut z = b.to_vec();
        for (hj, row) in h.iter().zip(w.chunks_exact(c)) {
            z.iter_mut().zip(row).for_each(|(zk, wk)| *zk += hj * wk);
        }
        z
    }

    pub fn logits(&self, head: Head, x: &[f64]) -> Vec<f64> {
        self.logits_from_hidden(head, &self.hidden(x))
    }

    /// Softmax class probabilities for a standardized input.
    pub fn probabilities(&self, head: Head, x: &[f64]) -> Vec<f64> {
        let mut z = self.logits(head, x);
        softmax_in_place(&mut z);
        z
    }

    /// Batch loss (without weight decay) and its gradient.
    pub fn loss_and_grad(&self, target: &[Example], source: &[Example], source_weight: f64) -> (f64, Params) {
        let mut g = Params::zeros_like(&self.params);
        let mut loss = 0.0;
        let f = self.features;
        for (half, head, weight) in [(target, Head::Target, 1.0), (source, Head::Source, source_weight)] {
            if half.is_empty() || weight == 0.0 {
                continue;
            }
            let coef = weight / half.len() as f64;
            let c = self.classes(head);
            for ex in half {
                let h = self.hidden(ex.x);
                let mut z = self.logits_from_hidden(head, &h);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += coef * (lse - z[ex.label]);
                softmax_in_place(&mut z);
                z[ex.label] -= 1.0;
                z.iter_mut().for_each(|v| *v *= coef);
                let (w, gw, gb) = match head {
                    Head::Target => (&self.params.target_w, &mut g.target_w, &mut g.target_b),
                    Head::Source => (&self.params.source_w, &mut g.source_w, &mut g.source_b),
                };
                gb.iter_mut().zip(&z).for_each(|(b, dz)| *b += dz);
                let mut gh = vec![0.0; f];
                for j in 0..f {
                    let wrow = &w[j * c..(j + 1) * c];
                    let grow = &mut gw[j * c..(j + 1) * c];
                    let mut acc = 0.0;
                    for k in 0..c {
                        grow[k] += h[j] * z[k];
                        acc += wrow[k] * z[k];
                    }
                    gh[j] = acc;
                }
                for (xi, grow) in ex.x.iter().zip(g.trunk.chunks_exact_mut(f)) {
                    if *xi != 0.0 {
                        grow.iter_mut().zip(&gh).for_each(|(gt, d)| *gt += xi * d);
                    }
                }
            }
        }
        (loss, g)
    }

    pub fn loss(&self, target: &[Example], source: &[Example], source_weight: f64) -> f64 {
        let mut loss = 0.0;
        for (half, head, weight) in [(target, Head::Target, 1.0), (source, Head::Source, source_weight)] {
            if half.is_empty() || weight == 0.0 {
                continue;
            }
            for ex in half {
                let z = self.logits(head, ex.x);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += weight / half.len() as f64 * (lse - z[ex.label]);
            }
        }
        loss
    }
}

/// SGD with momentum; the velocity starts at zero for every `train` call.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<Params>,
}

impl Sgd {
    pub fn new(hp: &Hyperparameters) -> Self {
        Self {
            learning_rate: hp.learning_rate,
            momentum: hp.momentum,
            weight_decay: hp.weight_decay,
            velocity: None,
        }
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        let v = self.velocity.get_or_insert_with(|| Params::zeros_like(params));
        for ((p, g), vel) in params.blocks_mut().into_iter().zip(grad.blocks()).zip(v.blocks_mut()) {
            for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(vel.iter_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *pi;
                *pi -= self.learning_rate * *vi;
            }
        }
    }
}

fn standardized(model: &SurrogateModel, table: &DescriptorTable, id: SampleId) -> Result<(Vec<f64>, usize)> {
    let d: &Descriptor = table.get(id).ok_or(Error::UnknownSample(id))?;
    Ok((model.standardize(d.values())?, d.label))
}

/// Runs every mini-batch of `schedule` once, in order.
pub fn train(
    schedule: &BatchSchedule,
    targets: &DescriptorTable,
    source: &DescriptorTable,
    warm: Option<&SurrogateModel>,
    hp: &Hyperparameters,
) -> Result<(SurrogateModel, TrainMetrics)> {
    let input = targets.layout().len();
    let ct = targets.num_classes().max(2);
    let cs = source.num_classes().max(2);
    let mut model = match warm {
        Some(m) => {
            if m.input_dim != input || m.target_classes < targets.num_classes() || m.source_classes < source.num_classes() {
                return Err(Error::DimensionMismatch(format!(
                    "warm model is {}->{}x{}/{}, data needs {}->{}/{}",
                    m.input_dim, m.features, m.target_classes, m.source_classes, input, ct, cs
                )));
            }
            m.clone()
        }
        None => {
            let mut m = SurrogateModel::random(input, ct, cs, hp);
            m.fit_scaler(targets);
            m
        }
    };
    let mut opt = Sgd::new(hp);
    let mut metrics = TrainMetrics::default();
    let mut loss_sum = 0.0;
    for (bi, batch) in schedule.batches.iter().enumerate() {
        let t: Vec<(Vec<f64>, usize)> = batch
            .targets()
            .map(|id| standardized(&model, targets, id))
            .collect::<Result<_>>()?;
        let s: Vec<(Vec<f64>, usize)> = if hp.source_weight == 0.0 {
            Vec::new()
        } else {
            batch
                .sources()
                .map(|id| standardized(&model, source, id))
                .collect::<Result<_>>()?
        };
        let te: Vec<Example> = t.iter().map(|(x, l)| Example { x, label: *l }).collect();
        let se: Vec<Example> = s.iter().map(|(x, l)| Example { x, label: *l }).collect();
        let (loss, grad) = model.loss_and_grad(&te, &se, hp.source_weight);
        if !loss.is_finite() {
            return Err(Error::Divergence { batch: bi, loss });
        }
        opt.step(&mut model.params, &grad);
        if !model.params.is_finite() {
            return Err(Error::Divergence { batch: bi, loss: f64::NAN });
        }
        loss_sum += loss;
        metrics.final_loss = loss;
        metrics.steps += 1;
    }
    metrics.mean_loss = if metrics.steps > 0 { loss_sum / metrics.steps as f64 } else { 0.0 };
    Ok((model, metrics))
}

pub fn predict(model: &SurrogateModel, head: Head, table: &DescriptorTable) -> Result<Vec<PredictionRecord>> {
    table
        .descriptors()
        .iter()
        .map(|d| {
            let x = model.standardize(d.values())?;
            Ok(PredictionRecord {
                target: d.id,
                probabilities: model.probabilities(head, &x),
                true_label: d.label,
                iteration: 0,
            })
        })
        .collect()
}

/// Fraction of records whose argmax equals the true label.
pub fn accuracy(records: &[PredictionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.predicted() == r.true_label).count() as f64 / records.len() as f64
}

#[derive(Debug, Clone)]
pub struct SurrogateTrainer {
    pub hp: Hyperparameters,
}

impl Trainer for SurrogateTrainer {
    type Model = SurrogateModel;

    fn train(
        &mut self,
        schedule: &BatchSchedule,
        targets: &DescriptorTable,
        source: &DescriptorTable,
        warm: Option<&SurrogateModel>,
    ) -> Result<(SurrogateModel, TrainMetrics)> {
        train(schedule, targets, source, warm, &self.hp)
    }

    fn predict(&self, model: &SurrogateModel, targets: &DescriptorTable) -> Result<Vec<PredictionRecord>> {
        predict(model, Head::Target, targets)
    }
}

const MAGIC: &[u8; 4] = b"SJFM";
pub const MODEL_VERSION: u32 = 1;

/// Model file: `SJFM`, u32 version, u32 input/features/target classes/source
/// classes, then f32 blocks: input mean, input scale, trunk, target weights,
/// target bias, source weights, source bias.
pub fn serialize_model(m: &SurrogateModel) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(MODEL_VERSION);
    for d in [m.input_dim, m.features, m.target_classes, m.source_classes] {
        w.u32(d as u32);
    }
    for block in [&m.input_mean, &m.input_scale].into_iter().chain(m.params.blocks()) {
        block.iter().for_each(|v| w.f32(*v as f32));
    }
    w.into_inner()
}

pub fn parse_model(data: &[u8]) -> Result<SurrogateModel> {
    let mut r = Reader::new(data, "model");
    let version = r.header(MAGIC)?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            what: "model",
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let dims: Vec<usize> = (0..4).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
    let mut m = SurrogateModel::zeros(dims[0], dims[1], dims[2], dims[3]);
    let SurrogateModel {
        input_mean,
        input_scale,
        params,
        ..
    } = &mut m;
    for block in [input_mean, input_scale].into_iter().chain(params.blocks_mut()) {
        for v in block.iter_mut() {
            let x = r.f32()?;
            if !x.is_finite() {
                return Err(Error::NonFinite("model parameters".into()));
            }
            *v = x as f64;
        }
    }
    r.finish()?;
    Ok(m)
}

pub fn save_model(m: &SurrogateModel, path: &Path) -> Result<()> {
    codec::write_atomic(path, &serialize_model(m))
}

pub fn load_model(path: &Path) -> Result<SurrogateModel> {
    parse_model(&codec::read_file(path)?)
}
