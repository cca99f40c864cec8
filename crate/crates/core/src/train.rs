//! Adam, the step learning-rate schedule, the mini-batch loop and top-1
//! evaluation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SkeletonSample;
use crate::engine::{Array, ParamStore};
use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::layers::{argmax, bone_transform, fuse_scores, DdGcn};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    /// Epochs between multiplicative decays.
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 64,
            base_lr: 0.1,
            decay_factor: 0.1,
            decay_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.base_lr, self.decay_factor, self.eps];
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::Config(
                "epochs, batch_size and decay_every must be positive".into(),
            ));
        }
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config("base_lr, decay_factor and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `base_lr · decay_factor^⌊epoch / decay_every⌋`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.base_lr * config.decay_factor.powi((epoch / config.decay_every) as i32)
}

/// First and second moments per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| Array::zeros(p.value.shape())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update from the gradients accumulated in `store`.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64, config: &TrainConfig) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Shape {
            op: "adam_step",
            detail: format!("state for {} parameters, store has {}", state.m.len(), store.len()),
        });
    }
    for (p, m) in store.iter().zip(&state.m) {
        if p.value.shape() != m.shape() || p.grad.shape() != m.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!(
                    "{}: value {:?}, grad {:?}, state {:?}",
                    p.name,
                    p.value.shape(),
                    p.grad.shape(),
                    m.shape()
                ),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad.data();
        let (m, v) = (m.data_mut(), v.data_mut());
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + config.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean cross-entropy over the epoch, each sample scored before its
    /// batch's update.
    pub loss: f64,
    pub accuracy: f64,
}

/// Shuffled order for one epoch.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// Mini-batch training. Per-sample gradients run in parallel and are summed in
/// sample order, so the result does not depend on the thread count.
pub fn train(model: &mut DdGcn, dataset: &[SkeletonSample], config: &TrainConfig) -> Result<Vec<EpochRecord>> {
    train_with(model, dataset, config, |_| {})
}

/// [`train`] with a callback after each epoch.
pub fn train_with(
    model: &mut DdGcn,
    dataset: &[SkeletonSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let mut state = AdamState::new(model.params());
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in epoch_order(dataset.len(), config.seed, epoch).chunks(config.batch_size) {
            let shared: &DdGcn = model;
            let results = batch
                .par_iter()
                .map(|&i| shared.loss_and_grad(&dataset[i].frames, dataset[i].label))
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let store = model.params_mut();
            store.zero_grad();
            for ((loss, grads, probs), &i) in results.iter().zip(batch) {
                grads.accumulate_into(store, scale);
                loss_sum += loss;
                correct += usize::from(argmax(probs) == dataset[i].label);
            }
            adam_step(store, &mut state, lr, config)?;
        }
        let record = EpochRecord {
            epoch,
            lr,
            loss: loss_sum / dataset.len() as f64,
            accuracy: correct as f64 / dataset.len() as f64,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(history)
}

/// Input representation fed to a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Joint,
    Bone,
}

impl Stream {
    pub fn input(self, sample: &SkeletonSample, topology: &SkeletonTopology) -> Result<Array> {
        match self {
            Stream::Joint => Ok(sample.frames.clone()),
            Stream::Bone => bone_transform(&sample.frames, topology),
        }
    }

    pub fn prepare(self, dataset: &[SkeletonSample], topology: &SkeletonTopology) -> Result<Vec<SkeletonSample>> {
        dataset
            .iter()
            .map(|s| {
                Ok(SkeletonSample {
                    frames: self.input(s, topology)?,
                    ..s.clone()
                })
            })
            .collect()
    }
}

fn nonempty(dataset: &[SkeletonSample]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Data("evaluation dataset is empty".into()));
    }
    Ok(())
}

fn accuracy(predictions: &[usize], dataset: &[SkeletonSample]) -> f64 {
    let correct = predictions.iter().zip(dataset).filter(|(p, s)| **p == s.label).count();
    correct as f64 / dataset.len() as f64
}

/// Top-1 accuracy; ties go to the lowest class index.
pub fn evaluate(model: &DdGcn, dataset: &[SkeletonSample]) -> Result<f64> {
    nonempty(dataset)?;
    let preds = dataset
        .par_iter()
        .map(|s| model.predict(&s.frames).map(|p| argmax(&p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(accuracy(&preds, dataset))
}

/// Top-1 accuracy of the mean of two streams' class probabilities.
pub fn evaluate_fused_streams(a: (&DdGcn, Stream), b: (&DdGcn, Stream), dataset: &[SkeletonSample]) -> Result<f64> {
    nonempty(dataset)?;
    let preds = dataset
        .par_iter()
        .map(|s| {
            let pa = a.0.predict(&a.1.input(s, &a.0.config().topology)?)?;
            let pb = b.0.predict(&b.1.input(s, &b.0.config().topology)?)?;
            Ok(argmax(&fuse_scores(&pa, &pb)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(accuracy(&preds, dataset))
}

/// Joint model on raw coordinates, bone model on bone vectors.
pub fn evaluate_fused(joint: &DdGcn, bone: &DdGcn, dataset: &[SkeletonSample]) -> Result<f64> {
    evaluate_fused_streams((joint, Stream::Joint), (bone, Stream::Bone), dataset)
}

/// Mean cross-entropy without updating anything.
pub fn mean_loss(model: &DdGcn, dataset: &[SkeletonSample]) -> Result<f64> {
    nonempty(dataset)?;
    let losses = dataset
        .par_iter()
        .map(|s| {
            let p = model.predict(&s.frames)?;
            p.get(s.label)
                .map(|q| -q.ln())
                .ok_or_else(|| Error::Data(format!("sample {}: label {} out of range", s.id, s.label)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / dataset.len() as f64)
}

pub const HISTORY_HEADER: &str = "epoch,lr,loss,accuracy";

/// Writes `epoch,lr,loss,accuracy` rows with shortest round-trip floats.
pub fn write_history<W: Write>(mut out: W, history: &[EpochRecord]) -> Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in history {
        writeln!(out, "{},{:?},{:?},{:?}", r.epoch, r.lr, r.loss, r.accuracy)?;
    }
    out.flush()?;
    Ok(())
}
