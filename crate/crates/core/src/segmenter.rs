//! Per-pixel multinomial logistic regression.
//!
//! Each pixel is described by `[r, g, b, x, y, 1]` (channels and
//! coordinates scaled to [0, 1]) and scored by a `K x 6` weight matrix.
//! Training is mini-batch gradient descent on mean cross-entropy with an
//! L2 penalty `(l2 / 2) * |W|^2`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generator::RenderedImage;
use crate::labelmap::{ClassTable, LabelMap};
use crate::mixer::{ManifestEntry, TrainingSchedule};
use crate::num::Real;
use crate::seed;

pub const FEATURES: usize = 6;

pub type PixelFeatures<T> = [T; FEATURES];

pub fn pixel_features<T: Real>(img: &RenderedImage, x: usize, y: usize) -> PixelFeatures<T> {
    let [r, g, b] = img.pixel(x, y);
    let norm = |v: usize, n: usize| {
        if n > 1 {
            T::of(v as f64 / (n - 1) as f64)
        } else {
            T::zero()
        }
    };
    let c = |v: u8| T::of(f64::from(v) / 255.0);
    [
        c(r),
        c(g),
        c(b),
        norm(x, img.width()),
        norm(y, img.height()),
        T::one(),
    ]
}

/// A pixel with the table index of its ground-truth class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<T> {
    pub features: PixelFeatures<T>,
    pub target: usize,
}

pub fn table_hash(table: &ClassTable) -> String {
    hex::encode(Sha256::digest(table.to_json().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel<T> {
    /// Class ids, one per weight row, in class-table order.
    pub classes: Vec<u8>,
    pub table_hash: String,
    /// Row-major `classes.len() x FEATURES`.
    pub weights: Vec<T>,
}

impl<T: Real> SoftmaxModel<T> {
    pub fn zeros(table: &ClassTable) -> Self {
        SoftmaxModel {
            classes: table.ids().collect(),
            table_hash: table_hash(table),
            weights: vec![T::zero(); table.len() * FEATURES],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.weights[k * FEATURES..(k + 1) * FEATURES]
    }

    pub fn scores(&self, f: &PixelFeatures<T>) -> Vec<T> {
        (0..self.num_classes())
            .map(|k| {
                self.row(k)
                    .iter()
                    .zip(f)
                    .fold(T::zero(), |acc, (&w, &x)| acc + w * x)
            })
            .collect()
    }

    /// Index of the best score; ties go to the lowest class id.
    pub fn argmax(&self, scores: &[T]) -> usize {
        let mut best = 0;
        for k in 1..scores.len() {
            if scores[k] > scores[best]
                || (scores[k] == scores[best] && self.classes[k] < self.classes[best])
            {
                best = k;
            }
        }
        best
    }

    pub fn check(&self, table: &ClassTable) -> Result<()> {
        if self.table_hash != table_hash(table) {
            return Err(Error::Config("model was trained on a different class table".into()));
        }
        if self.weights.len() != self.num_classes() * FEATURES {
            return Err(Error::Config("weight matrix has the wrong shape".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("model has non-finite weights".into()));
        }
        Ok(())
    }
}

/// Stable softmax in place; returns log-sum-exp.
fn softmax_in_place<T: Real>(scores: &mut [T]) -> T {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum = sum + *s;
    }
    for s in scores.iter_mut() {
        *s = *s / sum;
    }
    max + sum.ln()
}

pub fn softmax<T: Real>(scores: &[T]) -> Vec<T> {
    let mut p = scores.to_vec();
    softmax_in_place(&mut p);
    p
}

/// Mean cross-entropy plus `(l2 / 2) * |W|^2`, and its gradient in the
/// model's weight layout.
pub fn loss_and_grad<T: Real>(
    model: &SoftmaxModel<T>,
    batch: &[Sample<T>],
    l2: T,
) -> Result<(T, Vec<T>)> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let k = model.num_classes();
    let mut grad = vec![T::zero(); model.weights.len()];
    let mut loss = T::zero();
    for s in batch {
        if s.target >= k {
            return Err(Error::Training(format!("target index {} out of range", s.target)));
        }
        let mut p = model.scores(&s.features);
        let lse = softmax_in_place(&mut p);
        let target_score = model
            .row(s.target)
            .iter()
            .zip(&s.features)
            .fold(T::zero(), |acc, (&w, &x)| acc + w * x);
        loss = loss + (lse - target_score);
        p[s.target] = p[s.target] - T::one();
        for (c, &pc) in p.iter().enumerate() {
            for (g, &x) in grad[c * FEATURES..(c + 1) * FEATURES].iter_mut().zip(&s.features) {
                *g = *g + pc * x;
            }
        }
    }
    let n = T::of_usize(batch.len());
    let half = T::of(0.5);
    let mut penalty = T::zero();
    for (g, &w) in grad.iter_mut().zip(&model.weights) {
        *g = *g / n + l2 * w;
        penalty = penalty + w * w;
    }
    let loss = loss / n + half * l2 * penalty;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    Ok((loss, grad))
}

/// Largest relative gap between the analytic gradient and a central
/// difference with step `epsilon`, over every weight.
pub fn finite_diff_check<T: Real>(
    model: &SoftmaxModel<T>,
    batch: &[Sample<T>],
    l2: T,
    epsilon: T,
) -> Result<T> {
    let (_, analytic) = loss_and_grad(model, batch, l2)?;
    let mut probe = model.clone();
    let two = T::of(2.0);
    let floor = T::of(1e-12);
    let mut worst = T::zero();
    for i in 0..model.weights.len() {
        let w = model.weights[i];
        probe.weights[i] = w + epsilon;
        let (up, _) = loss_and_grad(&probe, batch, l2)?;
        probe.weights[i] = w - epsilon;
        let (down, _) = loss_and_grad(&probe, batch, l2)?;
        probe.weights[i] = w;
        let numeric = (up - down) / (two * epsilon);
        let err = (analytic[i] - numeric).abs() / floor.max(analytic[i].abs() + numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Passes over each schedule phase.
    pub epochs: usize,
    /// Pixels per gradient step.
    pub batch: usize,
    pub l2: f64,
    pub seed: u64,
    /// Fraction of each image's labeled pixels drawn per epoch.
    pub pixel_subsample: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2.0,
            epochs: 16,
            batch: 256,
            l2: 0.0,
            seed: 0,
            pixel_subsample: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch must be at least 1".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        if !(self.pixel_subsample > 0.0 && self.pixel_subsample <= 1.0) {
            return Err(Error::Config("pixel subsample must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: RenderedImage,
    pub label: LabelMap,
}

/// In-memory image/label pairs keyed by a manifest entry's image path.
#[derive(Debug, Clone, Default)]
pub struct PairStore {
    pairs: HashMap<String, LabeledImage>,
}

impl PairStore {
    pub fn insert(&mut self, key: impl Into<String>, image: RenderedImage, label: LabelMap) -> Result<()> {
        if image.dims() != label.dims() {
            return Err(Error::Config(format!(
                "image {:?} and label {:?} sizes differ",
                image.dims(),
                label.dims()
            )));
        }
        self.pairs.insert(key.into(), LabeledImage { image, label });
        Ok(())
    }

    pub fn get(&self, entry: &ManifestEntry) -> Result<&LabeledImage> {
        self.pairs
            .get(&entry.image)
            .ok_or_else(|| Error::Training(format!("no data for manifest entry {:?}", entry.image)))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub phase: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub model: SoftmaxModel<T>,
    pub trace: Vec<EpochLoss>,
}

pub fn loss_trace_csv(trace: &[EpochLoss]) -> String {
    let mut out = String::from("phase,epoch,loss\n");
    for e in trace {
        out.push_str(&format!("{},{},{}\n", e.phase, e.epoch, e.loss));
    }
    out
}

/// Gradient descent over the schedule's phases in order, carrying the
/// weights from one phase into the next. The trace records the mean batch
/// loss of every epoch.
pub fn train<T: Real>(
    schedule: &TrainingSchedule,
    data: &PairStore,
    table: &ClassTable,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    train_from(SoftmaxModel::zeros(table), schedule, data, table, config)
}

pub fn train_from<T: Real>(
    mut model: SoftmaxModel<T>,
    schedule: &TrainingSchedule,
    data: &PairStore,
    table: &ClassTable,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    model.check(table)?;
    if schedule.phases.iter().all(Vec::is_empty) {
        return Err(Error::Training("schedule has no entries".into()));
    }
    let lr = T::of(config.learning_rate);
    let l2 = T::of(config.l2);
    let ignore = table.ignore_id();
    let mut trace = Vec::new();
    let mut any_pixels = false;

    for (phase_idx, phase) in schedule.phases.iter().enumerate() {
        let images: Vec<&LabeledImage> = phase.iter().map(|e| data.get(e)).collect::<Result<_>>()?;
        for lab in &images {
            table.validate(&lab.label)?;
        }
        for epoch in 0..config.epochs {
            let mut rng = seed::rng(seed::derive(
                seed::derive(config.seed, phase_idx as u64),
                epoch as u64,
            ));
            // (image, pixel) pairs for this epoch, then one global shuffle.
            let mut picks: Vec<(u32, u32)> = Vec::new();
            for (i, lab) in images.iter().enumerate() {
                for (p, &v) in lab.label.data().iter().enumerate() {
                    if v != ignore
                        && (config.pixel_subsample >= 1.0
                            || rng.random::<f64>() < config.pixel_subsample)
                    {
                        picks.push((i as u32, p as u32));
                    }
                }
            }
            if picks.is_empty() {
                continue;
            }
            any_pixels = true;
            picks.shuffle(&mut rng);
            let mut batch = Vec::with_capacity(config.batch);
            let mut epoch_loss = 0.0;
            let mut steps = 0usize;
            for chunk in picks.chunks(config.batch) {
                batch.clear();
                for &(i, p) in chunk {
                    let lab = images[i as usize];
                    let w = lab.label.width();
                    let (x, y) = (p as usize % w, p as usize / w);
                    let v = lab.label.data()[p as usize];
                    batch.push(Sample {
                        features: pixel_features(&lab.image, x, y),
                        target: table.index_of(v).expect("validated"),
                    });
                }
                let (loss, grad) = loss_and_grad(&model, &batch, l2)?;
                for (w, g) in model.weights.iter_mut().zip(&grad) {
                    *w = *w - lr * *g;
                }
                epoch_loss += loss.as_f64();
                steps += 1;
            }
            trace.push(EpochLoss {
                phase: phase_idx,
                epoch,
                loss: epoch_loss / steps as f64,
            });
        }
    }
    if !any_pixels {
        return Err(Error::Training("every pixel is ignored".into()));
    }
    Ok(TrainOutcome { model, trace })
}

pub fn predict<T: Real>(model: &SoftmaxModel<T>, image: &RenderedImage) -> LabelMap {
    let mut out = Vec::with_capacity(image.width() * image.height());
    for y in 0..image.height() {
        for x in 0..image.width() {
            let s = model.scores(&pixel_features(image, x, y));
            out.push(model.classes[model.argmax(&s)]);
        }
    }
    LabelMap::new(image.width(), image.height(), out).expect("image dimensions are valid")
}
