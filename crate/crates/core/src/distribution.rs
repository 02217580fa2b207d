//! Dataset-level label statistics.
//!
//! The appearance frequency of a class is the fraction of images that
//! contain at least one of its pixels; pixel share is its fraction of all
//! non-ignore pixels. Both come from one mergeable count pass.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::{ClassTable, LabelMap};
use crate::num::Real;

/// Raw per-class counts. Merging is associative and commutative, so
/// partial counts over any partition of the dataset combine exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    pub images: u64,
    pub images_with: [u64; 256],
    pub pixels: [u64; 256],
}

impl Default for ClassCounts {
    fn default() -> Self {
        ClassCounts {
            images: 0,
            images_with: [0; 256],
            pixels: [0; 256],
        }
    }
}

impl ClassCounts {
    pub fn add(&mut self, map: &LabelMap, table: &ClassTable) -> Result<()> {
        table.validate(map)?;
        let mut here = [0u64; 256];
        for &v in map.data() {
            here[v as usize] += 1;
        }
        here[table.ignore_id() as usize] = 0;
        for (id, &n) in here.iter().enumerate() {
            if n > 0 {
                self.images_with[id] += 1;
                self.pixels[id] += n;
            }
        }
        self.images += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ClassCounts) {
        self.images += other.images;
        for i in 0..256 {
            self.images_with[i] += other.images_with[i];
            self.pixels[i] += other.pixels[i];
        }
    }

    pub fn report<T: Real>(&self, table: &ClassTable) -> Result<FrequencyReport<T>> {
        if self.images == 0 {
            return Err(Error::Analysis("empty dataset".into()));
        }
        let total: u64 = table.ids().map(|id| self.pixels[id as usize]).sum();
        let n = T::from_u64(self.images).expect("count fits");
        let classes = table
            .entries()
            .iter()
            .map(|e| {
                let id = e.id as usize;
                let pixel_share = if total == 0 {
                    T::zero()
                } else {
                    T::from_u64(self.pixels[id]).unwrap() / T::from_u64(total).unwrap()
                };
                ClassFrequency {
                    id: e.id,
                    name: e.name.clone(),
                    appearance_frequency: T::from_u64(self.images_with[id]).unwrap() / n,
                    pixel_share,
                    images_with: self.images_with[id],
                }
            })
            .collect();
        Ok(FrequencyReport {
            dataset_size: self.images,
            classes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFrequency<T> {
    pub id: u8,
    pub name: String,
    pub appearance_frequency: T,
    pub pixel_share: T,
    #[serde(default)]
    pub images_with: u64,
}

/// Per-class statistics in class-table order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport<T> {
    pub dataset_size: u64,
    pub classes: Vec<ClassFrequency<T>>,
}

impl<T: Real> FrequencyReport<T> {
    pub fn get(&self, id: u8) -> Option<&ClassFrequency<T>> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn frequency(&self, id: u8) -> Option<T> {
        self.get(id).map(|c| c.appearance_frequency)
    }
}

pub fn appearance_frequency<'a, T: Real>(
    maps: impl IntoIterator<Item = &'a LabelMap>,
    table: &ClassTable,
) -> Result<FrequencyReport<T>> {
    let mut counts = ClassCounts::default();
    for m in maps {
        counts.add(m, table)?;
    }
    counts.report(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPair<T> {
    pub id: u8,
    pub frequency: T,
    pub accuracy: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport<T> {
    pub pearson: T,
    pub spearman: T,
    pub pairs: Vec<CorrelationPair<T>>,
}

fn pearson<T: Real>(xs: &[T], ys: &[T]) -> Option<T> {
    let n = T::of_usize(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return None;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Some(r.max(-T::one()).min(T::one()))
}

/// 1-based ranks; tied values share the mean of their positions.
fn average_ranks<T: Real>(xs: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![T::zero(); xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = T::of_usize(i + j + 2) / T::of(2.0);
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson and Spearman correlation between appearance frequency and a
/// per-class accuracy (for example IoU), over classes present in both.
pub fn rank_correlation<T: Real>(
    freq: &FrequencyReport<T>,
    accuracy: &BTreeMap<u8, T>,
) -> Result<CorrelationReport<T>> {
    let pairs: Vec<CorrelationPair<T>> = freq
        .classes
        .iter()
        .filter_map(|c| {
            accuracy.get(&c.id).map(|&a| CorrelationPair {
                id: c.id,
                frequency: c.appearance_frequency,
                accuracy: a,
            })
        })
        .collect();
    if pairs.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 classes, got {}",
            pairs.len()
        )));
    }
    if pairs
        .iter()
        .any(|p| !p.frequency.is_finite() || !p.accuracy.is_finite())
    {
        return Err(Error::UndefinedCorrelation("non-finite value".into()));
    }
    let xs: Vec<T> = pairs.iter().map(|p| p.frequency).collect();
    let ys: Vec<T> = pairs.iter().map(|p| p.accuracy).collect();
    let zero_var = || Error::UndefinedCorrelation("zero variance".into());
    let pearson_r = pearson(&xs, &ys).ok_or_else(zero_var)?;
    let spearman_r = pearson(&average_ranks(&xs), &average_ranks(&ys)).ok_or_else(zero_var)?;
    Ok(CorrelationReport {
        pearson: pearson_r,
        spearman: spearman_r,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelection {
    /// The `k` rarest classes.
    Count(usize),
    /// Every class whose appearance frequency is below the threshold.
    Threshold(f64),
}

/// Rarest classes first, ties by ascending id. Classes that never appear
/// are skipped: there is nothing to sample for them.
pub fn select_target_classes<T: Real>(
    freq: &FrequencyReport<T>,
    selection: TargetSelection,
) -> Result<Vec<u8>> {
    let mut present: Vec<(T, u8)> = freq
        .classes
        .iter()
        .filter(|c| c.appearance_frequency > T::zero())
        .map(|c| (c.appearance_frequency, c.id))
        .collect();
    present.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite frequencies")
            .then(a.1.cmp(&b.1))
    });
    match selection {
        TargetSelection::Count(k) => {
            if k == 0 {
                return Err(Error::Config("target count must be at least 1".into()));
            }
            if k > present.len() {
                log::warn!(
                    "requested {k} target classes but only {} are present; clipping",
                    present.len()
                );
            }
            Ok(present.into_iter().take(k).map(|(_, id)| id).collect())
        }
        TargetSelection::Threshold(t) => {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("threshold {t} outside (0, 1)")));
            }
            let t = T::of(t);
            Ok(present
                .into_iter()
                .filter(|(f, _)| *f < t)
                .map(|(_, id)| id)
                .collect())
        }
    }
}
