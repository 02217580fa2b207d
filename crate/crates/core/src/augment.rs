//! Synthesis of new label maps from a library of single-class masks.
//!
//! Three strategies: overlaying one class onto maps that lack it, overlaying
//! several classes at once, and reconstructing whole maps from a banded
//! background canvas plus sampled masks. Masks are always pasted at the
//! coordinates they were cut from.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::{self, ClassTable, LabelMap, Mask};
use crate::seed;

pub const DEFAULT_MIN_PIXELS: usize = 64;

/// Masks bucketed by class, each tagged with the id of the map it came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskLibrary {
    by_class: BTreeMap<u8, Vec<Mask>>,
    min_pixels: usize,
}

impl MaskLibrary {
    pub fn classes(&self) -> impl Iterator<Item = u8> + '_ {
        self.by_class.keys().copied()
    }

    pub fn masks(&self, class_id: u8) -> &[Mask] {
        self.by_class.get(&class_id).map_or(&[], Vec::as_slice)
    }

    pub fn min_pixels(&self) -> usize {
        self.min_pixels
    }

    pub fn len(&self) -> usize {
        self.by_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_class.is_empty()
    }

    pub fn has_class(&self, class_id: u8) -> bool {
        self.by_class.contains_key(&class_id)
    }
}

pub fn build_mask_library(
    maps: &[(String, LabelMap)],
    table: &ClassTable,
    min_pixels: usize,
) -> Result<MaskLibrary> {
    if maps.is_empty() {
        log::warn!("building a mask library from an empty dataset");
    }
    let per_map: Vec<Vec<Mask>> = maps
        .par_iter()
        .map(|(id, m)| {
            Ok(labelmap::separate(m, table)?
                .into_iter()
                .filter(|k| k.pixel_count() >= min_pixels)
                .map(|k| k.with_source(id.clone()))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut by_class: BTreeMap<u8, Vec<Mask>> = BTreeMap::new();
    for k in per_map.into_iter().flatten() {
        by_class.entry(k.class_id()).or_default().push(k);
    }
    Ok(MaskLibrary {
        by_class,
        min_pixels,
    })
}

/// Uniform draw among the library's masks of `class_id`.
pub fn sample_mask<'a>(
    library: &'a MaskLibrary,
    class_id: u8,
    rng: &mut seed::Rng,
) -> Result<&'a Mask> {
    let masks = library.masks(class_id);
    if masks.is_empty() {
        return Err(Error::Sampling(class_id));
    }
    Ok(&masks[rng.random_range(0..masks.len())])
}

/// Horizontal background bands, top to bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Band>", into = "Vec<Band>")]
pub struct BasicLayout {
    bands: Vec<Band>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub class_id: u8,
    pub fraction: f64,
}

impl TryFrom<Vec<Band>> for BasicLayout {
    type Error = Error;

    fn try_from(bands: Vec<Band>) -> Result<Self> {
        BasicLayout::new(bands)
    }
}

impl From<BasicLayout> for Vec<Band> {
    fn from(l: BasicLayout) -> Self {
        l.bands
    }
}

impl BasicLayout {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::Config("layout needs at least one band".into()));
        }
        if let Some(b) = bands.iter().find(|b| !(b.fraction > 0.0)) {
            return Err(Error::Config(format!(
                "band of class {} has non-positive fraction {}",
                b.class_id, b.fraction
            )));
        }
        let sum: f64 = bands.iter().map(|b| b.fraction).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("band fractions sum to {sum}, not 1")));
        }
        Ok(BasicLayout { bands })
    }

    /// Sky over building over road, 0.35 / 0.35 / 0.30, with Cityscapes ids.
    pub fn cityscapes_default() -> Self {
        BasicLayout::new(vec![
            Band { class_id: 10, fraction: 0.35 },
            Band { class_id: 2, fraction: 0.35 },
            Band { class_id: 0, fraction: 0.30 },
        ])
        .expect("default layout is valid")
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    /// Row ranges `[start, end)` of each band for a frame of `height` rows.
    pub fn row_bounds(&self, height: usize) -> Vec<(u8, usize, usize)> {
        let mut cum = 0.0;
        let mut start = 0;
        let last = self.bands.len() - 1;
        self.bands
            .iter()
            .enumerate()
            .map(|(k, b)| {
                cum += b.fraction;
                // Fractions are decimal inputs; the epsilon keeps 0.35 + 0.35
                // from flooring to 69 rows out of 100.
                let end = if k == last {
                    height
                } else {
                    ((height as f64 * cum + 1e-9).floor() as usize).min(height)
                };
                let range = (b.class_id, start, end.max(start));
                start = end.max(start);
                range
            })
            .collect()
    }
}

pub fn make_basic_map(layout: &BasicLayout, width: usize, height: usize) -> Result<LabelMap> {
    let mut data = vec![0u8; width * height];
    for (class_id, start, end) in layout.row_bounds(height) {
        data[start * width..end * width].fill(class_id);
    }
    LabelMap::new(width, height, data)
}

/// How reconstruction picks the class of each sampled mask.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSampling {
    #[default]
    Uniform,
    /// Relative weight per class; library classes without a weight get 0.
    Weighted(BTreeMap<u8, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    SingleLabel {
        class_id: u8,
    },
    MultiLabel {
        class_ids: Vec<u8>,
    },
    Reconstruction {
        layout: BasicLayout,
        labels_per_image: usize,
        #[serde(default = "default_z_order")]
        z_order: Vec<u8>,
        #[serde(default)]
        sampling: ClassSampling,
    },
}

impl Strategy {
    pub fn tag(&self) -> &'static str {
        match self {
            Strategy::SingleLabel { .. } => "single",
            Strategy::MultiLabel { .. } => "multi",
            Strategy::Reconstruction { .. } => "reconstruction",
        }
    }
}

/// Background classes first, then objects (Cityscapes ids).
pub fn default_z_order() -> Vec<u8> {
    vec![0, 1, 2, 3, 4, 8, 9, 10, 5, 6, 7, 11, 12, 13, 14, 15, 16, 17, 18]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub strategy: Strategy,
    pub count: usize,
    pub seed: u64,
}

impl AugmentationPlan {
    pub fn validate(&self, library: &MaskLibrary) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("augmentation count must be at least 1".into()));
        }
        let need: &[u8] = match &self.strategy {
            Strategy::SingleLabel { class_id } => std::slice::from_ref(class_id),
            Strategy::MultiLabel { class_ids } => {
                if class_ids.is_empty() {
                    return Err(Error::Config("multi-label plan lists no classes".into()));
                }
                class_ids
            }
            Strategy::Reconstruction { .. } => &[],
        };
        match need.iter().find(|c| !library.has_class(**c)) {
            Some(c) => Err(Error::Sampling(*c)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRef {
    pub class_id: u8,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: String,
    /// Source id of the base map; `None` for reconstruction.
    pub base: Option<String>,
    /// Overlaid masks in application order.
    pub masks: Vec<MaskRef>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticRecord {
    pub label_map: LabelMap,
    pub provenance: Provenance,
}

fn mask_ref(m: &Mask) -> MaskRef {
    MaskRef {
        class_id: m.class_id(),
        source: m.source_id().to_string(),
    }
}

fn require_count(count: usize) -> Result<()> {
    if count == 0 {
        Err(Error::Config("augmentation count must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Overlay onto base maps, one record per index with its own seed stream.
fn overlay_records(
    tag: &str,
    eligible: &[&(String, LabelMap)],
    library: &MaskLibrary,
    classes: &[u8],
    count: usize,
    seed: u64,
) -> Result<Vec<SyntheticRecord>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let item_seed = seed::derive(seed, i as u64);
            let mut rng = seed::rng(item_seed);
            let (base_id, base) = eligible[rng.random_range(0..eligible.len())];
            let mut map = base.clone();
            let mut applied = Vec::with_capacity(classes.len());
            for &c in classes {
                let m = sample_mask(library, c, &mut rng)?;
                map = labelmap::overlay(&map, m)?;
                applied.push(mask_ref(m));
            }
            Ok(SyntheticRecord {
                label_map: map,
                provenance: Provenance {
                    strategy: tag.to_string(),
                    base: Some(base_id.clone()),
                    masks: applied,
                    seed: item_seed,
                },
            })
        })
        .collect()
}

/// Pastes one mask of `class_id` onto maps that do not contain the class.
pub fn augment_single_label(
    dataset: &[(String, LabelMap)],
    library: &MaskLibrary,
    class_id: u8,
    count: usize,
    seed: u64,
) -> Result<Vec<SyntheticRecord>> {
    require_count(count)?;
    if !library.has_class(class_id) {
        return Err(Error::Sampling(class_id));
    }
    let eligible: Vec<_> = dataset
        .iter()
        .filter(|(_, m)| !m.contains_class(class_id))
        .collect();
    if eligible.is_empty() {
        return Err(Error::Strategy(format!(
            "every map already contains class {class_id}"
        )));
    }
    overlay_records("single", &eligible, library, &[class_id], count, seed)
}

/// Pastes one mask of each listed class, in list order, onto maps missing
/// at least one of them.
pub fn augment_multi_label(
    dataset: &[(String, LabelMap)],
    library: &MaskLibrary,
    class_ids: &[u8],
    count: usize,
    seed: u64,
) -> Result<Vec<SyntheticRecord>> {
    require_count(count)?;
    if class_ids.is_empty() {
        return Err(Error::Config("multi-label augmentation needs classes".into()));
    }
    if let Some(c) = class_ids.iter().find(|c| !library.has_class(**c)) {
        return Err(Error::Sampling(*c));
    }
    let eligible: Vec<_> = dataset
        .iter()
        .filter(|(_, m)| class_ids.iter().any(|c| !m.contains_class(*c)))
        .collect();
    if eligible.is_empty() {
        return Err(Error::Strategy(format!(
            "every map already contains all of {class_ids:?}"
        )));
    }
    overlay_records("multi", &eligible, library, class_ids, count, seed)
}

fn z_rank(z_order: &[u8], class_id: u8) -> usize {
    z_order
        .iter()
        .position(|&c| c == class_id)
        .unwrap_or(z_order.len() + class_id as usize)
}

fn draw_class(classes: &[u8], sampling: &ClassSampling, rng: &mut seed::Rng) -> Result<u8> {
    match sampling {
        ClassSampling::Uniform => Ok(classes[rng.random_range(0..classes.len())]),
        ClassSampling::Weighted(w) => {
            let weights: Vec<f64> = classes
                .iter()
                .map(|c| w.get(c).copied().unwrap_or(0.0).max(0.0))
                .collect();
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::Config("class weights sum to zero".into()));
            }
            let mut t = rng.random::<f64>() * total;
            for (c, wt) in classes.iter().zip(&weights) {
                if t < *wt {
                    return Ok(*c);
                }
                t -= wt;
            }
            Ok(*classes
                .iter()
                .zip(&weights)
                .rev()
                .find(|(_, w)| **w > 0.0)
                .expect("positive total")
                .0)
        }
    }
}

/// The masks a reconstruction with this seed would paint, in paint order.
pub fn sample_reconstruction_masks<'a>(
    library: &'a MaskLibrary,
    labels_per_image: usize,
    z_order: &[u8],
    sampling: &ClassSampling,
    seed: u64,
) -> Result<Vec<&'a Mask>> {
    if labels_per_image == 0 {
        return Ok(Vec::new());
    }
    let classes: Vec<u8> = library.classes().collect();
    if classes.is_empty() {
        return Err(Error::Strategy("mask library is empty".into()));
    }
    let mut rng = seed::rng(seed);
    let mut drawn = Vec::with_capacity(labels_per_image);
    for _ in 0..labels_per_image {
        let c = draw_class(&classes, sampling, &mut rng)?;
        drawn.push(sample_mask(library, c, &mut rng)?);
    }
    drawn.sort_by_key(|m| z_rank(z_order, m.class_id()));
    Ok(drawn)
}

/// A new map: the layout's background bands with `labels_per_image`
/// sampled masks painted in z-order. No pixel is left unlabeled.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_map(
    library: &MaskLibrary,
    layout: &BasicLayout,
    labels_per_image: usize,
    z_order: &[u8],
    sampling: &ClassSampling,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<SyntheticRecord> {
    let mut map = make_basic_map(layout, width, height)?;
    let masks = sample_reconstruction_masks(library, labels_per_image, z_order, sampling, seed)?;
    for m in &masks {
        map = labelmap::overlay(&map, m)?;
    }
    Ok(SyntheticRecord {
        label_map: map,
        provenance: Provenance {
            strategy: "reconstruction".into(),
            base: None,
            masks: masks.iter().map(|m| mask_ref(m)).collect(),
            seed,
        },
    })
}

/// Runs a plan. `frame` sets the reconstruction canvas size; overlay
/// strategies keep the size of their base maps.
pub fn run_plan(
    plan: &AugmentationPlan,
    dataset: &[(String, LabelMap)],
    library: &MaskLibrary,
    frame: (usize, usize),
) -> Result<Vec<SyntheticRecord>> {
    plan.validate(library)?;
    match &plan.strategy {
        Strategy::SingleLabel { class_id } => {
            augment_single_label(dataset, library, *class_id, plan.count, plan.seed)
        }
        Strategy::MultiLabel { class_ids } => {
            augment_multi_label(dataset, library, class_ids, plan.count, plan.seed)
        }
        Strategy::Reconstruction {
            layout,
            labels_per_image,
            z_order,
            sampling,
        } => (0..plan.count)
            .into_par_iter()
            .map(|i| {
                reconstruct_map(
                    library,
                    layout,
                    *labels_per_image,
                    z_order,
                    sampling,
                    frame.0,
                    frame.1,
                    seed::derive(plan.seed, i as u64),
                )
            })
            .collect(),
    }
}
