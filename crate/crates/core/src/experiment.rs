//! End-to-end sweeps: generate a world, synthesize supplementary data with
//! each strategy, mix at each ratio, train, and score on a held-out split.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{
    build_mask_library, default_z_order, run_plan, AugmentationPlan, BasicLayout, ClassSampling,
    MaskLibrary, Strategy, DEFAULT_MIN_PIXELS,
};
use crate::distribution::{appearance_frequency, select_target_classes, TargetSelection};
use crate::error::{Error, Result};
use crate::eval::{format_cell, format_percent, iou_report, render_table, ClassIoU, ConfusionMatrix};
use crate::generator::{render_palette, RenderedImage};
use crate::labelmap::{load_labelmap, LabelMap};
use crate::mixer::{
    build_schedule, mix_manifest, supplementary_count, DatasetManifest, ManifestEntry,
    ScheduleMode,
};
use crate::seed;
use crate::segmenter::{predict, train, PairStore, TrainConfig};
use crate::synthworld::{generate_dataset, WorldConfig};
use crate::FrequencyReport;

pub const BASELINE: &str = "baseline";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Single,
    Multi,
    Reconstruction,
}

impl StrategyKind {
    pub fn tag(self) -> &'static str {
        match self {
            StrategyKind::Single => "single",
            StrategyKind::Multi => "multi",
            StrategyKind::Reconstruction => "reconstruction",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(StrategyKind::Single),
            "multi" => Ok(StrategyKind::Multi),
            "reconstruction" => Ok(StrategyKind::Reconstruction),
            _ => Err(Error::Usage(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSettings {
    pub layout: BasicLayout,
    pub labels_per_image: usize,
    pub z_order: Vec<u8>,
    #[serde(default)]
    pub sampling: ClassSampling,
}

impl Default for ReconstructionSettings {
    fn default() -> Self {
        ReconstructionSettings {
            layout: BasicLayout::cityscapes_default(),
            labels_per_image: 4,
            z_order: default_z_order(),
            sampling: ClassSampling::Uniform,
        }
    }
}

/// Directories of `<name>.pgm` label maps with matching `<name>.ppm` images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub test: PathBuf,
}

/// Reads every `<name>.pgm` / `<name>.ppm` pair in `dir`, sorted by name.
pub fn load_pairs(dir: &Path) -> Result<Vec<(String, LabelMap, RenderedImage)>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "pgm").then(|| p.file_stem()?.to_str().map(String::from))?
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let lp = dir.join(format!("{name}.pgm"));
            let ip = dir.join(format!("{name}.ppm"));
            let label = load_labelmap(&std::fs::read(&lp).map_err(|e| Error::io(&lp, e))?)?;
            let image = RenderedImage::from_ppm(&std::fs::read(&ip).map_err(|e| Error::io(&ip, e))?)?;
            Ok((name, label, image))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Training-split world; `seed` is replaced per experiment seed. With
    /// `dataset` set, only its class table, palette and noise are used.
    pub world: WorldConfig,
    #[serde(default)]
    pub dataset: Option<DatasetPaths>,
    pub test_count: usize,
    /// Strategies compared against the baseline.
    pub strategies: Vec<StrategyKind>,
    pub ratios: Vec<f64>,
    pub schedule: ScheduleMode,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub min_pixels: usize,
    /// Class for single-label overlay; the rarest class when unset.
    pub single_class: Option<u8>,
    /// Classes for multi-label overlay; the two rarest when unset.
    pub multi_classes: Option<Vec<u8>>,
    pub reconstruction: ReconstructionSettings,
}

impl ExperimentConfig {
    /// 200 training and 50 test images of the default world, every
    /// strategy, ratios 0.1 to 0.9, five seeds.
    pub fn default_world() -> Self {
        ExperimentConfig {
            world: WorldConfig::default_world(0, 200),
            dataset: None,
            test_count: 50,
            strategies: vec![StrategyKind::Single, StrategyKind::Multi, StrategyKind::Reconstruction],
            ratios: (1..=9).map(|i| f64::from(i) / 10.0).collect(),
            schedule: ScheduleMode::Mixed,
            train: TrainConfig::default(),
            seeds: (0..5).collect(),
            min_pixels: DEFAULT_MIN_PIXELS,
            single_class: None,
            multi_classes: None,
            reconstruction: ReconstructionSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one seed".into()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!("ratio {r} outside [0, 1)")));
        }
        if self.test_count == 0 {
            return Err(Error::Config("test split must have at least one image".into()));
        }
        self.world.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub seed: u64,
    pub ratio: f64,
    pub strategy: String,
    #[serde(flatten)]
    pub status: CellStatus,
    pub original_count: usize,
    pub supplementary_count: usize,
    pub achieved_ratio: f64,
    pub mean_iou: Option<f64>,
    pub rare_class_iou: Option<f64>,
    pub per_class: Vec<ClassIoU<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub rare_class: Option<u8>,
    pub frequency: FrequencyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub baseline: String,
    pub strategies: Vec<String>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<SeedSummary>,
    /// One row per (seed, ratio, strategy), baseline included.
    pub rows: Vec<CellResult>,
}

impl ExperimentReport {
    pub fn cell(&self, seed: u64, ratio: f64, strategy: &str) -> Option<&CellResult> {
        self.rows
            .iter()
            .find(|r| r.seed == seed && r.ratio == ratio && r.strategy == strategy)
    }

    fn seed_values(&self) -> Vec<u64> {
        let mut seeds: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds
    }

    /// Mean over seeds of `metric` for one (ratio, strategy) cell; `None`
    /// if any seed lacks a value.
    pub fn seed_mean(&self, ratio: f64, strategy: &str, metric: impl Fn(&CellResult) -> Option<f64>) -> Option<f64> {
        let seeds = self.seed_values();
        if seeds.is_empty() {
            return None;
        }
        let mut sum = 0.0;
        for s in &seeds {
            sum += metric(self.cell(*s, ratio, strategy)?)?;
        }
        Some(sum / seeds.len() as f64)
    }
}

/// Everything a run produced: the report plus each cell's manifest, keyed
/// by `(seed, ratio, strategy)` in report row order.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub manifests: Vec<((u64, f64, String), DatasetManifest)>,
}

struct SeedData {
    seed: u64,
    store: PairStore,
    originals: Vec<ManifestEntry>,
    test: Vec<(LabelMap, RenderedImage)>,
    pools: BTreeMap<StrategyKind, Result<Vec<ManifestEntry>, String>>,
    rare: Option<u8>,
}

fn prepare_seed(config: &ExperimentConfig, seed: u64) -> Result<(SeedData, SeedSummary)> {
    let world = &config.world;
    let table = &world.classes;
    let (train_set, test) = match &config.dataset {
        None => {
            let train_world = WorldConfig {
                seed: seed::derive_named(seed, "world-train"),
                ..world.clone()
            };
            let test_world = WorldConfig {
                seed: seed::derive_named(seed, "world-test"),
                count: config.test_count,
                ..world.clone()
            };
            let train_set: Vec<(String, LabelMap, RenderedImage)> = generate_dataset(&train_world)?
                .into_iter()
                .enumerate()
                .map(|(i, (l, img))| (format!("original/{i:05}"), l, img))
                .collect();
            (train_set, generate_dataset(&test_world)?)
        }
        Some(paths) => {
            let test = load_pairs(&paths.test)?.into_iter().map(|(_, l, i)| (l, i)).collect();
            (load_pairs(&paths.train)?, test)
        }
    };
    if train_set.is_empty() || test.is_empty() {
        return Err(Error::Config("train and test splits must be non-empty".into()));
    }
    for (_, label, _) in &train_set {
        table.validate(label)?;
    }
    let frame = train_set[0].1.dims();

    let mut store = PairStore::default();
    let mut originals = Vec::with_capacity(train_set.len());
    let mut labeled = Vec::with_capacity(train_set.len());
    for (id, label, image) in train_set {
        let entry = ManifestEntry::original(format!("{id}.ppm"), format!("{id}.pgm"));
        store.insert(entry.image.clone(), image, label.clone())?;
        originals.push(entry);
        labeled.push((id, label));
    }

    let frequency: FrequencyReport = appearance_frequency(labeled.iter().map(|(_, m)| m), table)?;
    let rarest = select_target_classes(&frequency, TargetSelection::Count(2))?;
    let rare = rarest.first().copied();
    let library = build_mask_library(&labeled, table, config.min_pixels)?;

    let pool_size = config
        .ratios
        .iter()
        .map(|&r| supplementary_count(originals.len(), r))
        .max()
        .unwrap_or(0);

    let mut pools = BTreeMap::new();
    for &kind in &config.strategies {
        let pool = if pool_size == 0 {
            Ok(Vec::new())
        } else {
            build_pool(config, kind, seed, pool_size, frame, &labeled, &library, &rarest, &mut store)
                .map_err(|e| e.to_string())
        };
        pools.insert(kind, pool);
    }

    Ok((
        SeedData {
            seed,
            store,
            originals,
            test,
            pools,
            rare,
        },
        SeedSummary {
            seed,
            rare_class: rare,
            frequency,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn build_pool(
    config: &ExperimentConfig,
    kind: StrategyKind,
    seed: u64,
    count: usize,
    frame: (usize, usize),
    labeled: &[(String, LabelMap)],
    library: &MaskLibrary,
    rarest: &[u8],
    store: &mut PairStore,
) -> Result<Vec<ManifestEntry>> {
    let world = &config.world;
    let strategy = match kind {
        StrategyKind::Single => Strategy::SingleLabel {
            class_id: config
                .single_class
                .or_else(|| rarest.first().copied())
                .ok_or_else(|| Error::Strategy("no class to augment".into()))?,
        },
        StrategyKind::Multi => Strategy::MultiLabel {
            class_ids: config.multi_classes.clone().unwrap_or_else(|| rarest.to_vec()),
        },
        StrategyKind::Reconstruction => {
            let r = &config.reconstruction;
            Strategy::Reconstruction {
                layout: r.layout.clone(),
                labels_per_image: r.labels_per_image,
                z_order: r.z_order.clone(),
                sampling: r.sampling.clone(),
            }
        }
    };
    let plan = AugmentationPlan {
        strategy,
        count,
        seed: seed::derive_named(seed, &format!("augment-{}", kind.tag())),
    };
    let records = run_plan(&plan, labeled, library, frame)?;
    let render_seed = seed::derive_named(seed, &format!("render-{}", kind.tag()));
    let images: Vec<RenderedImage> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            render_palette(
                &r.label_map,
                &world.palette,
                world.noise_sigma,
                seed::derive(render_seed, i as u64),
            )
        })
        .collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, (rec, img)) in records.into_iter().zip(images).enumerate() {
        let id = format!("{}/{i:05}", kind.tag());
        let e = ManifestEntry::supplementary(format!("{id}.ppm"), format!("{id}.pgm"), kind.tag());
        store.insert(e.image.clone(), img, rec.label_map)?;
        entries.push(e);
    }
    Ok(entries)
}

struct CellRun {
    result: CellResult,
    manifest: Option<DatasetManifest>,
}

fn run_cell(
    config: &ExperimentConfig,
    data: &SeedData,
    ratio: f64,
    kind: Option<StrategyKind>,
) -> CellRun {
    let strategy = kind.map_or(BASELINE, StrategyKind::tag).to_string();
    let mut result = CellResult {
        seed: data.seed,
        ratio,
        strategy,
        status: CellStatus::Ok,
        original_count: data.originals.len(),
        supplementary_count: 0,
        achieved_ratio: 0.0,
        mean_iou: None,
        rare_class_iou: None,
        per_class: Vec::new(),
    };
    match evaluate_cell(config, data, ratio, kind, &mut result) {
        Ok(manifest) => CellRun {
            result,
            manifest: Some(manifest),
        },
        Err(e) => {
            log::warn!("cell seed={} ratio={ratio} {} failed: {e}", data.seed, result.strategy);
            result.status = CellStatus::Failed { error: e.to_string() };
            CellRun {
                result,
                manifest: None,
            }
        }
    }
}

fn evaluate_cell(
    config: &ExperimentConfig,
    data: &SeedData,
    ratio: f64,
    kind: Option<StrategyKind>,
    result: &mut CellResult,
) -> Result<DatasetManifest> {
    let table = &config.world.classes;
    let seed = data.seed;
    let manifest = match kind {
        // The baseline never sees supplementary data, whatever the ratio.
        None => mix_manifest(&data.originals, &[], 0.0, seed::derive_named(seed, "mix"))?,
        Some(k) => {
            let pool = data.pools[&k].as_ref().map_err(|e| Error::Strategy(e.clone()))?;
            mix_manifest(&data.originals, pool, ratio, seed::derive_named(seed, "mix"))?
        }
    };
    result.supplementary_count = manifest.supplementary_count();
    result.achieved_ratio = manifest.achieved_ratio;
    let schedule = build_schedule(&manifest, config.schedule, seed::derive_named(seed, "schedule"));
    let train_cfg = TrainConfig {
        seed: seed::derive_named(seed, "train"),
        ..config.train.clone()
    };
    let outcome = train::<f64>(&schedule, &data.store, table, &train_cfg)?;
    let mut cm = ConfusionMatrix::new(table);
    for (label, image) in &data.test {
        cm.accumulate(&predict(&outcome.model, image), label)?;
    }
    let report = iou_report::<f64>(&cm);
    result.mean_iou = report.mean_iou;
    result.rare_class_iou = data.rare.and_then(|c| report.iou(c));
    result.per_class = report.classes;
    Ok(manifest)
}

/// Runs the sweep with at most `jobs` cells in flight (0 picks the
/// number of cores). Output does not depend on `jobs`.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| run_sweep(config))
}

fn run_sweep(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut rows = Vec::new();
    let mut manifests = Vec::new();
    let mut seeds = Vec::new();
    for &seed in &config.seeds {
        let (data, summary) = prepare_seed(config, seed)?;
        seeds.push(summary);

        let baseline = run_cell(config, &data, 0.0, None);
        let cells: Vec<(f64, StrategyKind)> = config
            .ratios
            .iter()
            .flat_map(|&r| config.strategies.iter().map(move |&k| (r, k)))
            .collect();
        let runs: Vec<CellRun> = cells
            .par_iter()
            .map(|&(r, k)| run_cell(config, &data, r, Some(k)))
            .collect();
        let mut runs = runs.into_iter();
        for &r in &config.ratios {
            let mut base = baseline.result.clone();
            base.ratio = r;
            if let Some(m) = &baseline.manifest {
                manifests.push(((seed, r, BASELINE.to_string()), m.clone()));
            }
            rows.push(base);
            for _ in &config.strategies {
                let run = runs.next().expect("one run per cell");
                if let Some(m) = run.manifest {
                    manifests.push(((seed, r, run.result.strategy.clone()), m));
                }
                rows.push(run.result);
            }
        }
    }
    Ok(ExperimentOutput {
        report: ExperimentReport {
            baseline: BASELINE.into(),
            strategies: config.strategies.iter().map(|k| k.tag().to_string()).collect(),
            ratios: config.ratios.clone(),
            seeds,
            rows,
        },
        manifests,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::Usage(format!("unknown report format {s:?}"))),
        }
    }
}

pub fn emit_report(report: &ExperimentReport, format: ReportFormat) -> Result<Vec<u8>> {
    Ok(match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report)?;
            v.push(b'\n');
            v
        }
        ReportFormat::Csv => rows_csv(report).into_bytes(),
        ReportFormat::Text => text_tables(report).into_bytes(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn rows_csv(report: &ExperimentReport) -> String {
    let class_ids: Vec<u8> = report
        .rows
        .first()
        .map(|r| r.per_class.iter().map(|c| c.id).collect())
        .unwrap_or_default();
    let mut out = String::from(
        "seed,ratio,strategy,status,original_count,supplementary_count,achieved_ratio,mean_iou,rare_class_iou",
    );
    for id in &class_ids {
        let _ = write!(out, ",iou_{id}");
    }
    out.push('\n');
    for r in &report.rows {
        let status = match r.status {
            CellStatus::Ok => "ok",
            CellStatus::Failed { .. } => "failed",
        };
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.ratio,
            r.strategy,
            status,
            r.original_count,
            r.supplementary_count,
            r.achieved_ratio,
            opt(r.mean_iou),
            opt(r.rare_class_iou)
        );
        for id in &class_ids {
            let v = r.per_class.iter().find(|c| c.id == *id).and_then(|c| c.iou);
            let _ = write!(out, ",{}", opt(v));
        }
        out.push('\n');
    }
    out
}

/// Seed-averaged mIoU per ratio and strategy, the shape of a ratio sweep plot.
pub fn ratio_curve_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("ratio,strategy,mean_iou,rare_class_iou\n");
    let names = std::iter::once(&report.baseline).chain(&report.strategies);
    for name in names {
        for &r in &report.ratios {
            let _ = writeln!(
                out,
                "{r},{name},{},{}",
                opt(report.seed_mean(r, name, |c| c.mean_iou)),
                opt(report.seed_mean(r, name, |c| c.rare_class_iou))
            );
        }
    }
    out
}

fn display_name(tag: &str) -> String {
    match tag {
        BASELINE => "Baseline".into(),
        "single" => "Single Label".into(),
        "multi" => "Multi-Label".into(),
        "reconstruction" => "Reconstruction".into(),
        other => other.to_string(),
    }
}

/// One table per metric: a row per ratio, a column per method, each
/// non-baseline cell written as `value/+delta` against the baseline.
fn metric_table(
    report: &ExperimentReport,
    title: &str,
    metric: &dyn Fn(&CellResult) -> Option<f64>,
) -> String {
    let names: Vec<&String> = std::iter::once(&report.baseline).chain(&report.strategies).collect();
    let mut header = vec![title.to_string()];
    header.extend(names.iter().map(|n| display_name(n)));
    let mut rows = vec![header];
    if !report.rows.is_empty() {
        for &r in &report.ratios {
            let base = report.seed_mean(r, &report.baseline, metric);
            let mut line = vec![format!("r={r:.2}")];
            line.push(base.map_or("-".into(), format_percent));
            for name in &names[1..] {
                let v = report.seed_mean(r, name, metric);
                let d = v.zip(base).map(|(v, b)| v - b);
                line.push(format_cell(v, d));
            }
            rows.push(line);
        }
    }
    let width = rows[0].len();
    // render_table wants fixed-size rows; pad through a Vec of Vecs.
    let mut out = String::new();
    let widths: Vec<usize> = (0..width)
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    for r in &rows {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
    }
    out
}

fn text_tables(report: &ExperimentReport) -> String {
    let mut out = metric_table(report, "mIoU", &|c| c.mean_iou);
    out.push('\n');
    out.push_str(&metric_table(report, "Rare-class IoU", &|c| c.rare_class_iou));
    let failed: Vec<[String; 4]> = report
        .rows
        .iter()
        .filter_map(|r| match &r.status {
            CellStatus::Failed { error } => Some([
                r.seed.to_string(),
                format!("{:.2}", r.ratio),
                r.strategy.clone(),
                error.clone(),
            ]),
            CellStatus::Ok => None,
        })
        .collect();
    if !failed.is_empty() {
        out.push_str("\nFailed cells\n");
        let mut rows = vec![["seed".into(), "ratio".into(), "strategy".into(), "error".into()]];
        rows.extend(failed);
        out.push_str(&render_table(&rows));
    }
    out
}
