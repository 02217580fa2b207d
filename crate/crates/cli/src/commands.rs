use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use segaug::augment::{
    build_mask_library, default_z_order, run_plan, AugmentationPlan, BasicLayout, ClassSampling,
    Strategy, DEFAULT_MIN_PIXELS,
};
use segaug::distribution::{appearance_frequency, rank_correlation, select_target_classes, TargetSelection};
use segaug::eval::{compare_reports, iou_report, ConfusionMatrix};
use segaug::experiment::{
    emit_report, load_pairs, ratio_curve_csv, run_experiment, DatasetPaths, ExperimentConfig,
    ExperimentReport, ReportFormat, StrategyKind,
};
use segaug::generator::{render_external_batch, render_palette, Palette, RenderedImage, DEFAULT_TIMEOUT};
use segaug::labelmap::{compose, load_labelmap, save_labelmap};
use segaug::mixer::{build_schedule, mix_manifest, write_entries, DatasetManifest, ManifestEntry, ScheduleMode};
use segaug::segmenter::{loss_trace_csv, predict, train, PairStore, TrainConfig};
use segaug::synthworld::{generate_dataset, WorldConfig};
use segaug::{seed, ClassTable, Error, FrequencyReport, IoUReport, LabelMap, Result, SoftmaxModel};
use serde::Serialize;

use super::{Command, Global};

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

/// Writes to `out` when given, stdout otherwise.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write(p, bytes),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn class_table(g: &Global) -> Result<ClassTable> {
    match &g.classes {
        Some(p) => ClassTable::from_json(&read_text(p)?),
        None => Ok(ClassTable::cityscapes()),
    }
}

fn palette(g: &Global) -> Result<Palette> {
    match &g.palette {
        Some(p) => Palette::from_json(&read_text(p)?),
        None => Ok(Palette::cityscapes()),
    }
}

fn stage_seed(g: &Global, stage: &str) -> u64 {
    seed::derive_named(g.seed, stage)
}

/// Sorted `<stem>` names of the `.pgm` files in `dir`.
fn label_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            if p.extension()? != "pgm" {
                return None;
            }
            p.file_stem()?.to_str().map(String::from)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Config(format!("no .pgm label maps in {}", dir.display())));
    }
    Ok(names)
}

fn load_labels(dir: &Path, table: &ClassTable) -> Result<Vec<(String, LabelMap)>> {
    label_names(dir)?
        .into_iter()
        .map(|n| {
            let m = load_labelmap(&read(&dir.join(format!("{n}.pgm")))?)?;
            table.validate(&m)?;
            Ok((n, m))
        })
        .collect()
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

pub(crate) fn run(g: &Global, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Analyze(a) => analyze(g, a),
        Command::ExtractMasks(a) => extract_masks(g, a),
        Command::Augment(a) => augment(g, a),
        Command::Render(a) => render(g, a),
        Command::Mix(a) => mix(g, a),
        Command::Train(a) => train_cmd(g, a),
        Command::Eval(a) => eval(g, a),
        Command::Experiment(a) => experiment(g, a),
        Command::Report(a) => report(a),
        Command::Synth(a) => synth(g, a),
    }
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Directory of .pgm label maps.
    labels: PathBuf,
    /// Number of rarest classes to select.
    #[arg(long, conflicts_with = "threshold")]
    targets: Option<usize>,
    /// Select every class with appearance frequency below this value.
    #[arg(long)]
    threshold: Option<f64>,
    /// IoU report JSON (from `eval`) to correlate against frequency.
    #[arg(long)]
    iou: Option<PathBuf>,
    /// text or json.
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Analysis {
    frequency: FrequencyReport,
    targets: Vec<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correlation: Option<segaug::CorrelationReport>,
}

fn analyze(g: &Global, a: &AnalyzeArgs) -> Result<()> {
    let table = class_table(g)?;
    let maps = load_labels(&a.labels, &table)?;
    let frequency: FrequencyReport = appearance_frequency(maps.iter().map(|(_, m)| m), &table)?;
    let selection = match (a.targets, a.threshold) {
        (_, Some(t)) => TargetSelection::Threshold(t),
        (k, None) => TargetSelection::Count(k.unwrap_or(1)),
    };
    let targets = select_target_classes(&frequency, selection)?;
    let correlation = match &a.iou {
        None => None,
        Some(p) => {
            let iou: IoUReport = serde_json::from_str(&read_text(p)?)?;
            let acc: BTreeMap<u8, f64> = iou.classes.iter().filter_map(|c| Some((c.id, c.iou?))).collect();
            Some(rank_correlation(&frequency, &acc)?)
        }
    };
    let analysis = Analysis { frequency, targets, correlation };
    let bytes = match a.format.as_str() {
        "json" => {
            let mut v = serde_json::to_vec_pretty(&analysis)?;
            v.push(b'\n');
            v
        }
        "text" => analysis_text(&analysis, &table).into_bytes(),
        f => return Err(Error::Usage(format!("unknown format {f:?}"))),
    };
    emit(a.out.as_deref(), &bytes)
}

fn analysis_text(a: &Analysis, table: &ClassTable) -> String {
    let mut rows = vec![[
        "id".to_string(),
        "class".into(),
        "frequency".into(),
        "pixel share".into(),
        "images".into(),
    ]];
    for c in &a.frequency.classes {
        rows.push([
            c.id.to_string(),
            c.name.clone(),
            format!("{:.4}", c.appearance_frequency),
            format!("{:.4}", c.pixel_share),
            c.images_with.to_string(),
        ]);
    }
    let mut out = format!("{} images\n", a.frequency.dataset_size);
    out.push_str(&segaug::eval::render_table(&rows));
    let names: Vec<&str> = a.targets.iter().filter_map(|&t| table.name(t)).collect();
    out.push_str(&format!("targets: {}\n", names.join(", ")));
    if let Some(c) = &a.correlation {
        out.push_str(&format!("pearson: {:.4}\nspearman: {:.4}\n", c.pearson, c.spearman));
    }
    out
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Drop masks smaller than this many pixels.
    #[arg(long, default_value_t = DEFAULT_MIN_PIXELS)]
    min_pixels: usize,
}

#[derive(Serialize)]
struct MaskIndexEntry<'a> {
    class_id: u8,
    source: &'a str,
    pixels: usize,
    path: String,
}

fn extract_masks(g: &Global, a: &ExtractArgs) -> Result<()> {
    let table = class_table(g)?;
    let maps = load_labels(&a.labels, &table)?;
    let library = pool(g.jobs)?.install(|| build_mask_library(&maps, &table, a.min_pixels))?;
    create_dir(&a.out)?;
    let mut index = String::new();
    for class in library.classes().collect::<Vec<_>>() {
        let dir = a.out.join(class.to_string());
        create_dir(&dir)?;
        for mask in library.masks(class) {
            let (w, h) = mask.dims();
            let map = compose(std::slice::from_ref(mask), w, h, table.ignore_id())?;
            let rel = format!("{class}/{}.pgm", mask.source_id());
            write(&a.out.join(&rel), save_labelmap(&map))?;
            index.push_str(&serde_json::to_string(&MaskIndexEntry {
                class_id: class,
                source: mask.source_id(),
                pixels: mask.pixel_count(),
                path: rel,
            })?);
            index.push('\n');
        }
    }
    write(&a.out.join("index.jsonl"), index)?;
    log::info!("{} masks in {} classes", library.len(), library.classes().count());
    Ok(())
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Directory of original .pgm label maps.
    labels: PathBuf,
    #[arg(long)]
    strategy: StrategyKind,
    /// Classes to overlay; the rarest classes when omitted.
    #[arg(long = "class")]
    class_ids: Vec<u8>,
    /// Rarest classes picked for multi-label overlay when --class is omitted.
    #[arg(long, default_value_t = 2)]
    targets: usize,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 4)]
    labels_per_image: usize,
    /// Band layout JSON for reconstruction.
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Z-order JSON list for reconstruction.
    #[arg(long)]
    z_order: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_PIXELS)]
    min_pixels: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct ProvenanceLine<'a> {
    label: String,
    #[serde(flatten)]
    provenance: &'a segaug::augment::Provenance,
}

fn augment(g: &Global, a: &AugmentArgs) -> Result<()> {
    let table = class_table(g)?;
    let maps = load_labels(&a.labels, &table)?;
    let frame = maps[0].1.dims();
    let library = pool(g.jobs)?.install(|| build_mask_library(&maps, &table, a.min_pixels))?;
    let rarest = || -> Result<Vec<u8>> {
        let f: FrequencyReport = appearance_frequency(maps.iter().map(|(_, m)| m), &table)?;
        select_target_classes(&f, TargetSelection::Count(a.targets))
    };
    let strategy = match a.strategy {
        StrategyKind::Single => Strategy::SingleLabel {
            class_id: match a.class_ids.as_slice() {
                [] => *rarest()?.first().ok_or_else(|| Error::Strategy("no class to augment".into()))?,
                [c] => *c,
                _ => return Err(Error::Usage("single-label takes one --class".into())),
            },
        },
        StrategyKind::Multi => Strategy::MultiLabel {
            class_ids: if a.class_ids.is_empty() { rarest()? } else { a.class_ids.clone() },
        },
        StrategyKind::Reconstruction => Strategy::Reconstruction {
            layout: match &a.layout {
                Some(p) => serde_json::from_str(&read_text(p)?)?,
                None => BasicLayout::cityscapes_default(),
            },
            labels_per_image: a.labels_per_image,
            z_order: match &a.z_order {
                Some(p) => serde_json::from_str(&read_text(p)?)?,
                None => default_z_order(),
            },
            sampling: ClassSampling::Uniform,
        },
    };
    let plan = AugmentationPlan {
        strategy,
        count: a.count,
        seed: stage_seed(g, "augment"),
    };
    let records = run_plan(&plan, &maps, &library, frame)?;
    create_dir(&a.out)?;
    let mut prov = String::new();
    for (i, r) in records.iter().enumerate() {
        let name = format!("{}_{i:05}.pgm", a.strategy.tag());
        write(&a.out.join(&name), save_labelmap(&r.label_map))?;
        prov.push_str(&serde_json::to_string(&ProvenanceLine {
            label: name,
            provenance: &r.provenance,
        })?);
        prov.push('\n');
    }
    write(&a.out.join("provenance.jsonl"), prov)
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Directory of .pgm label maps.
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Shell command with {in} and {out} placeholders; the palette renderer
    /// is used when omitted.
    #[arg(long)]
    generator_cmd: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs())]
    generator_timeout_s: u64,
    /// Noise for the palette renderer.
    #[arg(long, default_value_t = 8.0)]
    sigma: f64,
}

fn render(g: &Global, a: &RenderArgs) -> Result<()> {
    let table = class_table(g)?;
    let maps = load_labels(&a.labels, &table)?;
    let labels: Vec<LabelMap> = maps.iter().map(|(_, m)| m.clone()).collect();
    let images: Vec<RenderedImage> = match &a.generator_cmd {
        Some(cmd) => render_external_batch(&labels, cmd, Duration::from_secs(a.generator_timeout_s), g.jobs.max(1))?,
        None => {
            let pal = palette(g)?;
            let base = stage_seed(g, "render");
            labels
                .iter()
                .enumerate()
                .map(|(i, m)| render_palette(m, &pal, a.sigma, seed::derive(base, i as u64)))
                .collect::<Result<_>>()?
        }
    };
    create_dir(&a.out)?;
    for ((name, map), img) in maps.iter().zip(&images) {
        write(&a.out.join(format!("{name}.ppm")), img.to_ppm())?;
        let label_out = a.out.join(format!("{name}.pgm"));
        if !label_out.exists() {
            write(&label_out, save_labelmap(map))?;
        }
    }
    let prov = a.labels.join("provenance.jsonl");
    if prov.exists() && a.out.canonicalize().ok() != a.labels.canonicalize().ok() {
        write(&a.out.join("provenance.jsonl"), read(&prov)?)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct MixArgs {
    /// Directory of original pairs.
    #[arg(long)]
    original: PathBuf,
    /// Directory of supplementary pairs.
    #[arg(long)]
    supplementary: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    ratio: f64,
    #[arg(long, default_value = "mixed")]
    schedule: ScheduleMode,
    #[arg(long)]
    out: PathBuf,
}

fn pair_entries(dir: &Path, origin_strategy: Option<&BTreeMap<String, String>>) -> Result<Vec<ManifestEntry>> {
    let dir = &dir.canonicalize().map_err(|e| Error::io(dir, e))?;
    label_names(dir)?
        .into_iter()
        .map(|n| {
            let image = dir.join(format!("{n}.ppm"));
            if !image.exists() {
                return Err(Error::Config(format!("missing image {}", image.display())));
            }
            let image = image.to_string_lossy().into_owned();
            let label = dir.join(format!("{n}.pgm")).to_string_lossy().into_owned();
            Ok(match origin_strategy {
                None => ManifestEntry::original(image, label),
                Some(tags) => {
                    let tag = tags.get(&format!("{n}.pgm")).map_or("unknown", String::as_str);
                    ManifestEntry::supplementary(image, label, tag)
                }
            })
        })
        .collect()
}

fn provenance_tags(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join("provenance.jsonl");
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    read_text(&path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l)?;
            let field = |k: &str| v[k].as_str().map(String::from);
            match (field("label"), field("strategy")) {
                (Some(l), Some(s)) => Ok((l, s)),
                _ => Err(Error::Config(format!("bad provenance line in {}", path.display()))),
            }
        })
        .collect()
}

fn mix(g: &Global, a: &MixArgs) -> Result<()> {
    let original = pair_entries(&a.original, None)?;
    let supplementary = match &a.supplementary {
        Some(d) => pair_entries(d, Some(&provenance_tags(d)?))?,
        None => Vec::new(),
    };
    let manifest = mix_manifest(&original, &supplementary, a.ratio, stage_seed(g, "mix"))?;
    let schedule = build_schedule(&manifest, a.schedule, stage_seed(g, "schedule"));
    create_dir(&a.out)?;
    let path = a.out.join("manifest.jsonl");
    let mut buf = Vec::new();
    manifest.write_jsonl(&mut buf).map_err(|e| Error::io(&path, e))?;
    write(&path, buf)?;
    for (i, phase) in schedule.phases.iter().enumerate() {
        let path = a.out.join(format!("schedule-phase-{i}.jsonl"));
        let mut buf = Vec::new();
        write_entries(phase, &mut buf).map_err(|e| Error::io(&path, e))?;
        write(&path, buf)?;
    }
    log::info!(
        "{} original + {} supplementary, achieved ratio {:.4}",
        original.len(),
        manifest.supplementary_count(),
        manifest.achieved_ratio
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Manifest written by `mix`.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "mixed")]
    schedule: ScheduleMode,
    /// TrainConfig JSON; individual flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}

fn train_cmd(g: &Global, a: &TrainArgs) -> Result<()> {
    let table = class_table(g)?;
    let file = fs::File::open(&a.manifest).map_err(|e| Error::io(&a.manifest, e))?;
    let manifest = DatasetManifest::read_jsonl(BufReader::new(file))?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let mut store = PairStore::default();
    for e in &manifest.entries {
        let label = load_labelmap(&read(&resolve(base, &e.label))?)?;
        let image = RenderedImage::from_ppm(&read(&resolve(base, &e.image))?)?;
        store.insert(e.image.clone(), image, label)?;
    }
    let mut config: TrainConfig = match &a.config {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    config.epochs = a.epochs.unwrap_or(config.epochs);
    config.learning_rate = a.learning_rate.unwrap_or(config.learning_rate);
    config.batch = a.batch.unwrap_or(config.batch);
    config.l2 = a.l2.unwrap_or(config.l2);
    config.seed = stage_seed(g, "train");
    let schedule = build_schedule(&manifest, a.schedule, stage_seed(g, "schedule"));
    let outcome = pool(g.jobs)?.install(|| train::<f64>(&schedule, &store, &table, &config))?;
    create_dir(&a.out)?;
    write_json(&a.out.join("model.json"), &outcome.model)?;
    write(&a.out.join("loss.csv"), loss_trace_csv(&outcome.trace))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of held-out pairs.
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Baseline IoU report to compare against.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Also write predicted label maps.
    #[arg(long)]
    predictions: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let table = class_table(g)?;
    let model: SoftmaxModel = serde_json::from_str(&read_text(&a.model)?)?;
    model.check(&table)?;
    let pairs = load_pairs(&a.data)?;
    if pairs.is_empty() {
        return Err(Error::Config(format!("no pairs in {}", a.data.display())));
    }
    let mut cm = ConfusionMatrix::new(&table);
    let mut preds = Vec::new();
    for (name, label, image) in &pairs {
        let p = predict(&model, image);
        cm.accumulate(&p, label)?;
        if a.predictions {
            preds.push((name, p));
        }
    }
    let report: IoUReport = iou_report(&cm);
    let mut text = String::new();
    match &a.baseline {
        Some(p) => {
            let base: IoUReport = serde_json::from_str(&read_text(p)?)?;
            text.push_str(&compare_reports(&base, &report, ("baseline", "model"))?.to_text());
        }
        None => {
            let mut rows = vec![["class".to_string(), "IoU".into()]];
            for c in &report.classes {
                rows.push([c.name.clone(), c.iou.map_or("-".into(), segaug::eval::format_percent)]);
            }
            rows.push(["mIoU".into(), report.mean_iou.map_or("-".into(), segaug::eval::format_percent)]);
            text.push_str(&segaug::eval::render_table(&rows));
        }
    }
    print!("{text}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_json(&out.join("iou.json"), &report)?;
        write(&out.join("iou.txt"), &text)?;
        if a.predictions {
            let dir = out.join("predictions");
            create_dir(&dir)?;
            for (name, p) in preds {
                write(&dir.join(format!("{name}.pgm")), save_labelmap(&p))?;
            }
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// ExperimentConfig JSON; defaults to the procedural world sweep.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated ratios, e.g. 0.1,0.5,0.9.
    #[arg(long, value_delimiter = ',')]
    ratios: Vec<f64>,
    #[arg(long, conflicts_with = "ratios")]
    ratio: Option<f64>,
    /// Strategies to compare against the baseline (repeatable).
    #[arg(long)]
    strategy: Vec<StrategyKind>,
    /// Comma-separated experiment seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    schedule: Option<ScheduleMode>,
    /// Directory of training pairs instead of the procedural world.
    #[arg(long, requires = "test_dir")]
    train_dir: Option<PathBuf>,
    #[arg(long, requires = "train_dir")]
    test_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn experiment(g: &Global, a: &ExperimentArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => ExperimentConfig::default_world(),
    };
    if g.classes.is_some() {
        config.world.classes = class_table(g)?;
    }
    if g.palette.is_some() {
        config.world.palette = palette(g)?;
    }
    if let Some(r) = a.ratio {
        config.ratios = vec![r];
    } else if !a.ratios.is_empty() {
        config.ratios = a.ratios.clone();
    }
    if !a.strategy.is_empty() {
        config.strategies = a.strategy.clone();
    }
    if !a.seeds.is_empty() {
        config.seeds = a.seeds.clone();
    }
    if let Some(s) = a.schedule {
        config.schedule = s;
    }
    if let Some(e) = a.epochs {
        config.train.epochs = e;
    }
    if let (Some(train), Some(test)) = (&a.train_dir, &a.test_dir) {
        config.dataset = Some(DatasetPaths { train: train.clone(), test: test.clone() });
    }
    let output = run_experiment(&config, g.jobs)?;
    let r = &output.report;
    create_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &config)?;
    write(&a.out.join("report.json"), emit_report(r, ReportFormat::Json)?)?;
    write(&a.out.join("report.csv"), emit_report(r, ReportFormat::Csv)?)?;
    let text = emit_report(r, ReportFormat::Text)?;
    write(&a.out.join("report.txt"), &text)?;
    write(&a.out.join("ratio_curve.csv"), ratio_curve_csv(r))?;
    for ((seed, ratio, strategy), m) in &output.manifests {
        let dir = a.out.join("manifests").join(format!("seed-{seed}")).join(format!("ratio-{ratio}"));
        create_dir(&dir)?;
        let path = dir.join(format!("{strategy}.jsonl"));
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).map_err(|e| Error::io(&path, e))?;
        write(&path, buf)?;
    }
    emit(None, &text)
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// report.json written by `experiment`.
    input: PathBuf,
    /// text, csv, json, or curve.
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn report(a: &ReportArgs) -> Result<()> {
    let report: ExperimentReport = serde_json::from_str(&read_text(&a.input)?)?;
    let bytes = if a.format == "curve" {
        ratio_curve_csv(&report).into_bytes()
    } else {
        emit_report(&report, a.format.parse()?)?
    };
    emit(a.out.as_deref(), &bytes)
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    count: usize,
    /// WorldConfig JSON; defaults to the six-class street world.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn synth(g: &Global, a: &SynthArgs) -> Result<()> {
    let mut world = match &a.world {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => WorldConfig::default_world(0, a.count),
    };
    world.count = a.count;
    world.seed = stage_seed(g, "synth");
    if g.classes.is_some() {
        world.classes = class_table(g)?;
    }
    if g.palette.is_some() {
        world.palette = palette(g)?;
    }
    let data = pool(g.jobs)?.install(|| generate_dataset(&world))?;
    create_dir(&a.out)?;
    for (i, (label, image)) in data.iter().enumerate() {
        write(&a.out.join(format!("{i:05}.pgm")), save_labelmap(label))?;
        write(&a.out.join(format!("{i:05}.ppm")), image.to_ppm())?;
    }
    Ok(())
}
