//! Acceptance criteria. Runs as a plain binary so every criterion prints
//! one PASS/FAIL line; exits non-zero if any fails.

use std::collections::BTreeSet;
use std::time::Instant;

use num::{BigRational, Zero};
use rand::Rng as _;
use segaug::augment::{
    augment_single_label, build_mask_library, default_z_order, reconstruct_map, BasicLayout,
    ClassSampling,
};
use segaug::distribution::appearance_frequency;
use segaug::eval::{iou_report, ConfusionMatrix};
use segaug::experiment::{
    emit_report, run_experiment, ExperimentConfig, ExperimentReport, ReportFormat, StrategyKind, BASELINE,
};
use segaug::generator::{invert_palette, render_palette, Palette};
use segaug::labelmap::{compose, load_labelmap, save_labelmap, separate, ClassEntry};
use segaug::mixer::{mix_manifest, ManifestEntry};
use segaug::segmenter::{finite_diff_check, Sample, SoftmaxModel, FEATURES};
use segaug::synthworld::{generate_dataset, WorldConfig};
use segaug::{seed, ClassTable, ExactIoUReport, FrequencyReport, LabelMap};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond { Ok(detail) } else { Err(detail) }
}

fn sweep() -> (ExperimentReport, f64) {
    let mut config = ExperimentConfig::default_world();
    config.strategies = vec![StrategyKind::Reconstruction];
    let start = Instant::now();
    let out = run_experiment(&config, 1).expect("default sweep runs");
    let per_seed = start.elapsed().as_secs_f64() / config.seeds.len() as f64;
    (out.report, per_seed)
}

fn direction(report: &ExperimentReport, per_seed: f64) -> Outcome {
    let mut wins = 0;
    let mut deltas = Vec::new();
    for s in &report.seeds {
        let base = report.cell(s.seed, 0.5, BASELINE).ok_or("missing baseline cell")?;
        let rec = report.cell(s.seed, 0.5, "reconstruction").ok_or("missing reconstruction cell")?;
        let (Some(b), Some(r)) = (base.rare_class_iou, rec.rare_class_iou) else {
            return Err(format!("seed {}: rare-class IoU undefined", s.seed));
        };
        if r >= b {
            wins += 1;
        }
        deltas.push(rec.mean_iou.ok_or("undefined mIoU")? - base.mean_iou.ok_or("undefined mIoU")?);
    }
    let mean_delta = deltas.iter().sum::<f64>() / deltas.len() as f64;
    check(
        report.seeds.len() == 5 && wins >= 4 && mean_delta >= 0.0 && per_seed < 300.0,
        format!(
            "rare-class IoU >= baseline in {wins}/{} seeds, mean mIoU delta {mean_delta:+.4}, {per_seed:.1} s/seed",
            report.seeds.len()
        ),
    )
}

fn ratio_sweep(report: &ExperimentReport) -> Outcome {
    let mut hits = 0;
    let mut argmaxes = Vec::new();
    for s in &report.seeds {
        let mut best: Option<(f64, f64)> = None;
        for &r in report.ratios.iter().filter(|&&r| r > 0.0) {
            let m = report
                .cell(s.seed, r, "reconstruction")
                .and_then(|c| c.mean_iou)
                .ok_or_else(|| format!("seed {} ratio {r}: no mIoU", s.seed))?;
            if best.is_none_or(|(_, bm)| m > bm) {
                best = Some((r, m));
            }
        }
        let (r, _) = best.ok_or("no ratios")?;
        argmaxes.push(r);
        if (0.3..=0.7).contains(&r) {
            hits += 1;
        }
    }
    check(hits >= 3, format!("argmax ratio per seed {argmaxes:?}, {hits}/5 in [0.3, 0.7]"))
}

fn frequency_monotonicity() -> Outcome {
    let world = WorldConfig::default_world(11, 60);
    let table = world.classes.clone();
    let maps: Vec<(String, LabelMap)> = generate_dataset(&world)
        .map_err(|e| e.to_string())?
        .into_iter()
        .enumerate()
        .map(|(i, (m, _))| (format!("{i}"), m))
        .collect();
    let library = build_mask_library(&maps, &table, 16).map_err(|e| e.to_string())?;
    let before: FrequencyReport = appearance_frequency(maps.iter().map(|(_, m)| m), &table).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for c in before.classes.iter().filter(|c| c.appearance_frequency > 0.0 && c.appearance_frequency < 1.0) {
        for count in [1, 5, 40] {
            let synth = augment_single_label(&maps, &library, c.id, count, seed::derive(7, count as u64))
                .map_err(|e| e.to_string())?;
            let all = maps.iter().map(|(_, m)| m).chain(synth.iter().map(|r| &r.label_map));
            let after: FrequencyReport = appearance_frequency(all, &table).map_err(|e| e.to_string())?;
            let a = after.get(c.id).ok_or("class vanished")?;
            // Every synthetic map contains c, so the new count is exactly old + count.
            let exact_f64 = (c.images_with + count as u64) as f64 / (maps.len() + count) as f64;
            if !(a.appearance_frequency > c.appearance_frequency
                && a.images_with == c.images_with + count as u64
                && a.appearance_frequency == exact_f64)
            {
                return Err(format!(
                    "class {} count {count}: {} -> {} (expected {exact_f64})",
                    c.id, c.appearance_frequency, a.appearance_frequency
                ));
            }
            checked += 1;
        }
    }
    check(checked >= 6, format!("{checked} (class, count) cases strictly increase with exact counts"))
}

fn small_table() -> ClassTable {
    let entries = (0..5).map(|id| ClassEntry { id, name: format!("c{id}") }).collect();
    ClassTable::new(entries, 255).unwrap()
}

fn random_map(rng: &mut seed::Rng, w: usize, h: usize, ids: &[u8]) -> LabelMap {
    LabelMap::new(w, h, (0..w * h).map(|_| ids[rng.random_range(0..ids.len())]).collect()).unwrap()
}

fn iou_oracle() -> Outcome {
    let table = small_table();
    let mut rng = seed::rng(2024);
    for case in 0..100 {
        let gt = random_map(&mut rng, 16, 16, &[0, 1, 2, 3, 4, 255]);
        let pred = random_map(&mut rng, 16, 16, &[0, 1, 2, 3, 4]);
        let mut cm = ConfusionMatrix::new(&table);
        cm.accumulate(&pred, &gt).map_err(|e| e.to_string())?;
        let report: ExactIoUReport = iou_report(&cm);

        let mut sum = BigRational::zero();
        let mut defined = 0i64;
        for c in table.ids() {
            let scored = |p: usize| gt.data()[p] != 255;
            let g: BTreeSet<usize> = (0..256).filter(|&p| scored(p) && gt.data()[p] == c).collect();
            let q: BTreeSet<usize> = (0..256).filter(|&p| scored(p) && pred.data()[p] == c).collect();
            let union = g.union(&q).count();
            let expected = (union > 0)
                .then(|| BigRational::new((g.intersection(&q).count() as i64).into(), (union as i64).into()));
            if let Some(v) = &expected {
                sum += v.clone();
                defined += 1;
            }
            if report.iou(c) != expected {
                return Err(format!("case {case} class {c}: {:?} vs {expected:?}", report.iou(c)));
            }
        }
        let mean = (defined > 0).then(|| sum / BigRational::from_integer(defined.into()));
        if report.mean_iou != mean {
            return Err(format!("case {case}: mIoU {:?} vs {mean:?}", report.mean_iou));
        }
    }
    Ok("100 random 16x16 pairs match the per-pixel set computation exactly".into())
}

fn algebra_roundtrips() -> Outcome {
    let table = ClassTable::cityscapes();
    let palette = Palette::cityscapes();
    let mut ids: Vec<u8> = table.ids().collect();
    ids.push(255);
    let mut rng = seed::rng(99);
    for case in 0..100 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let m = random_map(&mut rng, w, h, &ids);
        let masks = separate(&m, &table).map_err(|e| e.to_string())?;
        if compose(&masks, w, h, 255).map_err(|e| e.to_string())? != m {
            return Err(format!("case {case}: compose(separate(m)) != m"));
        }
        if load_labelmap(&save_labelmap(&m)).map_err(|e| e.to_string())? != m {
            return Err(format!("case {case}: load(save(m)) != m"));
        }
        let img = render_palette(&m, &palette, 0.0, case).map_err(|e| e.to_string())?;
        if invert_palette(&img, &palette) != m {
            return Err(format!("case {case}: invert(render(m, 0)) != m"));
        }
    }
    Ok("100 random maps: compose/separate, codec and sigma=0 palette roundtrips exact".into())
}

fn gradient_check() -> Outcome {
    let mut rng = seed::rng(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.random_range(2..8u8);
        let entries = (0..k).map(|id| ClassEntry { id, name: format!("c{id}") }).collect();
        let table = ClassTable::new(entries, 255).unwrap();
        let mut model = SoftmaxModel::<f64>::zeros(&table);
        for w in &mut model.weights {
            *w = rng.random_range(-2.0..2.0);
        }
        let batch: Vec<Sample<f64>> = (0..rng.random_range(1..32))
            .map(|_| {
                let mut f = [1.0; FEATURES];
                for v in f.iter_mut().take(FEATURES - 1) {
                    *v = rng.random::<f64>();
                }
                Sample { features: f, target: rng.random_range(0..k as usize) }
            })
            .collect();
        let l2 = if rng.random_bool(0.5) { rng.random_range(0.0..0.1) } else { 0.0 };
        worst = worst.max(finite_diff_check(&model, &batch, l2, 1e-4).map_err(|e| e.to_string())?);
    }
    check(worst < 1e-4, format!("max relative error {worst:.3e} over 20 models at eps=1e-4"))
}

fn mixing_arithmetic() -> Outcome {
    let pool: Vec<ManifestEntry> = (0..1000)
        .map(|i| ManifestEntry::supplementary(format!("s{i}.ppm"), format!("s{i}.pgm"), "reconstruction"))
        .collect();
    let mut worst: f64 = 0.0;
    for n in [1usize, 7, 100] {
        let orig: Vec<ManifestEntry> =
            (0..n).map(|i| ManifestEntry::original(format!("o{i}.ppm"), format!("o{i}.pgm"))).collect();
        for i in 0..10 {
            let r = f64::from(i) / 10.0;
            let m = mix_manifest(&orig, &pool, r, 3).map_err(|e| e.to_string())?;
            let expected_s = (r * n as f64 / (1.0 - r)).round() as usize;
            let total = m.entries.len();
            let gap = (m.achieved_ratio - r).abs();
            worst = worst.max(gap * total as f64);
            if m.supplementary_count() != expected_s || total != n + expected_s || gap > 1.0 / total as f64 {
                return Err(format!("n={n} r={r}: s={} achieved {}", m.supplementary_count(), m.achieved_ratio));
            }
        }
    }
    check(worst <= 1.0, format!("30 cases within 1/|entries| (worst {worst:.3} entries)"))
}

fn reconstruction_totality() -> Outcome {
    let world = WorldConfig::default_world(3, 40);
    let table = world.classes.clone();
    let maps: Vec<(String, LabelMap)> = generate_dataset(&world)
        .map_err(|e| e.to_string())?
        .into_iter()
        .enumerate()
        .map(|(i, (m, _))| (format!("{i}"), m))
        .collect();
    let library = build_mask_library(&maps, &table, 16).map_err(|e| e.to_string())?;
    let layout = BasicLayout::cityscapes_default();
    let z = default_z_order();
    let mut ignored = 0;
    for i in 0..1000u64 {
        let n = (i % 8) as usize;
        let rec = reconstruct_map(&library, &layout, n, &z, &ClassSampling::Uniform, 64, 64, seed::derive(17, i))
            .map_err(|e| e.to_string())?;
        ignored += rec.label_map.count(table.ignore_id());
    }
    check(ignored == 0, format!("1000 reconstructed maps, {ignored} ignore pixels"))
}

fn determinism() -> Outcome {
    let mut config = ExperimentConfig::default_world();
    config.world.count = 40;
    config.test_count = 10;
    config.seeds = vec![0, 1];
    config.ratios = vec![0.0, 0.3, 0.7];
    config.train.epochs = 3;
    let a = run_experiment(&config, 1).map_err(|e| e.to_string())?;
    let b = run_experiment(&config, 0).map_err(|e| e.to_string())?;
    let ja = emit_report(&a.report, ReportFormat::Json).map_err(|e| e.to_string())?;
    let jb = emit_report(&b.report, ReportFormat::Json).map_err(|e| e.to_string())?;
    check(ja == jb, format!("two runs, {} bytes of report JSON, identical: {}", ja.len(), ja == jb))
}

fn main() {
    let (report, per_seed) = sweep();
    let criteria: Vec<(&str, Outcome)> = vec![
        ("direction reproduction", direction(&report, per_seed)),
        ("ratio sweep shape", ratio_sweep(&report)),
        ("frequency monotonicity", frequency_monotonicity()),
        ("IoU oracle equivalence", iou_oracle()),
        ("algebra roundtrips", algebra_roundtrips()),
        ("gradient correctness", gradient_check()),
        ("mixing arithmetic", mixing_arithmetic()),
        ("reconstruction totality", reconstruction_totality()),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (name, outcome) in &criteria {
        match outcome {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
