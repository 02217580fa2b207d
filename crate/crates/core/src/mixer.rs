//! Training manifests that mix original and supplementary samples, and
//! the schedules that order them.
//!
//! The supplementary ratio is supplementary images over all training
//! images. For `n` originals and ratio `r` the manifest takes
//! `s = round(r * n / (1 - r))` supplementary entries, which keeps the
//! achieved ratio within `1 / (n + s)` of the request.

use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    Original,
    Supplementary,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub label: String,
    pub origin: Origin,
    pub strategy: String,
}

impl ManifestEntry {
    pub fn original(image: impl Into<String>, label: impl Into<String>) -> Self {
        ManifestEntry {
            image: image.into(),
            label: label.into(),
            origin: Origin::Original,
            strategy: "original".into(),
        }
    }

    pub fn supplementary(
        image: impl Into<String>,
        label: impl Into<String>,
        strategy: impl Into<String>,
    ) -> Self {
        ManifestEntry {
            image: image.into(),
            label: label.into(),
            origin: Origin::Supplementary,
            strategy: strategy.into(),
        }
    }
}

/// Header record of a manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub requested_ratio: f64,
    pub achieved_ratio: f64,
    pub seed: u64,
    pub with_replacement: bool,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub requested_ratio: f64,
    pub achieved_ratio: f64,
    pub seed: u64,
    /// Set when the pool was smaller than the draw and entries repeat.
    pub with_replacement: bool,
}

impl DatasetManifest {
    pub fn supplementary_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.origin == Origin::Supplementary)
            .count()
    }

    pub fn header(&self) -> ManifestHeader {
        ManifestHeader {
            requested_ratio: self.requested_ratio,
            achieved_ratio: self.achieved_ratio,
            seed: self.seed,
            with_replacement: self.with_replacement,
            entries: self.entries.len(),
        }
    }

    /// JSON lines: the header, then one entry per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header())?;
        w.write_all(b"\n")?;
        write_entries(&self.entries, w)
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Mix("empty manifest".into()))?
            .map_err(|e| Error::io("<manifest>", e))?;
        let header: ManifestHeader = serde_json::from_str(&first)?;
        let entries = read_entries(lines)?;
        if entries.len() != header.entries {
            return Err(Error::Mix(format!(
                "header announces {} entries, found {}",
                header.entries,
                entries.len()
            )));
        }
        Ok(DatasetManifest {
            entries,
            requested_ratio: header.requested_ratio,
            achieved_ratio: header.achieved_ratio,
            seed: header.seed,
            with_replacement: header.with_replacement,
        })
    }
}

pub fn write_entries(entries: &[ManifestEntry], mut w: impl Write) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn read_entries(lines: impl Iterator<Item = std::io::Result<String>>) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io("<manifest>", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Reads bare entry lines (no header), as written for schedule phases.
pub fn read_entries_jsonl(r: impl BufRead) -> Result<Vec<ManifestEntry>> {
    read_entries(r.lines())
}

/// Supplementary count for `n` originals at ratio `r`.
pub fn supplementary_count(n: usize, r: f64) -> usize {
    (r * n as f64 / (1.0 - r)).round() as usize
}

/// All originals plus a uniform draw from the supplementary pool.
pub fn mix_manifest(
    original: &[ManifestEntry],
    supplementary: &[ManifestEntry],
    ratio: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Mix(format!("ratio {ratio} outside [0, 1)")));
    }
    if original.is_empty() {
        return Err(Error::Mix("no original entries".into()));
    }
    if ratio > 0.0 && supplementary.is_empty() {
        return Err(Error::Mix(format!(
            "ratio {ratio} requested but the supplementary pool is empty"
        )));
    }
    let s = supplementary_count(original.len(), ratio);
    let mut rng = seed::rng(seed);
    let with_replacement = s > supplementary.len();
    let picked: Vec<&ManifestEntry> = if with_replacement {
        log::warn!(
            "supplementary pool has {} entries, drawing {s} with replacement",
            supplementary.len()
        );
        (0..s)
            .map(|_| &supplementary[rng.random_range(0..supplementary.len())])
            .collect()
    } else {
        index::sample(&mut rng, supplementary.len(), s)
            .into_iter()
            .map(|i| &supplementary[i])
            .collect()
    };
    let mut entries = original.to_vec();
    entries.extend(picked.into_iter().cloned());
    Ok(DatasetManifest {
        achieved_ratio: s as f64 / entries.len() as f64,
        entries,
        requested_ratio: ratio,
        seed,
        with_replacement,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// One shuffled phase over everything.
    Mixed,
    /// Supplementary entries first, then originals, weights carried over.
    PretrainFinetune,
}

impl std::str::FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(ScheduleMode::Mixed),
            "pretrain-finetune" => Ok(ScheduleMode::PretrainFinetune),
            _ => Err(Error::Usage(format!("unknown schedule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSchedule {
    pub mode: ScheduleMode,
    pub phases: Vec<Vec<ManifestEntry>>,
}

pub fn build_schedule(
    manifest: &DatasetManifest,
    mode: ScheduleMode,
    seed: u64,
) -> TrainingSchedule {
    let mut rng = seed::rng(seed);
    let mut shuffled = |mut v: Vec<ManifestEntry>| {
        v.shuffle(&mut rng);
        v
    };
    let phases = match mode {
        ScheduleMode::Mixed => vec![shuffled(manifest.entries.clone())],
        ScheduleMode::PretrainFinetune => {
            let (supp, orig): (Vec<_>, Vec<_>) = manifest
                .entries
                .iter()
                .cloned()
                .partition(|e| e.origin == Origin::Supplementary);
            if supp.is_empty() {
                log::warn!("pretrain-finetune schedule without supplementary data; single phase");
                vec![shuffled(orig)]
            } else {
                vec![shuffled(supp), shuffled(orig)]
            }
        }
    };
    TrainingSchedule { mode, phases }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn originals(n: usize) -> Vec<ManifestEntry> {
        (0..n).map(|i| ManifestEntry::original(format!("o{i}.ppm"), format!("o{i}.pgm"))).collect()
    }

    fn pool(n: usize) -> Vec<ManifestEntry> {
        (0..n)
            .map(|i| ManifestEntry::supplementary(format!("s{i}.ppm"), format!("s{i}.pgm"), "reconstruction"))
            .collect()
    }

    #[test]
    fn ratio_zero() {
        let m = mix_manifest(&originals(5), &pool(3), 0.0, 1).unwrap();
        assert_eq!(m.entries, originals(5));
        assert_eq!(m.achieved_ratio, 0.0);
        // An empty pool is fine when nothing is requested.
        assert!(mix_manifest(&originals(5), &[], 0.0, 1).is_ok());
    }

    #[test]
    fn ratio_arithmetic() {
        let m = mix_manifest(&originals(100), &pool(150), 0.5, 1).unwrap();
        assert_eq!(m.supplementary_count(), 100);
        assert_eq!(m.achieved_ratio, 0.5);
        assert!(!m.with_replacement);

        // 0.3 * 7 / 0.7 = 3
        let m = mix_manifest(&originals(7), &pool(10), 0.3, 1).unwrap();
        assert_eq!(m.supplementary_count(), 3);
        assert_eq!(m.achieved_ratio, 0.3);
    }

    #[test]
    fn mixing_errors() {
        assert!(mix_manifest(&originals(3), &pool(3), 1.0, 0).is_err());
        assert!(mix_manifest(&originals(3), &pool(3), -0.1, 0).is_err());
        assert!(mix_manifest(&[], &pool(3), 0.5, 0).is_err());
        assert!(mix_manifest(&originals(3), &[], 0.5, 0).is_err());
    }

    #[test]
    fn small_pool_draws_with_replacement() {
        let m = mix_manifest(&originals(10), &pool(2), 0.5, 4).unwrap();
        assert!(m.with_replacement);
        assert_eq!(m.supplementary_count(), 10);
    }

    #[test]
    fn without_replacement_has_no_duplicates() {
        let m = mix_manifest(&originals(10), &pool(30), 0.6, 4).unwrap();
        let mut supp: Vec<_> = m.entries.iter().filter(|e| e.origin == Origin::Supplementary).collect();
        let n = supp.len();
        supp.sort();
        supp.dedup();
        assert_eq!(supp.len(), n);
    }

    #[test]
    fn schedules() {
        let m = mix_manifest(&originals(5), &pool(5), 0.5, 2).unwrap();
        let mixed = build_schedule(&m, ScheduleMode::Mixed, 3);
        assert_eq!(mixed.phases.len(), 1);
        let mut a = mixed.phases[0].clone();
        let mut b = m.entries.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(mixed, build_schedule(&m, ScheduleMode::Mixed, 3));

        let pf = build_schedule(&m, ScheduleMode::PretrainFinetune, 3);
        assert_eq!(pf.phases.len(), 2);
        assert!(pf.phases[0].iter().all(|e| e.origin == Origin::Supplementary));
        assert!(pf.phases[1].iter().all(|e| e.origin == Origin::Original));
        assert_eq!(pf.phases[1].len(), 5);

        let plain = mix_manifest(&originals(4), &[], 0.0, 2).unwrap();
        let pf = build_schedule(&plain, ScheduleMode::PretrainFinetune, 3);
        assert_eq!(pf.phases.len(), 1);
    }

    #[test]
    fn jsonl_roundtrip() {
        let m = mix_manifest(&originals(4), &pool(4), 0.5, 9).unwrap();
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with(r#"{"image":"o0.ppm","label":"o0.pgm","origin":"ORIGINAL","strategy":"original"}"#));
        assert_eq!(DatasetManifest::read_jsonl(&buf[..]).unwrap(), m);
    }

    proptest! {
        #[test]
        fn achieved_ratio_bound(n in 1usize..200, r in 0.0f64..0.95, extra in 0usize..50, seed in any::<u64>()) {
            let s = supplementary_count(n, r);
            let m = mix_manifest(&originals(n), &pool(s + extra + 1), r, seed).unwrap();
            prop_assert_eq!(&m.entries[..n], &originals(n)[..]);
            prop_assert!((m.achieved_ratio - r).abs() <= 1.0 / m.entries.len() as f64);
            let sched = build_schedule(&m, ScheduleMode::PretrainFinetune, seed);
            let mut flat: Vec<_> = sched.phases.concat();
            let mut all = m.entries.clone();
            flat.sort();
            all.sort();
            prop_assert_eq!(flat, all);
        }
    }
}
