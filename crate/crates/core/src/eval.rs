//! Confusion matrices, per-class IoU and baseline/candidate comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::{ClassTable, LabelMap};
use crate::num::Fraction;

/// Ground-truth rows by predicted columns, in class-table order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    table: ClassTable,
    counts: Vec<u64>,
    ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(table: &ClassTable) -> Self {
        let k = table.len();
        ConfusionMatrix {
            table: table.clone(),
            counts: vec![0; k * k],
            ignored: 0,
        }
    }

    pub fn table(&self) -> &ClassTable {
        &self.table
    }

    pub fn size(&self) -> usize {
        self.table.len()
    }

    /// Count for ground truth at table index `gt`, prediction at index `pred`.
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.size() + pred]
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds every pixel whose ground truth is not the ignore id.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::Evaluation(format!(
                "prediction is {:?} but ground truth is {:?}",
                pred.dims(),
                gt.dims()
            )));
        }
        let k = self.size();
        let ignore = self.table.ignore_id();
        let mut local = vec![0u64; k * k];
        let mut ignored = 0;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == ignore {
                ignored += 1;
                continue;
            }
            let gi = self.table.index_of(g).ok_or_else(|| {
                Error::Evaluation(format!("ground truth contains unknown class {g}"))
            })?;
            let pi = self.table.index_of(p).ok_or_else(|| {
                Error::Evaluation(format!("prediction contains unknown class {p}"))
            })?;
            local[gi * k + pi] += 1;
        }
        for (c, l) in self.counts.iter_mut().zip(local) {
            *c += l;
        }
        self.ignored += ignored;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.table != other.table {
            return Err(Error::Evaluation("merging matrices over different class tables".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
        Ok(())
    }

    /// Swaps the roles of prediction and ground truth.
    pub fn transpose(&self) -> Self {
        let k = self.size();
        let mut counts = vec![0; k * k];
        for g in 0..k {
            for p in 0..k {
                counts[p * k + g] = self.get(g, p);
            }
        }
        ConfusionMatrix {
            table: self.table.clone(),
            counts,
            ignored: self.ignored,
        }
    }
}

pub fn accumulate_confusion(
    mut matrix: ConfusionMatrix,
    pred: &LabelMap,
    gt: &LabelMap,
    ignore_id: u8,
) -> Result<ConfusionMatrix> {
    if ignore_id != matrix.table.ignore_id() {
        return Err(Error::Evaluation(format!(
            "ignore id {ignore_id} differs from the matrix table's {}",
            matrix.table.ignore_id()
        )));
    }
    matrix.accumulate(pred, gt)?;
    Ok(matrix)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIoU<T> {
    pub id: u8,
    pub name: String,
    /// `None` when the class is in neither ground truth nor prediction.
    pub iou: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport<T> {
    pub classes: Vec<ClassIoU<T>>,
    pub mean_iou: Option<T>,
    pub overall_accuracy: Option<T>,
}

impl<T: Fraction> IoUReport<T> {
    pub fn iou(&self, id: u8) -> Option<T> {
        self.classes
            .iter()
            .find(|c| c.id == id)
            .and_then(|c| c.iou.clone())
    }
}

/// IoU_c = TP / (TP + FP + FN); the mean skips classes with an empty
/// denominator.
pub fn iou_report<T: Fraction>(matrix: &ConfusionMatrix) -> IoUReport<T> {
    let k = matrix.size();
    let mut classes = Vec::with_capacity(k);
    let mut sum = T::zero();
    let mut defined = 0u64;
    let mut correct = 0;
    for (c, entry) in matrix.table.entries().iter().enumerate() {
        let tp = matrix.get(c, c);
        let fp = (0..k).map(|g| matrix.get(g, c)).sum::<u64>() - tp;
        let fn_ = (0..k).map(|p| matrix.get(c, p)).sum::<u64>() - tp;
        let den = tp + fp + fn_;
        let iou = (den > 0).then(|| T::ratio(tp, den));
        if let Some(v) = &iou {
            sum = sum + v.clone();
            defined += 1;
        }
        correct += tp;
        classes.push(ClassIoU {
            id: entry.id,
            name: entry.name.clone(),
            iou,
        });
    }
    let total = matrix.total();
    IoUReport {
        classes,
        mean_iou: (defined > 0).then(|| sum / T::from_count(defined)),
        overall_accuracy: (total > 0).then(|| T::ratio(correct, total)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub id: Option<u8>,
    pub name: String,
    pub baseline: Option<f64>,
    pub candidate: Option<f64>,
    pub delta: Option<f64>,
}

/// Candidate minus baseline, per class and for the mean. Values are IoU
/// fractions; [`Comparison::to_text`] prints them as percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_label: String,
    pub candidate_label: String,
    pub rows: Vec<ComparisonRow>,
    pub mean: ComparisonRow,
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

pub fn compare_reports(
    baseline: &IoUReport<f64>,
    candidate: &IoUReport<f64>,
    labels: (&str, &str),
) -> Result<Comparison> {
    let ids = |r: &IoUReport<f64>| r.classes.iter().map(|c| c.id).collect::<Vec<_>>();
    if ids(baseline) != ids(candidate) {
        return Err(Error::Comparison(format!(
            "class sets differ: {:?} vs {:?}",
            ids(baseline),
            ids(candidate)
        )));
    }
    let rows = baseline
        .classes
        .iter()
        .zip(&candidate.classes)
        .map(|(b, c)| ComparisonRow {
            id: Some(b.id),
            name: b.name.clone(),
            baseline: b.iou,
            candidate: c.iou,
            delta: delta(b.iou, c.iou),
        })
        .collect();
    Ok(Comparison {
        baseline_label: labels.0.to_string(),
        candidate_label: labels.1.to_string(),
        rows,
        mean: ComparisonRow {
            id: None,
            name: "mIoU".into(),
            baseline: baseline.mean_iou,
            candidate: candidate.mean_iou,
            delta: delta(baseline.mean_iou, candidate.mean_iou),
        },
    })
}

/// Percentage with two decimals, e.g. `0.7731` -> `"77.31"`.
pub fn format_percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Signed percentage-point delta, two decimals with trailing zeros
/// trimmed to one: `0.021` -> `"+2.1"`, `0.0179` -> `"+1.79"`.
pub fn format_delta(d: f64) -> String {
    let mut s = format!("{:+.2}", d * 100.0);
    if s.ends_with('0') {
        s.pop();
    }
    if s == "-0.0" {
        s = "+0.0".into();
    }
    s
}

/// `value/+delta`, or just the value when there is no delta.
pub fn format_cell(value: Option<f64>, delta: Option<f64>) -> String {
    match (value, delta) {
        (Some(v), Some(d)) => format!("{}/{}", format_percent(v), format_delta(d)),
        (Some(v), None) => format_percent(v),
        (None, _) => "-".into(),
    }
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut rows: Vec<[String; 3]> = vec![[
            "Class".into(),
            self.baseline_label.clone(),
            self.candidate_label.clone(),
        ]];
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            rows.push([
                r.name.clone(),
                format_cell(r.baseline, None),
                format_cell(r.candidate, r.delta),
            ]);
        }
        render_table(&rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,baseline,candidate,delta\n");
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.name,
                num(r.baseline),
                num(r.candidate),
                num(r.delta)
            ));
        }
        out
    }
}

/// Left-aligned columns separated by ` | `.
pub fn render_table<const N: usize>(rows: &[[String; N]]) -> String {
    let mut widths = [0usize; N];
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(line.join(" | ").trim_end());
        out.push('\n');
    }
    out
}
