//! Confusion-matrix segmentation metrics and weighted classification scores.
//!
//! * `acc` — correctly classified pixels over counted pixels.
//! * `mIoU` — mean over classes of `TP / (TP + FP + FN)`; classes whose
//!   union is empty are left out of the mean.
//! * `A-acc` / `A-mIoU` — the same restricted to a class subset. The
//!   accuracy denominator is the pixels whose *ground truth* lies in the
//!   subset, so aquatic predictions on non-aquatic ground truth do not count.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::IndexMask;
use crate::taxonomy::ClassTaxonomy;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    /// `counts[g * K + p]`: pixels with ground truth `g` predicted as `p`.
    counts: Vec<u64>,
    ignored_pixels: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            ignored_pixels: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn ignored_pixels(&self) -> u64 {
        self.ignored_pixels
    }

    pub fn counted_pixels(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total_pixels(&self) -> u64 {
        self.counted_pixels() + self.ignored_pixels
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }

    /// Adds one `(prediction, ground truth)` pair of id slices.
    pub fn accumulate_slices(&mut self, pred: &[u8], gt: &[u8], ignore_id: u8) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::ShapeMismatch(format!("prediction of {} pixels, ground truth of {}", pred.len(), gt.len())));
        }
        let k = self.num_classes;
        // validate first so a failed call leaves the matrix untouched
        for (&p, &g) in pred.iter().zip(gt) {
            if g == ignore_id {
                continue;
            }
            for id in [p, g] {
                if id as usize >= k {
                    return Err(Error::IdOutOfRange {
                        id: id as u32,
                        num_classes: k,
                    });
                }
            }
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == ignore_id {
                self.ignored_pixels += 1;
            } else {
                self.counts[g as usize * k + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn accumulate(&mut self, pred: &IndexMask, gt: &IndexMask, ignore_id: u8) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::ShapeMismatch(format!("prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims())));
        }
        self.accumulate_slices(pred.data(), gt.data(), ignore_id)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::ShapeMismatch(format!("{} vs {} classes", self.num_classes, other.num_classes)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored_pixels += other.ignored_pixels;
        Ok(())
    }

    fn scope(&self, subset: Option<&[u8]>) -> Vec<usize> {
        match subset {
            Some(s) => s
                .iter()
                .map(|&c| c as usize)
                .filter(|&c| c < self.num_classes)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            None => (0..self.num_classes).collect(),
        }
    }

    /// Pixel accuracy over ground-truth pixels in `subset` (all classes if `None`).
    pub fn pixel_acc(&self, subset: Option<&[u8]>) -> Result<f64> {
        let mut correct = 0u64;
        let mut total = 0u64;
        for c in self.scope(subset) {
            correct += self.get(c, c);
            total += (0..self.num_classes).map(|p| self.get(c, p)).sum::<u64>();
        }
        if total == 0 {
            return Err(Error::EmptyScope);
        }
        Ok(correct as f64 / total as f64)
    }

    /// IoU of one class, `None` when its union is empty.
    pub fn class_iou(&self, c: usize) -> Option<f64> {
        let tp = self.get(c, c);
        let fn_: u64 = (0..self.num_classes).filter(|&p| p != c).map(|p| self.get(c, p)).sum();
        let fp: u64 = (0..self.num_classes).filter(|&g| g != c).map(|g| self.get(g, c)).sum();
        let denom = tp + fp + fn_;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes).map(|c| self.class_iou(c)).collect()
    }

    pub fn miou(&self, subset: Option<&[u8]>) -> Result<f64> {
        let ious: Vec<f64> = self.scope(subset).into_iter().filter_map(|c| self.class_iou(c)).collect();
        if ious.is_empty() {
            return Err(Error::EmptyScope);
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

/// Support-weighted precision, recall and F1 over classes `0..K`.
///
/// Per-class scores with a zero denominator count as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrf {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

pub fn per_class_prf(labels_true: &[usize], labels_pred: &[usize], num_classes: usize) -> Result<Vec<ClassPrf>> {
    if labels_true.len() != labels_pred.len() {
        return Err(Error::LengthMismatch(labels_true.len(), labels_pred.len()));
    }
    if labels_true.is_empty() {
        return Err(Error::EmptyScope);
    }
    let mut tp = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    for (&t, &p) in labels_true.iter().zip(labels_pred) {
        for id in [t, p] {
            if id >= num_classes {
                return Err(Error::IdOutOfRange {
                    id: id as u32,
                    num_classes,
                });
            }
        }
        support[t] += 1;
        pred_count[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok((0..num_classes)
        .map(|c| {
            let precision = ratio(tp[c], pred_count[c]);
            let recall = ratio(tp[c], support[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassPrf {
                class: c,
                precision,
                recall,
                f1,
                support: support[c],
            }
        })
        .collect())
}

pub fn weighted_prf(labels_true: &[usize], labels_pred: &[usize], num_classes: usize) -> Result<WeightedPrf> {
    let per = per_class_prf(labels_true, labels_pred, num_classes)?;
    let n = labels_true.len() as f64;
    let avg = |f: fn(&ClassPrf) -> f64| per.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / n;
    Ok(WeightedPrf {
        precision: avg(|c| c.precision),
        recall: avg(|c| c.recall),
        f1: avg(|c| c.f1),
    })
}

/// Summary of a segmentation evaluation, laid out like the per-category
/// benchmark table: one IoU column per aquatic class, then A-acc, A-mIoU,
/// acc and mIoU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub miou: f64,
    /// `None` when the data holds no aquatic ground truth.
    pub a_acc: Option<f64>,
    pub a_miou: Option<f64>,
    pub per_class_iou: Vec<ClassIou>,
    pub aquatic_classes: Vec<String>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub id: u8,
    pub name: String,
    pub iou: Option<f64>,
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix, taxonomy: &ClassTaxonomy) -> Result<Self> {
        let aquatic = taxonomy.aquatic_ids();
        let optional = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::EmptyScope) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            acc: cm.pixel_acc(None)?,
            miou: cm.miou(None)?,
            a_acc: optional(cm.pixel_acc(Some(&aquatic)))?,
            a_miou: optional(cm.miou(Some(&aquatic)))?,
            per_class_iou: taxonomy
                .classes()
                .iter()
                .map(|c| ClassIou {
                    id: c.id,
                    name: c.name.clone(),
                    iou: cm.class_iou(c.id as usize),
                })
                .collect(),
            aquatic_classes: aquatic.iter().map(|&i| taxonomy.name(i).to_string()).collect(),
            confusion: cm,
        })
    }

    pub fn column_headers(&self) -> Vec<String> {
        let mut cols = self.aquatic_classes.clone();
        cols.extend(["A-acc (%)", "A-mIoU", "acc (%)", "mIoU"].map(String::from));
        cols
    }

    /// Row values in percent, `None` for undefined entries.
    pub fn row_values(&self) -> Vec<Option<f64>> {
        let mut vals: Vec<Option<f64>> = self
            .aquatic_classes
            .iter()
            .map(|n| self.per_class_iou.iter().find(|c| &c.name == n).and_then(|c| c.iou))
            .collect();
        vals.extend([self.a_acc, self.a_miou, Some(self.acc), Some(self.miou)]);
        vals.into_iter().map(|v| v.map(|x| 100.0 * x)).collect()
    }

    /// Aligned text table with a single row labelled `method`.
    pub fn render_table(&self, method: &str) -> String {
        render_rows(&self.column_headers(), &[(method.to_string(), self.row_values())])
    }
}

/// Aligned text table; per-category columns get one decimal, the four
/// summary columns two.
pub fn render_rows(headers: &[String], rows: &[(String, Vec<Option<f64>>)]) -> String {
    let first = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Method".len());
    let n_summary = 4.min(headers.len());
    let widths: Vec<usize> = headers.iter().map(|h| h.len().max(6)).collect();
    let mut out = String::new();
    let _ = write!(out, "{:<first$}", "Method");
    for (h, w) in headers.iter().zip(&widths) {
        let _ = write!(out, " | {h:>w$}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(out.trim_end().len()));
    out.push('\n');
    for (name, vals) in rows {
        let _ = write!(out, "{name:<first$}");
        for (i, (v, w)) in vals.iter().zip(&widths).enumerate() {
            let decimals = if i + n_summary >= headers.len() { 2 } else { 1 };
            match v {
                Some(x) => {
                    let _ = write!(out, " | {x:>w$.decimals$}");
                }
                None => {
                    let _ = write!(out, " | {:>w$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
