//! Texture patches cut from segmentation data, and a small CNN that
//! classifies them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::dataset::{load_rgb, rgb_to_tensor, save_rgb, SegSample};
use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::kernels::ConvGeom;
use crate::layers::{Conv, Init};
use crate::mask::IndexMask;
use crate::metrics::{per_class_prf, weighted_prf, ClassPrf, WeightedPrf};
use crate::params::{derived_rng, ParamStore};
use crate::taxonomy::ClassTaxonomy;
use crate::tensor::Tensor;
use crate::training::{poly_lr, Sgd};

pub const PATCH_SIZE: usize = 32;

/// Classes dropped from the texture set.
pub const OMITTED: [&str; 4] = ["canal", "ditch", "reservoir", "fjord"];

/// `(tree class, texture label)`: water patches from an image that shows
/// the tree class are relabelled. Earlier entries win.
pub const TREE_REMAPS: [(&str, &str); 2] = [("mangrove", "estuary"), ("cypress tree", "swamp")];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtexLabelMap {
    /// Output label names; the index is the label id.
    pub labels: Vec<String>,
    /// Source class id to output label for the kept classes.
    pub kept: BTreeMap<u8, u8>,
    pub omitted: Vec<u8>,
    /// `(trigger class id, output label)` in precedence order.
    pub remaps: Vec<(u8, u8)>,
}

impl AtexLabelMap {
    /// Aquatic classes minus [`OMITTED`], in taxonomy order, followed by the
    /// [`TREE_REMAPS`] labels. Remaps whose tree class the taxonomy lacks
    /// are dropped.
    pub fn new(taxonomy: &ClassTaxonomy) -> Self {
        let omitted: Vec<u8> = OMITTED.iter().filter_map(|n| taxonomy.id_of(n)).collect();
        let mut labels = Vec::new();
        let mut kept = BTreeMap::new();
        for id in taxonomy.aquatic_ids() {
            if !omitted.contains(&id) {
                kept.insert(id, labels.len() as u8);
                labels.push(taxonomy.name(id).to_string());
            }
        }
        let mut remaps = Vec::new();
        for (tree, label) in TREE_REMAPS {
            if let Some(trigger) = taxonomy.id_of(tree) {
                remaps.push((trigger, labels.len() as u8));
                labels.push(label.to_string());
            }
        }
        Self {
            labels,
            kept,
            omitted,
            remaps,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn name(&self, label: u8) -> &str {
        &self.labels[label as usize]
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.labels.iter().position(|l| l == name).map(|i| i as u8)
    }

    /// The remap label that applies to an image containing `present` ids.
    pub fn image_remap(&self, present: &[u8]) -> Option<u8> {
        self.remaps.iter().find(|(t, _)| present.contains(t)).map(|&(_, l)| l)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchSource {
    pub image: String,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TexturePatch {
    pub pixels: RgbImage,
    pub label: u8,
    /// Class id of the footprint before remapping.
    pub source_label: u8,
    pub source: PatchSource,
}

/// Grid-aligned `32×32` tiles (stride 32, row-major from the origin) whose
/// mask footprint is one kept aquatic class.
pub fn extract_patches(
    image_id: &str,
    image: &RgbImage,
    mask: &IndexMask,
    taxonomy: &ClassTaxonomy,
    map: &AtexLabelMap,
) -> Result<Vec<TexturePatch>> {
    let (h, w) = mask.dims();
    if (image.height() as usize, image.width() as usize) != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "{image_id}: image {}×{} vs mask {h}×{w}",
            image.height(),
            image.width()
        )));
    }
    let remap = map.image_remap(&mask.present_ids());
    let mut out = Vec::new();
    for ty in 0..h / PATCH_SIZE {
        for tx in 0..w / PATCH_SIZE {
            let (row, col) = (ty * PATCH_SIZE, tx * PATCH_SIZE);
            let first = mask.get(row, col);
            let Some(&kept) = map.kept.get(&first) else { continue };
            if !taxonomy.is_aquatic(first) {
                continue;
            }
            let uniform = (row..row + PATCH_SIZE).all(|y| (col..col + PATCH_SIZE).all(|x| mask.get(y, x) == first));
            if !uniform {
                continue;
            }
            out.push(TexturePatch {
                pixels: image::imageops::crop_imm(image, col as u32, row as u32, PATCH_SIZE as u32, PATCH_SIZE as u32).to_image(),
                label: remap.unwrap_or(kept),
                source_label: first,
                source: PatchSource {
                    image: image_id.to_string(),
                    row,
                    col,
                },
            });
        }
    }
    Ok(out)
}

/// Patches of every sample, in sample order.
pub fn extract_dataset(samples: &[&SegSample], taxonomy: &ClassTaxonomy, map: &AtexLabelMap) -> Result<Vec<TexturePatch>> {
    let parts = samples
        .par_iter()
        .map(|s| extract_patches(&s.name, &load_rgb(&s.image_path)?, &s.load_mask()?, taxonomy, map))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchSplits {
    pub train: Vec<TexturePatch>,
    pub val: Vec<TexturePatch>,
    pub test: Vec<TexturePatch>,
}

/// Splits `n` items by `ratios` with largest-remainder rounding; ties in
/// the remainder favour train, then val.
pub fn split_counts(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let r = [ratios.0, ratios.1, ratios.2];
    let exact: Vec<f64> = r.iter().map(|x| x * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    (counts[0], counts[1], counts[2])
}

/// Stratified seeded split: each label's patches are shuffled and cut
/// according to `ratios` (train, val, test).
pub fn split_patches(patches: Vec<TexturePatch>, ratios: (f64, f64, f64), seed: u64) -> Result<PatchSplits> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::ConfigInvalid(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut by_label: BTreeMap<u8, Vec<TexturePatch>> = BTreeMap::new();
    for p in patches {
        by_label.entry(p.label).or_default().push(p);
    }
    let mut out = PatchSplits::default();
    for (label, mut group) in by_label {
        group.sort_by(|x, y| x.source.cmp(&y.source));
        group.shuffle(&mut derived_rng(seed, &format!("atex.split.{label}")));
        let (nt, nv, _) = split_counts(group.len(), ratios);
        let test = group.split_off(nt + nv);
        let val = group.split_off(nt);
        out.train.extend(group);
        out.val.extend(val);
        out.test.extend(test);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct PatchRow {
    file: String,
    split: String,
    label: u8,
    label_name: String,
    source_label: u8,
    source_image: String,
    row: usize,
    col: usize,
}

pub const PATCH_MANIFEST: &str = "patches.csv";

/// Writes `dir/<split>/<label>/<image>_r<row>_c<col>.png` plus a manifest.
pub fn write_patch_store(dir: &Path, splits: &PatchSplits, map: &AtexLabelMap) -> Result<PathBuf> {
    let manifest = dir.join(PATCH_MANIFEST);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| Error::parse(&manifest, e))?;
    for (split, patches) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        for p in patches {
            let label_name = map.name(p.label).to_string();
            let file = format!(
                "{split}/{}/{}_r{}_c{}.png",
                label_name.replace(' ', "_"),
                p.source.image,
                p.source.row,
                p.source.col
            );
            save_rgb(&dir.join(&file), &p.pixels)?;
            w.serialize(PatchRow {
                file,
                split: split.to_string(),
                label: p.label,
                label_name,
                source_label: p.source_label,
                source_image: p.source.image.clone(),
                row: p.source.row,
                col: p.source.col,
            })
            .map_err(|e| Error::parse(&manifest, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

pub fn read_patch_store(dir: &Path) -> Result<PatchSplits> {
    let manifest = dir.join(PATCH_MANIFEST);
    let mut r = csv::Reader::from_path(&manifest).map_err(|e| Error::parse(&manifest, e))?;
    let mut out = PatchSplits::default();
    for row in r.deserialize::<PatchRow>() {
        let row = row.map_err(|e| Error::parse(&manifest, e))?;
        let patch = TexturePatch {
            pixels: load_rgb(&dir.join(&row.file))?,
            label: row.label,
            source_label: row.source_label,
            source: PatchSource {
                image: row.source_image,
                row: row.row,
                col: row.col,
            },
        };
        match row.split.as_str() {
            "train" => out.train.push(patch),
            "val" => out.val.push(patch),
            "test" => out.test.push(patch),
            other => return Err(Error::parse(&manifest, format!("unknown split `{other}`"))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub width: usize,
    pub iters: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            width: 16,
            iters: 300,
            batch_size: 8,
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

/// conv3×3/2 → ReLU → conv3×3/2 → ReLU → conv3×3 → ReLU → global average
/// pool → 1×1 classifier.
#[derive(Debug, Clone)]
pub struct TextureClassifier {
    pub config: ClassifierConfig,
    pub labels: Vec<String>,
    pub params: ParamStore,
    convs: [Conv; 3],
    head: Conv,
}

impl TextureClassifier {
    pub fn new(config: ClassifierConfig, labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 || config.width == 0 || config.batch_size == 0 {
            return Err(Error::ConfigInvalid("classifier needs two labels and positive width and batch size".into()));
        }
        let mut params = ParamStore::new();
        let s = config.seed;
        let w = config.width;
        let convs = [
            Conv::new(&mut params, s, "tex.conv0", 3, w, 3, ConvGeom::strided3(2), Init::He),
            Conv::new(&mut params, s, "tex.conv1", w, 2 * w, 3, ConvGeom::strided3(2), Init::He),
            Conv::new(&mut params, s, "tex.conv2", 2 * w, 2 * w, 3, ConvGeom::same3(1), Init::He),
        ];
        let head = Conv::pointwise(&mut params, s, "tex.head", 2 * w, labels.len(), Init::Zero);
        Ok(Self {
            config,
            labels,
            params,
            convs,
            head,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    fn forward_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(g, &self.params, h)?;
            h = g.relu(h);
        }
        let pooled = g.global_avg_pool(h);
        self.head.forward(g, &self.params, pooled)
    }

    pub fn logits(&self, patch: &RgbImage) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.input(rgb_to_tensor(patch));
        let y = self.forward_graph(&mut g, x)?;
        Ok(g.value(y).data().to_vec())
    }

    pub fn predict(&self, patch: &RgbImage) -> Result<u8> {
        let l = self.logits(patch)?;
        let mut best = 0;
        for (i, v) in l.iter().enumerate() {
            if *v > l[best] {
                best = i;
            }
        }
        Ok(best as u8)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let config = serde_json::json!({
            "kind": "atex_classifier",
            "model": self.config,
            "labels": self.labels,
        });
        Checkpoint::from_params(config, &self.params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.config.get("kind").and_then(|v| v.as_str()) != Some("atex_classifier") {
            return Err(Error::Checkpoint("not a texture-classifier checkpoint".into()));
        }
        let config = serde_json::from_value(ckpt.config["model"].clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let labels = serde_json::from_value(ckpt.config["labels"].clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut c = Self::new(config, labels)?;
        c.params.load_named(&ckpt.blobs).map_err(Error::Checkpoint)?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::read(path)?)
    }
}

/// Trains a fresh classifier over all `labels` on `patches`; returns it with
/// the per-iteration mean loss.
pub fn atex_train(patches: &[TexturePatch], labels: Vec<String>, config: &ClassifierConfig) -> Result<(TextureClassifier, Vec<f64>)> {
    let mut present: Vec<u8> = patches.iter().map(|p| p.label).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::SingleClassDataset(
            present.first().map(|&l| labels.get(l as usize).cloned().unwrap_or_else(|| l.to_string())).unwrap_or_default(),
        ));
    }
    let mut model = TextureClassifier::new(config.clone(), labels)?;
    if let Some(p) = patches.iter().find(|p| p.label as usize >= model.num_labels()) {
        return Err(Error::IdOutOfRange {
            id: p.label as u32,
            num_classes: model.num_labels(),
        });
    }
    let inputs: Vec<Tensor> = patches.iter().map(|p| rgb_to_tensor(&p.pixels)).collect();
    let mut opt = Sgd::new(&model.params, config.momentum, config.weight_decay);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut epoch = 0u64;
    let mut pos = order.len();
    let mut losses = Vec::with_capacity(config.iters);
    for iter in 0..config.iters {
        let batch: Vec<usize> = (0..config.batch_size)
            .map(|_| {
                if pos == order.len() {
                    order.shuffle(&mut derived_rng(config.seed, &format!("atex.order.{epoch}")));
                    epoch += 1;
                    pos = 0;
                }
                pos += 1;
                order[pos - 1]
            })
            .collect();
        let inv = 1.0 / batch.len() as f64;
        let m = &model;
        let results: Vec<Result<(f64, Gradients)>> = batch
            .par_iter()
            .map(|&i| {
                let mut g = Graph::new();
                let x = g.input(inputs[i].clone());
                let y = m.forward_graph(&mut g, x)?;
                let l = g.cross_entropy(y, vec![patches[i].label].into(), u8::MAX, inv)?;
                let v = g.value(l).data()[0];
                g.backward(l)?;
                Ok((v, g.param_grads(&m.params)))
            })
            .collect();
        let mut grads = Gradients::zeros_like(&model.params);
        let mut loss = 0.0;
        for r in results {
            let (v, g) = r?;
            loss += v;
            grads.accumulate(&g);
        }
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::DivergedLoss { iter, loss });
        }
        opt.step(&mut model.params, &grads, poly_lr(config.base_lr, iter, config.iters, 0.9));
        losses.push(loss);
    }
    Ok((model, losses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtexReport {
    pub weighted: WeightedPrf,
    pub per_class: Vec<ClassPrf>,
    pub labels: Vec<String>,
    pub patches: usize,
}

impl AtexReport {
    pub fn from_predictions(truth: &[usize], pred: &[usize], labels: Vec<String>) -> Result<Self> {
        Ok(Self {
            weighted: weighted_prf(truth, pred, labels.len())?,
            per_class: per_class_prf(truth, pred, labels.len())?,
            patches: truth.len(),
            labels,
        })
    }

    /// Weighted scores in percent under `Prec. Recall F1`, then the
    /// per-class rows with support.
    pub fn render_table(&self, model: &str) -> String {
        let w = self.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(model.len()).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<w$} | {:>6} | {:>6} | {:>6}", "Model", "Prec.", "Recall", "F1");
        let _ = writeln!(out, "{}", "-".repeat(w + 27));
        let p = self.weighted;
        let _ = writeln!(
            out,
            "{model:<w$} | {:>6.2} | {:>6.2} | {:>6.2}",
            100.0 * p.precision,
            100.0 * p.recall,
            100.0 * p.f1
        );
        out.push('\n');
        let _ = writeln!(out, "{:<w$} | {:>6} | {:>6} | {:>6} | {:>7}", "Label", "Prec.", "Recall", "F1", "Support");
        for c in self.per_class.iter().filter(|c| c.support > 0) {
            let _ = writeln!(
                out,
                "{:<w$} | {:>6.2} | {:>6.2} | {:>6.2} | {:>7}",
                self.labels[c.class],
                100.0 * c.precision,
                100.0 * c.recall,
                100.0 * c.f1,
                c.support
            );
        }
        out
    }
}

pub fn atex_eval(model: &TextureClassifier, patches: &[TexturePatch]) -> Result<AtexReport> {
    if patches.is_empty() {
        return Err(Error::EmptyDataset("no patches to evaluate".into()));
    }
    let pred = patches
        .par_iter()
        .map(|p| model.predict(&p.pixels).map(|l| l as usize))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<usize> = patches.iter().map(|p| p.label as usize).collect();
    AtexReport::from_predictions(&truth, &pred, model.labels.clone())
}
