//! Dataset statistics: label frequencies, the image-count/pixel
//! correlation, spatial mode maps and the re-annotation consistency table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SegSample};
use crate::error::{Error, Result};
use crate::mask::IndexMask;
use crate::metrics::ConfusionMatrix;
use crate::params::stable_hash;
use crate::taxonomy::{ClassTaxonomy, Group};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFrequency {
    pub id: u8,
    pub name: String,
    pub group: Group,
    pub aquatic: bool,
    /// Images holding at least one pixel of the class.
    pub image_count: usize,
    pub pixel_count: u64,
    pub pixel_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFractions {
    pub artificial: f64,
    pub natural: f64,
    pub general: f64,
    /// `artificial + natural`.
    pub waterbody: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub num_images: usize,
    pub total_pixels: u64,
    pub unlabeled_pixels: u64,
    pub unlabeled_fraction: f64,
    pub groups: GroupFractions,
    pub classes: Vec<ClassFrequency>,
}

impl LabelStats {
    /// Per-class rows as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,name,group,aquatic,image_count,pixel_count,pixel_fraction\n");
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.10}",
                c.id, c.name, c.group, c.aquatic, c.image_count, c.pixel_count, c.pixel_fraction
            );
        }
        out
    }
}

#[derive(Clone)]
struct Tally {
    pixels: Vec<u64>,
    images: Vec<usize>,
    unlabeled: u64,
    total: u64,
}

impl Tally {
    fn new(k: usize) -> Self {
        Self {
            pixels: vec![0; k],
            images: vec![0; k],
            unlabeled: 0,
            total: 0,
        }
    }

    fn merge(mut self, o: Tally) -> Tally {
        for (a, b) in self.pixels.iter_mut().zip(&o.pixels) {
            *a += b;
        }
        for (a, b) in self.images.iter_mut().zip(&o.images) {
            *a += b;
        }
        self.unlabeled += o.unlabeled;
        self.total += o.total;
        self
    }
}

fn tally(mask: &IndexMask, taxonomy: &ClassTaxonomy) -> Result<Tally> {
    let k = taxonomy.num_classes();
    let ignore = taxonomy.ignore_id();
    let mut t = Tally::new(k);
    let mut counts = [0u64; 256];
    for &v in mask.data() {
        counts[v as usize] += 1;
    }
    for (id, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        if id == ignore as usize {
            t.unlabeled += n;
        } else if id < k {
            t.pixels[id] += n;
            t.images[id] += 1;
        } else {
            return Err(Error::IdOutOfRange {
                id: id as u32,
                num_classes: k,
            });
        }
    }
    t.total = mask.data().len() as u64;
    Ok(t)
}

/// Per-class image counts and pixel fractions. The ignore id counts as
/// unlabeled.
pub fn label_frequency_masks(masks: &[IndexMask], taxonomy: &ClassTaxonomy) -> Result<LabelStats> {
    let tallies = masks.par_iter().map(|m| tally(m, taxonomy)).collect::<Result<Vec<_>>>()?;
    finish(tallies, masks.len(), taxonomy)
}

/// [`label_frequency_masks`] over sample files, loaded in parallel.
pub fn label_frequency(samples: &[&SegSample], taxonomy: &ClassTaxonomy) -> Result<LabelStats> {
    let tallies = samples
        .par_iter()
        .map(|s| tally(&s.load_mask()?, taxonomy))
        .collect::<Result<Vec<_>>>()?;
    finish(tallies, samples.len(), taxonomy)
}

fn finish(tallies: Vec<Tally>, n: usize, taxonomy: &ClassTaxonomy) -> Result<LabelStats> {
    if n == 0 {
        return Err(Error::EmptyDataset("no masks to count".into()));
    }
    let t = tallies.into_iter().fold(Tally::new(taxonomy.num_classes()), Tally::merge);
    if t.total == 0 {
        return Err(Error::EmptyDataset("masks hold no pixels".into()));
    }
    let total = t.total as f64;
    let classes: Vec<ClassFrequency> = taxonomy
        .classes()
        .iter()
        .map(|c| ClassFrequency {
            id: c.id,
            name: c.name.clone(),
            group: c.group,
            aquatic: c.aquatic,
            image_count: t.images[c.id as usize],
            pixel_count: t.pixels[c.id as usize],
            pixel_fraction: t.pixels[c.id as usize] as f64 / total,
        })
        .collect();
    let group = |g: Group| classes.iter().filter(|c| c.group == g).map(|c| c.pixel_count).sum::<u64>() as f64 / total;
    let (artificial, natural) = (group(Group::Artificial), group(Group::Natural));
    let waterbody_pixels: u64 = classes.iter().filter(|c| c.group != Group::General).map(|c| c.pixel_count).sum();
    Ok(LabelStats {
        num_images: n,
        total_pixels: t.total,
        unlabeled_pixels: t.unlabeled,
        unlabeled_fraction: t.unlabeled as f64 / total,
        groups: GroupFractions {
            artificial,
            natural,
            general: group(Group::General),
            waterbody: waterbody_pixels as f64 / total,
        },
        classes,
    })
}

/// Pearson correlation coefficient of two equal-length samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateVariance(format!("{} observations", xs.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateVariance("a sample is constant".into()));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Pearson correlation between image counts and pixel totals over the
/// classes of `classes` that occur in at least one image.
pub fn frequency_pixel_correlation(classes: &[ClassFrequency]) -> Result<f64> {
    let present: Vec<&ClassFrequency> = classes.iter().filter(|c| c.image_count > 0).collect();
    let xs: Vec<f64> = present.iter().map(|c| c.image_count as f64).collect();
    let ys: Vec<f64> = present.iter().map(|c| c.pixel_count as f64).collect();
    pearson(&xs, &ys)
}

pub const MODE_MAP_SIZE: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeMap {
    pub label: u8,
    pub n_images: usize,
    pub grid: IndexMask,
}

/// Per-cell most frequent id across `masks`, each first resized to
/// `size×size` by nearest neighbour. Every id votes, the ignore id included;
/// ties go to the lowest id.
pub fn mode_of_masks(masks: &[IndexMask], size: usize) -> IndexMask {
    let resized: Vec<IndexMask> = masks.par_iter().map(|m| m.resize_nearest(size, size)).collect();
    let rows: Vec<Vec<u8>> = (0..size)
        .into_par_iter()
        .map(|y| {
            let mut counts = [0u32; 256];
            (0..size)
                .map(|x| {
                    for m in &resized {
                        counts[m.get(y, x) as usize] += 1;
                    }
                    let mut best = 0usize;
                    for id in 0..256 {
                        if counts[id] > counts[best] {
                            best = id;
                        }
                    }
                    for m in &resized {
                        counts[m.get(y, x) as usize] = 0;
                    }
                    best as u8
                })
                .collect()
        })
        .collect();
    IndexMask::new(size, size, rows.concat()).expect("size×size cells")
}

/// Mode map of every sample whose primary label is `label`.
pub fn spatial_mode_map(samples: &[&SegSample], label: u8) -> Result<ModeMap> {
    let chosen: Vec<&&SegSample> = samples.iter().filter(|s| s.primary_label == Some(label)).collect();
    if chosen.is_empty() {
        return Err(Error::NoImagesForLabel(label.to_string()));
    }
    let masks = chosen.par_iter().map(|s| s.load_mask()).collect::<Result<Vec<_>>>()?;
    Ok(ModeMap {
        label,
        n_images: masks.len(),
        grid: mode_of_masks(&masks, MODE_MAP_SIZE),
    })
}

/// Stable display colour for a class id; the ignore id is black.
pub fn class_color(id: u8, ignore_id: u8) -> [u8; 3] {
    if id == ignore_id {
        return [0, 0, 0];
    }
    let h = stable_hash(&[id, 0x5a]);
    [(h >> 8) as u8 | 0x30, (h >> 24) as u8 | 0x30, (h >> 40) as u8 | 0x30]
}

impl ModeMap {
    pub fn render(&self, ignore_id: u8) -> RgbImage {
        let g = &self.grid;
        RgbImage::from_fn(g.width() as u32, g.height() as u32, |x, y| {
            Rgb(class_color(g.get(y as usize, x as usize), ignore_id))
        })
    }

    /// Cell share of each id in the map, most frequent first.
    pub fn composition(&self) -> Vec<(u8, f64)> {
        let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
        for &v in self.grid.data() {
            *counts.entry(v).or_default() += 1;
        }
        let n = self.grid.data().len() as f64;
        let mut out: Vec<(u8, f64)> = counts.into_iter().map(|(id, c)| (id, c as f64 / n)).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccMiou {
    pub acc: f64,
    pub miou: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorConsistency {
    pub annotator: String,
    /// Every image the annotator re-annotated.
    pub total: AccMiou,
    /// Only the images the annotator drew originally; `None` if there are none.
    pub individual: Option<AccMiou>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub annotators: Vec<AnnotatorConsistency>,
}

/// One re-annotated mask of a reference sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Reannotation {
    pub annotator: String,
    pub name: String,
    pub mask: IndexMask,
}

/// Reads `dir/<annotator>/<name>.png` for every annotator subdirectory.
pub fn load_reannotations(dir: &Path) -> Result<Vec<Reannotation>> {
    let mut annotators: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    annotators.sort();
    let mut out = Vec::new();
    for adir in annotators {
        let annotator = adir.file_name().expect("directory name").to_string_lossy().into_owned();
        let mut files: Vec<_> = std::fs::read_dir(&adir)
            .map_err(|e| Error::io(&adir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        files.sort();
        for f in files {
            out.push(Reannotation {
                annotator: annotator.clone(),
                name: f.file_stem().expect("file name").to_string_lossy().into_owned(),
                mask: IndexMask::load_png(&f)?,
            });
        }
    }
    Ok(out)
}

/// Scores every re-annotation against its reference mask.
///
/// `reference` maps sample names to `(mask, original annotator)`.
pub fn consistency_report(
    reference: &BTreeMap<String, (IndexMask, Option<String>)>,
    reannotations: &[Reannotation],
    taxonomy: &ClassTaxonomy,
) -> Result<ConsistencyReport> {
    let k = taxonomy.num_classes();
    let ignore = taxonomy.ignore_id();
    let mut per: BTreeMap<&str, (ConfusionMatrix, usize, ConfusionMatrix, usize)> = BTreeMap::new();
    for r in reannotations {
        let (gt, owner) = reference
            .get(&r.name)
            .ok_or_else(|| Error::MisalignedPair(format!("{} re-annotated `{}`, which has no reference mask", r.annotator, r.name)))?;
        if gt.dims() != r.mask.dims() {
            return Err(Error::MisalignedPair(format!(
                "{}/{}: {:?} vs reference {:?}",
                r.annotator,
                r.name,
                r.mask.dims(),
                gt.dims()
            )));
        }
        let e = per
            .entry(&r.annotator)
            .or_insert_with(|| (ConfusionMatrix::new(k), 0, ConfusionMatrix::new(k), 0));
        // unlabeled pixels in a re-annotation count as misses against any class
        let pred: Vec<u8> = r.mask.data().iter().zip(gt.data()).map(|(&p, &g)| if p == ignore { miss(g, k) } else { p }).collect();
        let pred = IndexMask::new(gt.height(), gt.width(), pred)?;
        e.0.accumulate(&pred, gt, ignore)?;
        e.1 += 1;
        if owner.as_deref() == Some(r.annotator.as_str()) {
            e.2.accumulate(&pred, gt, ignore)?;
            e.3 += 1;
        }
    }
    let score = |cm: &ConfusionMatrix, images: usize| -> Result<AccMiou> {
        Ok(AccMiou {
            acc: cm.pixel_acc(None)?,
            miou: cm.miou(None)?,
            images,
        })
    };
    let annotators = per
        .into_iter()
        .map(|(a, (total, nt, indiv, ni))| {
            Ok(AnnotatorConsistency {
                annotator: a.to_string(),
                total: score(&total, nt)?,
                individual: if ni > 0 { Some(score(&indiv, ni)?) } else { None },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyReport { annotators })
}

/// Some class other than `g`, so an unlabeled prediction is never correct.
fn miss(g: u8, k: usize) -> u8 {
    if k < 2 {
        g
    } else {
        ((g as usize + 1) % k) as u8
    }
}

/// [`consistency_report`] for a dataset whose manifest names the original
/// annotators and whose re-annotations live in `reannotation_dir`.
pub fn dataset_consistency(ds: &Dataset, reannotation_dir: &Path) -> Result<ConsistencyReport> {
    let reference = ds
        .samples
        .iter()
        .map(|s| Ok((s.name.clone(), (s.load_mask()?, s.annotator_id.clone()))))
        .collect::<Result<BTreeMap<_, _>>>()?;
    consistency_report(&reference, &load_reannotations(reannotation_dir)?, &ds.taxonomy)
}

impl ConsistencyReport {
    /// Two-block table: Total and Individual, each with acc and mIoU rows,
    /// one column per annotator, values in percent.
    pub fn render_table(&self) -> String {
        let names: Vec<String> = self.annotators.iter().map(|a| a.annotator.clone()).collect();
        let w = names.iter().map(|n| n.len()).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "");
        for n in &names {
            let _ = write!(out, " | {n:>w$}");
        }
        out.push('\n');
        let rule = "-".repeat(16 + names.len() * (w + 3));
        out.push_str(&rule);
        out.push('\n');
        let fmt = |v: Option<f64>| v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into());
        for (block, pick) in [
            ("Total", (|a: &AnnotatorConsistency| Some(a.total)) as fn(&AnnotatorConsistency) -> Option<AccMiou>),
            ("Individual", |a: &AnnotatorConsistency| a.individual),
        ] {
            for (i, metric) in ["acc", "mIoU"].iter().enumerate() {
                let label = if i == 0 { block } else { "" };
                let _ = write!(out, "{label:<11}{metric:<5}");
                for a in &self.annotators {
                    let v = pick(a).map(|m| if i == 0 { m.acc } else { m.miou });
                    let _ = write!(out, " | {:>w$}", fmt(v));
                }
                out.push('\n');
            }
            out.push_str(&rule);
            out.push('\n');
        }
        out
    }
}
