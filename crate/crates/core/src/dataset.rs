//! On-disk segmentation datasets.
//!
//! ```text
//! root/
//!   taxonomy.toml            optional, ATLANTIS classes when absent
//!   manifest.csv             name,split,annotator_id,primary_label
//!   images/{train,val,test}/<name>.png
//!   masks/{train,val,test}/<name>.png
//! ```
//!
//! Without a manifest every image under `images/<split>/` with a matching
//! mask is picked up. `primary_label` is a class name or numeric id.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::IndexMask;
use crate::taxonomy::ClassTaxonomy;
use crate::tensor::Tensor;

/// Per-channel normalisation applied when an RGB image becomes a tensor.
pub const PIXEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const PIXEL_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegSample {
    pub name: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub split: Split,
    pub annotator_id: Option<String>,
    /// The waterbody the image was collected for.
    pub primary_label: Option<u8>,
}

impl SegSample {
    pub fn load_mask(&self) -> Result<IndexMask> {
        IndexMask::load_png(&self.mask_path)
    }

    pub fn load_image(&self) -> Result<Tensor> {
        load_image_tensor(&self.image_path)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    name: String,
    split: String,
    #[serde(default)]
    annotator_id: Option<String>,
    #[serde(default)]
    primary_label: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub taxonomy: ClassTaxonomy,
    pub samples: Vec<SegSample>,
}

impl Dataset {
    pub const MANIFEST: &'static str = "manifest.csv";
    pub const TAXONOMY: &'static str = "taxonomy.toml";

    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::io(
                root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let tax_path = root.join(Self::TAXONOMY);
        let taxonomy = if tax_path.exists() {
            ClassTaxonomy::load(&tax_path)?
        } else {
            ClassTaxonomy::atlantis()
        };
        let manifest = root.join(Self::MANIFEST);
        let samples = if manifest.exists() {
            read_manifest(root, &manifest, &taxonomy)?
        } else {
            scan(root)?
        };
        Ok(Self {
            root: root.to_path_buf(),
            taxonomy,
            samples,
        })
    }

    /// Opens `root` and verifies that at least one sample exists.
    pub fn open_nonempty(root: &Path) -> Result<Self> {
        let ds = Self::open(root)?;
        if ds.samples.is_empty() {
            return Err(Error::EmptyDataset(root.display().to_string()));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&SegSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Samples of `split`, or every sample when `split` is `None`.
    pub fn select(&self, split: Option<Split>) -> Vec<&SegSample> {
        match split {
            Some(s) => self.split(s),
            None => self.samples.iter().collect(),
        }
    }
}

fn read_manifest(root: &Path, path: &Path, taxonomy: &ClassTaxonomy) -> Result<Vec<SegSample>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    let mut out = Vec::new();
    for (line, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, e))?;
        let at = |msg: String| Error::parse(path, format!("row {}: {msg}", line + 1));
        let split: Split = row.split.parse().map_err(at)?;
        let primary_label = match row.primary_label.as_deref().filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => Some(
                s.parse::<u8>()
                    .ok()
                    .filter(|&id| taxonomy.class(id).is_some())
                    .or_else(|| taxonomy.id_of(s))
                    .ok_or_else(|| at(format!("unknown primary label `{s}`")))?,
            ),
        };
        out.push(SegSample {
            image_path: root.join("images").join(split.as_str()).join(format!("{}.png", row.name)),
            mask_path: root.join("masks").join(split.as_str()).join(format!("{}.png", row.name)),
            name: row.name,
            split,
            annotator_id: row.annotator_id.filter(|s| !s.is_empty()),
            primary_label,
        });
    }
    Ok(out)
}

fn scan(root: &Path) -> Result<Vec<SegSample>> {
    let mut out = Vec::new();
    for split in Split::ALL {
        let dir = root.join("images").join(split.as_str());
        if !dir.is_dir() {
            continue;
        }
        let mut names: Vec<String> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        names.sort();
        for name in names {
            let mask_path = root.join("masks").join(split.as_str()).join(format!("{name}.png"));
            if !mask_path.exists() {
                continue;
            }
            out.push(SegSample {
                image_path: dir.join(format!("{name}.png")),
                mask_path,
                name,
                split,
                annotator_id: None,
                primary_label: None,
            });
        }
    }
    Ok(out)
}

/// Writes `manifest.csv` for `samples` under `root`.
pub fn write_manifest(root: &Path, samples: &[SegSample]) -> Result<()> {
    let path = root.join(Dataset::MANIFEST);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e))?;
    for s in samples {
        w.serialize(ManifestRow {
            name: s.name.clone(),
            split: s.split.to_string(),
            annotator_id: s.annotator_id.clone(),
            primary_label: s.primary_label.map(|id| id.to_string()),
        })
        .map_err(|e| Error::parse(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// RGB bytes to a normalised `3×H×W` tensor.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    Tensor::from_fn_chw(3, h as usize, w as usize, |c, y, x| {
        let v = img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0;
        (v - PIXEL_MEAN[c]) / PIXEL_STD[c]
    })
}

/// Inverse of [`rgb_to_tensor`], clamping to the byte range.
pub fn tensor_to_rgb(t: &Tensor) -> RgbImage {
    let (_, h, w) = t.chw();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            let v = t.at(c, y as usize, x as usize) * PIXEL_STD[c] + PIXEL_MEAN[c];
            (v * 255.0).round().clamp(0.0, 255.0) as u8
        };
        Rgb([px(0), px(1), px(2)])
    })
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}

pub fn load_image_tensor(path: &Path) -> Result<Tensor> {
    Ok(rgb_to_tensor(&load_rgb(path)?))
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}
