//! Procedural (image, mask) scenes with one texture per class, and the
//! canned fixtures used by the tests and examples.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{save_rgb, write_manifest, Dataset, SegSample, Split};
use crate::error::{Error, Result};
use crate::mask::IndexMask;
use crate::params::derived_rng;
use crate::taxonomy::{ClassDef, ClassTaxonomy, Group, DEFAULT_IGNORE_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureRecipe {
    pub base_color: [u8; 3],
    /// Ripple cycles across the canvas width.
    pub ripple_freq: f64,
    /// Ripple direction in radians, 0 = varying along x.
    pub ripple_angle: f64,
    pub ripple_amp: f64,
    /// Standard deviation of per-pixel Gaussian noise, in intensity levels.
    pub noise_amp: f64,
}

impl TextureRecipe {
    pub fn flat(base_color: [u8; 3], noise_amp: f64) -> Self {
        Self {
            base_color,
            ripple_freq: 0.0,
            ripple_angle: 0.0,
            ripple_amp: 0.0,
            noise_amp,
        }
    }

    pub fn rippled(base_color: [u8; 3], freq: f64, angle: f64, amp: f64, noise_amp: f64) -> Self {
        Self {
            base_color,
            ripple_freq: freq,
            ripple_angle: angle,
            ripple_amp: amp,
            noise_amp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Equal-height horizontal bands, one per palette entry, top to bottom.
    Bands,
    /// `count` horizontal bands with random labels and boundaries on
    /// multiples of `snap` rows; neighbouring bands differ.
    RandomBands { count: usize, snap: usize },
    /// Nearest-seed cells with random labels.
    Voronoi { cells: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub palette: Vec<u8>,
    pub recipes: BTreeMap<u8, TextureRecipe>,
    pub layout: Layout,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(32) || !self.width.is_multiple_of(32) {
            return bad(format!("canvas {}×{} is not a positive multiple of 32", self.height, self.width));
        }
        if self.palette.is_empty() {
            return bad("empty palette".into());
        }
        let mut seen = Vec::new();
        for id in &self.palette {
            if seen.contains(id) {
                return bad(format!("palette repeats id {id}"));
            }
            seen.push(*id);
            if !self.recipes.contains_key(id) {
                return bad(format!("no texture recipe for id {id}"));
            }
        }
        let used: Vec<&TextureRecipe> = self.palette.iter().map(|id| &self.recipes[id]).collect();
        for (i, a) in used.iter().enumerate() {
            if used[i + 1..].contains(a) {
                return bad("two palette entries share an identical texture recipe".into());
            }
            if a.noise_amp < 0.0 || !a.noise_amp.is_finite() || !a.ripple_amp.is_finite() || !a.ripple_freq.is_finite() {
                return bad("texture amplitudes must be finite, noise non-negative".into());
            }
        }
        match &self.layout {
            Layout::Bands => {
                if self.palette.len() > self.height {
                    return bad("more bands than rows".into());
                }
            }
            Layout::RandomBands { count, snap } => {
                if *count == 0 || *snap == 0 || self.height / snap < *count {
                    return bad(format!("cannot place {count} bands snapped to {snap} rows"));
                }
                if *count > 1 && self.palette.len() < 2 {
                    return bad("adjacent bands need at least two palette ids".into());
                }
            }
            Layout::Voronoi { cells } => {
                if *cells == 0 {
                    return bad("Voronoi layout needs at least one cell".into());
                }
            }
        }
        Ok(())
    }
}

fn layout_mask(spec: &SceneSpec, rng: &mut impl Rng) -> IndexMask {
    let (h, w) = (spec.height, spec.width);
    match &spec.layout {
        Layout::Bands => {
            let n = spec.palette.len();
            IndexMask::from_fn(h, w, |y, _| spec.palette[y * n / h])
        }
        Layout::RandomBands { count, snap } => {
            let slots = h / snap;
            let mut cuts: Vec<usize> = Vec::new();
            while cuts.len() + 1 < *count {
                let c = rng.random_range(1..slots);
                if !cuts.contains(&c) {
                    cuts.push(c);
                }
            }
            cuts.sort_unstable();
            let mut labels: Vec<u8> = Vec::with_capacity(*count);
            for _ in 0..*count {
                loop {
                    let id = spec.palette[rng.random_range(0..spec.palette.len())];
                    if labels.last() != Some(&id) || spec.palette.len() == 1 {
                        labels.push(id);
                        break;
                    }
                }
            }
            IndexMask::from_fn(h, w, |y, _| {
                let band = cuts.iter().filter(|&&c| c * snap <= y).count();
                labels[band]
            })
        }
        Layout::Voronoi { cells } => {
            let seeds: Vec<(f64, f64, u8)> = (0..*cells)
                .map(|_| {
                    (
                        rng.random_range(0.0..h as f64),
                        rng.random_range(0.0..w as f64),
                        spec.palette[rng.random_range(0..spec.palette.len())],
                    )
                })
                .collect();
            IndexMask::from_fn(h, w, |y, x| {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                seeds
                    .iter()
                    .map(|&(sy, sx, id)| ((sy - py).powi(2) + (sx - px).powi(2), id))
                    .fold((f64::INFINITY, 0u8), |best, c| if c.0 < best.0 { c } else { best })
                    .1
            })
        }
    }
}

/// Renders one scene. Fully determined by `spec`.
pub fn generate(spec: &SceneSpec) -> Result<(RgbImage, IndexMask)> {
    spec.validate()?;
    let mut rng = derived_rng(spec.seed, "synthgen.layout");
    let mask = layout_mask(spec, &mut rng);
    let mut noise_rng = derived_rng(spec.seed, "synthgen.noise");
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let phases: BTreeMap<u8, f64> = spec
        .palette
        .iter()
        .map(|&id| (id, rng.random_range(0.0..2.0 * PI)))
        .collect();
    let w = spec.width as f64;
    let img = RgbImage::from_fn(spec.width as u32, spec.height as u32, |x, y| {
        let id = mask.get(y as usize, x as usize);
        let r = &spec.recipes[&id];
        let along = x as f64 * r.ripple_angle.cos() + y as f64 * r.ripple_angle.sin();
        let ripple = r.ripple_amp * (2.0 * PI * r.ripple_freq * along / w + phases[&id]).sin();
        let mut px = [0u8; 3];
        for (c, out) in px.iter_mut().enumerate() {
            let n: f64 = std_normal.sample(&mut noise_rng) * r.noise_amp;
            *out = (r.base_color[c] as f64 + ripple + n).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    });
    Ok((img, mask))
}

pub const FIXTURES: [&str; 3] = ["aqua16", "consistency4", "atex-textures"];
pub const FIXTURE_FILE: &str = "fixture.toml";
pub const REANNOTATIONS_DIR: &str = "reannotations";
/// Files below a fixture root that are not part of its content.
const UNHASHED: [&str; 2] = [FIXTURE_FILE, "run_manifest.json"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureInfo {
    pub name: String,
    pub seed: u64,
    pub files: usize,
    /// SHA-256 over every file below the root except this record.
    pub content_hash: String,
}

/// Six classes, two of them aquatic.
pub fn aqua16_taxonomy() -> ClassTaxonomy {
    let c = |id, name: &str, group, aquatic| ClassDef {
        id,
        name: name.into(),
        group,
        aquatic,
    };
    ClassTaxonomy::new(
        vec![
            c(0, "sea", Group::Natural, true),
            c(1, "river", Group::Natural, true),
            c(2, "sky", Group::General, false),
            c(3, "vegetation", Group::General, false),
            c(4, "building", Group::General, false),
            c(5, "rock", Group::General, false),
        ],
        DEFAULT_IGNORE_ID,
    )
    .expect("fixture taxonomy is valid")
}

pub fn aqua16_recipes() -> BTreeMap<u8, TextureRecipe> {
    BTreeMap::from([
        (0, TextureRecipe::rippled([30, 80, 160], 6.0, 0.0, 18.0, 6.0)),
        (1, TextureRecipe::rippled([70, 120, 90], 10.0, PI / 2.0, 14.0, 6.0)),
        (2, TextureRecipe::flat([170, 205, 240], 4.0)),
        (3, TextureRecipe::rippled([40, 140, 40], 16.0, PI / 4.0, 20.0, 10.0)),
        (4, TextureRecipe::flat([150, 110, 100], 8.0)),
        (5, TextureRecipe::rippled([110, 110, 110], 4.0, PI / 3.0, 25.0, 12.0)),
    ])
}

/// Band scene for the aqua16 fixture: 2 to 4 bands snapped to 8 rows.
pub fn aqua16_spec(seed: u64, bands: usize) -> SceneSpec {
    SceneSpec {
        seed,
        height: 64,
        width: 64,
        palette: (0..6).collect(),
        recipes: aqua16_recipes(),
        layout: Layout::RandomBands { count: bands, snap: 8 },
    }
}

/// Writes fixture `name` below `root` and returns its record.
pub fn generate_fixture(name: &str, root: &Path, seed: u64) -> Result<FixtureInfo> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    match name {
        "aqua16" => write_aqua16(root, seed)?,
        "consistency4" => write_consistency4(root, seed)?,
        "atex-textures" => write_atex_textures(root, seed)?,
        other => {
            return Err(Error::InvalidSpec(format!(
                "unknown fixture `{other}` (expected one of {})",
                FIXTURES.join(", ")
            )))
        }
    }
    let (files, content_hash) = content_hash(root)?;
    let info = FixtureInfo {
        name: name.to_string(),
        seed,
        files,
        content_hash,
    };
    let path = root.join(FIXTURE_FILE);
    let text = toml::to_string(&info).map_err(|e| Error::parse(&path, e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(info)
}

pub fn read_fixture_info(root: &Path) -> Result<Option<FixtureInfo>> {
    let path = root.join(FIXTURE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map(Some).map_err(|e| Error::parse(&path, e))
}

/// `(file count, hex SHA-256)` over all files below `root` in sorted
/// relative-path order, skipping the fixture record and run manifest.
pub fn content_hash(root: &Path) -> Result<(usize, String)> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.retain(|rel| !UNHASHED.contains(&rel.as_str()));
    files.sort();
    let mut h = Sha256::new();
    for rel in &files {
        let path = root.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok((files.len(), hex::encode(h.finalize())))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("below root");
            out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
        }
    }
    Ok(())
}

fn write_sample(root: &Path, split: Split, name: &str, img: &RgbImage, mask: &IndexMask) -> Result<()> {
    save_rgb(&root.join("images").join(split.as_str()).join(format!("{name}.png")), img)?;
    mask.save_png(&root.join("masks").join(split.as_str()).join(format!("{name}.png")))
}

fn sample_record(root: &Path, split: Split, name: &str, annotator: Option<&str>, primary: Option<u8>) -> SegSample {
    SegSample {
        name: name.to_string(),
        image_path: root.join("images").join(split.as_str()).join(format!("{name}.png")),
        mask_path: root.join("masks").join(split.as_str()).join(format!("{name}.png")),
        split,
        annotator_id: annotator.map(String::from),
        primary_label: primary,
    }
}

fn write_taxonomy(root: &Path, taxonomy: &ClassTaxonomy) -> Result<()> {
    let path = root.join(Dataset::TAXONOMY);
    std::fs::write(&path, taxonomy.to_toml_string()).map_err(|e| Error::io(&path, e))
}

/// The first aquatic id in a mask, preferring the one covering most pixels.
fn dominant_aquatic(mask: &IndexMask, taxonomy: &ClassTaxonomy) -> Option<u8> {
    let mut counts = [0usize; 256];
    for &v in mask.data() {
        counts[v as usize] += 1;
    }
    taxonomy
        .aquatic_ids()
        .into_iter()
        .filter(|&id| counts[id as usize] > 0)
        .max_by_key(|&id| (counts[id as usize], std::cmp::Reverse(id)))
}

/// 16 train + 4 val 64×64 band scenes over six classes.
fn write_aqua16(root: &Path, seed: u64) -> Result<()> {
    let taxonomy = aqua16_taxonomy();
    write_taxonomy(root, &taxonomy)?;
    let mut records = Vec::new();
    let mut rng = derived_rng(seed, "fixture.aqua16");
    for i in 0..20 {
        let split = if i < 16 { Split::Train } else { Split::Val };
        let bands = 2 + (i % 3);
        // every scene shows water so each image has a primary waterbody
        let (img, mask) = loop {
            let spec = aqua16_spec(rng.random(), bands);
            let (img, mask) = generate(&spec)?;
            if dominant_aquatic(&mask, &taxonomy).is_some() {
                break (img, mask);
            }
        };
        let name = format!("{}_{i:02}", split.as_str());
        write_sample(root, split, &name, &img, &mask)?;
        let annotator = ["a1", "a2"][i % 2];
        records.push(sample_record(root, split, &name, Some(annotator), dominant_aquatic(&mask, &taxonomy)));
    }
    write_manifest(root, &records)
}

/// Re-annotation of `mask`: band boundaries nudged and a few blocks relabelled.
fn perturb(mask: &IndexMask, palette: &[u8], rng: &mut impl Rng) -> IndexMask {
    let (h, w) = mask.dims();
    let shift: i64 = rng.random_range(-3..=3);
    let mut out = IndexMask::from_fn(h, w, |y, x| mask.get((y as i64 - shift).clamp(0, h as i64 - 1) as usize, x));
    for _ in 0..rng.random_range(1..=3) {
        let (by, bx) = (rng.random_range(0..h - 8), rng.random_range(0..w - 8));
        let id = palette[rng.random_range(0..palette.len())];
        for y in by..by + 8 {
            for x in bx..bx + 8 {
                out.set(y, x, id);
            }
        }
    }
    out
}

pub const CONSISTENCY_ANNOTATORS: [&str; 3] = ["a1", "a2", "a3"];

/// Four reference scenes (primary labels sea ×3, river ×1) plus one
/// perturbed re-annotation per annotator under `reannotations/<annotator>/`.
/// The manifest's `annotator_id` records who drew each reference mask.
fn write_consistency4(root: &Path, seed: u64) -> Result<()> {
    let taxonomy = aqua16_taxonomy();
    write_taxonomy(root, &taxonomy)?;
    let mut rng = derived_rng(seed, "fixture.consistency4");
    let mut records = Vec::new();
    let primaries = [0u8, 0, 0, 1];
    let owners = ["a1", "a1", "a2", "a3"];
    for (i, (&primary, &owner)) in primaries.iter().zip(&owners).enumerate() {
        // primary waterbody on top, two other classes below
        let others: Vec<u8> = (2..6).collect();
        let a = others[rng.random_range(0..others.len())];
        let b = loop {
            let b = others[rng.random_range(0..others.len())];
            if b != a {
                break b;
            }
        };
        let spec = SceneSpec {
            seed: rng.random(),
            height: 64,
            width: 64,
            palette: vec![primary, a, b],
            recipes: aqua16_recipes(),
            layout: Layout::Bands,
        };
        let (img, mask) = generate(&spec)?;
        let name = format!("scene_{i}");
        write_sample(root, Split::Test, &name, &img, &mask)?;
        records.push(sample_record(root, Split::Test, &name, Some(owner), Some(primary)));
        for annotator in CONSISTENCY_ANNOTATORS {
            let re = perturb(&mask, &spec.palette, &mut rng);
            re.save_png(&root.join(REANNOTATIONS_DIR).join(annotator).join(format!("{name}.png")))?;
        }
    }
    write_manifest(root, &records)
}

/// ATLANTIS ids of the two texture classes: calm "lake" and rippled "sea".
pub const ATEX_TEXTURE_IDS: (u8, u8) = (23, 30);

/// 16 scenes of 128×128, half calm water and half rippled water, split on
/// a 32-row boundary: 256 uniform tiles over two labels.
fn write_atex_textures(root: &Path, seed: u64) -> Result<()> {
    let taxonomy = ClassTaxonomy::atlantis();
    write_taxonomy(root, &taxonomy)?;
    let (smooth, rippled) = ATEX_TEXTURE_IDS;
    let recipes = BTreeMap::from([
        (smooth, TextureRecipe::flat([40, 90, 150], 8.0)),
        (rippled, TextureRecipe::rippled([40, 90, 150], 24.0, PI / 2.0, 40.0, 8.0)),
    ]);
    let mut rng = derived_rng(seed, "fixture.atex-textures");
    let mut records = Vec::new();
    for i in 0..16 {
        let palette = if i % 2 == 0 { vec![smooth, rippled] } else { vec![rippled, smooth] };
        let spec = SceneSpec {
            seed: rng.random(),
            height: 128,
            width: 128,
            palette: palette.clone(),
            recipes: recipes.clone(),
            layout: Layout::Bands,
        };
        let (img, mask) = generate(&spec)?;
        let name = format!("tex_{i:02}");
        write_sample(root, Split::Train, &name, &img, &mask)?;
        records.push(sample_record(root, Split::Train, &name, None, Some(palette[0])));
    }
    write_manifest(root, &records)
}
