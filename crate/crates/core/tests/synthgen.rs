mod common;

use std::collections::BTreeSet;

use aquanet::dataset::{Dataset, Split};
use aquanet::synthgen::{
    aqua16_recipes, aqua16_spec, aqua16_taxonomy, content_hash, generate, generate_fixture, read_fixture_info, Layout, SceneSpec, FIXTURES,
};
use aquanet::Error;
use common::*;
use proptest::prelude::*;

fn spec(seed: u64, layout: Layout) -> SceneSpec {
    SceneSpec {
        seed,
        height: 64,
        width: 96,
        palette: vec![0, 2, 3, 5],
        recipes: aqua16_recipes(),
        layout,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn masks_use_only_palette_ids(seed in any::<u64>(), cells in 1usize..12, count in 1usize..6) {
        for layout in [Layout::Bands, Layout::RandomBands { count, snap: 8 }, Layout::Voronoi { cells }] {
            let s = spec(seed, layout);
            let (img, mask) = generate(&s).unwrap();
            prop_assert_eq!((img.height() as usize, img.width() as usize), mask.dims());
            let palette: BTreeSet<u8> = s.palette.iter().copied().collect();
            prop_assert!(mask.present_ids().iter().all(|id| palette.contains(id)));
            prop_assert_eq!(generate(&s).unwrap(), (img, mask));
        }
    }
}

#[test]
fn random_bands_alternate_and_snap() {
    for seed in 0..20 {
        let (_, mask) = generate(&aqua16_spec(seed, 4)).unwrap();
        let rows: Vec<u8> = (0..64).map(|y| mask.get(y, 0)).collect();
        for (row, &first) in mask.data().chunks(64).zip(&rows) {
            assert!(row.iter().all(|&v| v == first));
        }
        let changes: Vec<usize> = (1..64).filter(|&y| rows[y] != rows[y - 1]).collect();
        assert_eq!(changes.len(), 3, "seed {seed}");
        assert!(changes.iter().all(|y| y % 8 == 0));
    }
}

/// Each class is recoverable from its pixel colour alone by a nearest-mean
/// rule, so the fixture is learnable from appearance.
#[test]
fn aqua16_classes_are_separable_by_colour() {
    let dir = tempfile::tempdir().unwrap();
    let root = fixture("aqua16", dir.path(), 0);
    let ds = Dataset::open(&root).unwrap();
    let mut sums = [[0.0f64; 3]; 6];
    let mut counts = vec![0usize; 6];
    let mut pixels = Vec::new();
    for s in ds.select(None) {
        let img = aquanet::dataset::load_rgb(&s.image_path).unwrap();
        let mask = s.load_mask().unwrap();
        for (x, y, p) in img.enumerate_pixels() {
            let id = mask.get(y as usize, x as usize) as usize;
            for (s, v) in sums[id].iter_mut().zip(p.0) {
                *s += v as f64;
            }
            counts[id] += 1;
            pixels.push((p.0, id));
        }
    }
    let means: Vec<[f64; 3]> = sums.iter().zip(&counts).map(|(s, &n)| s.map(|v| v / n.max(1) as f64)).collect();
    let correct = pixels
        .iter()
        .filter(|(p, id)| {
            let d = |m: &[f64; 3]| (0..3).map(|c| (p[c] as f64 - m[c]).powi(2)).sum::<f64>();
            (0..6).filter(|&k| counts[k] > 0).min_by(|&a, &b| d(&means[a]).total_cmp(&d(&means[b]))) == Some(*id)
        })
        .count();
    let acc = correct as f64 / pixels.len() as f64;
    assert!(acc >= 0.8, "nearest-mean accuracy {acc}");
}

#[test]
fn aqua16_layout() {
    let dir = tempfile::tempdir().unwrap();
    let root = fixture("aqua16", dir.path(), 3);
    let ds = Dataset::open(&root).unwrap();
    assert_eq!(ds.taxonomy, aqua16_taxonomy());
    assert_eq!((ds.split(Split::Train).len(), ds.split(Split::Val).len()), (16, 4));
    for s in &ds.samples {
        let mask = s.load_mask().unwrap();
        assert_eq!(mask.dims(), (64, 64));
        let count = |id: u8| mask.data().iter().filter(|&&v| v == id).count();
        let primary = s.primary_label.expect("every scene shows water");
        assert!(ds.taxonomy.is_aquatic(primary));
        assert!(ds.taxonomy.aquatic_ids().iter().all(|&id| count(id) <= count(primary)));
    }
}

#[test]
fn fixtures_are_reproducible_and_hashed() {
    let dir = tempfile::tempdir().unwrap();
    for name in FIXTURES {
        let a = generate_fixture(name, &dir.path().join(format!("{name}-a")), 7).unwrap();
        let b = generate_fixture(name, &dir.path().join(format!("{name}-b")), 7).unwrap();
        let c = generate_fixture(name, &dir.path().join(format!("{name}-c")), 8).unwrap();
        assert_eq!(a.content_hash, b.content_hash, "{name}");
        assert_ne!(a.content_hash, c.content_hash, "{name}");
        let root = dir.path().join(format!("{name}-a"));
        assert_eq!(read_fixture_info(&root).unwrap(), Some(a.clone()));
        assert_eq!(content_hash(&root).unwrap(), (a.files, a.content_hash));
    }
    assert!(matches!(generate_fixture("nope", dir.path(), 0), Err(Error::InvalidSpec(_))));
}

#[test]
fn invalid_specs_are_rejected() {
    let base = spec(0, Layout::Bands);
    let mut odd = base.clone();
    odd.height = 50;
    let mut repeated = base.clone();
    repeated.palette = vec![0, 0];
    let mut missing = base.clone();
    missing.palette = vec![0, 9];
    let mut crowded = base.clone();
    crowded.layout = Layout::RandomBands { count: 9, snap: 8 };
    for s in [odd, repeated, missing, crowded] {
        assert!(matches!(generate(&s), Err(Error::InvalidSpec(_))));
    }
}
