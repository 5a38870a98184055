mod common;

use std::collections::{BTreeMap, BTreeSet};

use aquanet::atex::{
    atex_eval, atex_train, extract_dataset, read_patch_store, split_counts, split_patches, write_patch_store, AtexLabelMap, ClassifierConfig,
    PatchSource, TexturePatch, TextureClassifier,
};
use aquanet::dataset::Dataset;
use aquanet::synthgen::ATEX_TEXTURE_IDS;
use aquanet::taxonomy::ClassTaxonomy;
use aquanet::Error;
use common::*;
use image::{Rgb, RgbImage};
use proptest::prelude::*;

fn fake_patches(per_label: &[usize]) -> Vec<TexturePatch> {
    let mut out = Vec::new();
    for (label, &n) in per_label.iter().enumerate() {
        for i in 0..n {
            out.push(TexturePatch {
                pixels: RgbImage::from_pixel(32, 32, Rgb([label as u8, i as u8, 0])),
                label: label as u8,
                source_label: label as u8,
                source: PatchSource {
                    image: format!("img{}", i / 4),
                    row: 32 * (i % 4),
                    col: 32 * label,
                },
            });
        }
    }
    out
}

fn keys(ps: &[TexturePatch]) -> BTreeSet<(PatchSource, u8)> {
    ps.iter().map(|p| (p.source.clone(), p.label)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_counts_partition(n in 0usize..100_000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (a, b) = (a.min(1.0 - 1e-9), b * (1.0 - a));
        let ratios = (a, b, 1.0 - a - b);
        let (t, v, s) = split_counts(n, ratios);
        prop_assert_eq!(t + v + s, n);
        for (got, r) in [(t, ratios.0), (v, ratios.1), (s, ratios.2)] {
            prop_assert!((got as f64 - r * n as f64).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn stratified_splits_are_disjoint_and_complete(counts in proptest::collection::vec(0usize..40, 1..6), seed in any::<u64>()) {
        let patches = fake_patches(&counts);
        let all = keys(&patches);
        let s = split_patches(patches, (0.7, 0.1, 0.2), seed).unwrap();
        let (t, v, e) = (keys(&s.train), keys(&s.val), keys(&s.test));
        prop_assert!(t.is_disjoint(&v) && t.is_disjoint(&e) && v.is_disjoint(&e));
        let union: BTreeSet<_> = t.union(&v).chain(e.iter()).cloned().collect();
        prop_assert_eq!(union, all);
        for (label, &n) in counts.iter().enumerate() {
            let count = |ps: &[TexturePatch]| ps.iter().filter(|p| p.label as usize == label).count();
            prop_assert_eq!((count(&s.train), count(&s.val), count(&s.test)), split_counts(n, (0.7, 0.1, 0.2)));
        }
    }
}

#[test]
fn splits_depend_on_seed_only() {
    let a = split_patches(fake_patches(&[30, 25]), (0.7, 0.1, 0.2), 4).unwrap();
    let mut shuffled = fake_patches(&[30, 25]);
    shuffled.reverse();
    let b = split_patches(shuffled, (0.7, 0.1, 0.2), 4).unwrap();
    assert_eq!(a, b);
    let c = split_patches(fake_patches(&[30, 25]), (0.7, 0.1, 0.2), 5).unwrap();
    assert_ne!(keys(&a.train), keys(&c.train));
    assert!(matches!(split_patches(fake_patches(&[3]), (0.5, 0.5, 0.5), 0), Err(Error::ConfigInvalid(_))));
}

#[test]
fn atlantis_label_space() {
    let tax = ClassTaxonomy::atlantis();
    let map = AtexLabelMap::new(&tax);
    assert_eq!(map.num_labels(), 15);
    for gone in ["canal", "ditch", "reservoir", "fjord"] {
        assert!(map.id_of(gone).is_none());
        assert!(!map.kept.contains_key(&tax.id_of(gone).unwrap()));
    }
    assert_eq!(&map.labels[13..], ["estuary", "swamp"]);
    let (mangrove, cypress) = (tax.id_of("mangrove").unwrap(), tax.id_of("cypress tree").unwrap());
    assert_eq!(map.image_remap(&[cypress, mangrove]), map.id_of("estuary"));
    assert_eq!(map.image_remap(&[cypress]), map.id_of("swamp"));
    assert_eq!(map.image_remap(&[tax.id_of("sea").unwrap()]), None);
}

#[test]
fn texture_fixture_patches_store_and_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let root = fixture("atex-textures", dir.path(), 1);
    let ds = Dataset::open(&root).unwrap();
    let map = AtexLabelMap::new(&ds.taxonomy);
    let patches = extract_dataset(&ds.select(None), &ds.taxonomy, &map).unwrap();
    assert_eq!(patches.len(), 256);
    let by_label: BTreeMap<u8, usize> = patches.iter().fold(BTreeMap::new(), |mut m, p| {
        *m.entry(p.source_label).or_default() += 1;
        m
    });
    assert_eq!(by_label, BTreeMap::from([(ATEX_TEXTURE_IDS.0, 128), (ATEX_TEXTURE_IDS.1, 128)]));

    let splits = split_patches(patches, (0.7, 0.1, 0.2), 0).unwrap();
    let store = dir.path().join("patches");
    write_patch_store(&store, &splits, &map).unwrap();
    assert_eq!(read_patch_store(&store).unwrap(), splits);

    let cfg = ClassifierConfig {
        iters: 60,
        ..ClassifierConfig::default()
    };
    let (model, losses) = atex_train(&splits.train, map.labels.clone(), &cfg).unwrap();
    assert_eq!(losses.len(), 60);
    let report = atex_eval(&model, &splits.test).unwrap();
    assert_eq!(report.patches, splits.test.len());

    let path = dir.path().join("clf.aqn");
    model.save(&path).unwrap();
    let back = TextureClassifier::load(&path).unwrap();
    for p in &splits.test {
        assert_eq!(back.logits(&p.pixels).unwrap(), model.logits(&p.pixels).unwrap());
    }
    assert!(report.render_table("cnn").lines().next().unwrap().contains("F1"));
}

#[test]
fn classifier_needs_two_labels_in_training_data() {
    let patches = fake_patches(&[10]);
    let err = atex_train(&patches, vec!["a".into(), "b".into()], &ClassifierConfig::default()).unwrap_err();
    assert!(matches!(err, Error::SingleClassDataset(_)), "{err:?}");
}
