//! Cuts texture patches from the atex-textures fixture, splits them,
//! writes the patch store and trains the small texture classifier.

use aquanet::atex::{atex_eval, atex_train, extract_dataset, split_patches, write_patch_store, AtexLabelMap, ClassifierConfig};
use aquanet::dataset::Dataset;
use aquanet::synthgen::generate_fixture;

fn main() -> aquanet::Result<()> {
    let root = std::env::temp_dir().join("aquanet-examples").join("atex-textures");
    generate_fixture("atex-textures", &root, 0)?;
    let ds = Dataset::open(&root)?;
    let map = AtexLabelMap::new(&ds.taxonomy);
    println!("{} texture labels: {}", map.num_labels(), map.labels.join(", "));

    let patches = extract_dataset(&ds.select(None), &ds.taxonomy, &map)?;
    let splits = split_patches(patches, (0.7, 0.1, 0.2), 0)?;
    println!("patches: {} train, {} val, {} test", splits.train.len(), splits.val.len(), splits.test.len());
    let manifest = write_patch_store(&root.join("patches"), &splits, &map)?;
    println!("patch store manifest: {}", manifest.display());

    let (model, losses) = atex_train(&splits.train, map.labels.clone(), &ClassifierConfig::default())?;
    println!("loss {:.4} -> {:.4}", losses[0], losses[losses.len() - 1]);
    print!("{}", atex_eval(&model, &splits.test)?.render_table("texture cnn"));
    Ok(())
}
