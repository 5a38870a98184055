//! Mode-of-segmentation maps for every primary label of the consistency4
//! fixture, written as colour PNGs.

use std::collections::BTreeSet;

use aquanet::analytics::spatial_mode_map;
use aquanet::dataset::{save_rgb, Dataset};
use aquanet::synthgen::generate_fixture;

fn main() -> aquanet::Result<()> {
    let root = std::env::temp_dir().join("aquanet-examples").join("consistency4");
    generate_fixture("consistency4", &root, 0)?;
    let ds = Dataset::open(&root)?;
    let samples = ds.select(None);
    let labels: BTreeSet<u8> = samples.iter().filter_map(|s| s.primary_label).collect();
    for label in labels {
        let map = spatial_mode_map(&samples, label)?;
        let name = ds.taxonomy.name(label);
        let path = root.join(format!("mode_{name}.png"));
        save_rgb(&path, &map.render(ds.taxonomy.ignore_id()))?;
        let top: Vec<String> = map
            .composition()
            .iter()
            .take(3)
            .map(|(id, f)| format!("{} {:.1}%", ds.taxonomy.name(*id), 100.0 * f))
            .collect();
        println!("{name}: {} images, {} -> {}", map.n_images, top.join(", "), path.display());
    }
    Ok(())
}
