//! Label bookkeeping over a dataset directory: per-class image and pixel
//! counts, group fractions and the count/pixel correlation. Pass a dataset
//! root to analyse it instead of the generated aqua16 fixture.

use std::path::PathBuf;

use aquanet::analytics::{frequency_pixel_correlation, label_frequency};
use aquanet::dataset::Dataset;
use aquanet::synthgen::generate_fixture;

fn main() -> aquanet::Result<()> {
    let root = match std::env::args_os().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let root = std::env::temp_dir().join("aquanet-examples").join("aqua16");
            generate_fixture("aqua16", &root, 0)?;
            root
        }
    };
    let ds = Dataset::open_nonempty(&root)?;
    let stats = label_frequency(&ds.select(None), &ds.taxonomy)?;
    print!("{}", stats.to_csv());
    let g = &stats.groups;
    println!(
        "unlabeled {:.2}%  waterbody {:.2}% (artificial {:.2}%, natural {:.2}%)  general {:.2}%",
        100.0 * stats.unlabeled_fraction,
        100.0 * g.waterbody,
        100.0 * g.artificial,
        100.0 * g.natural,
        100.0 * g.general
    );
    match frequency_pixel_correlation(&stats.classes) {
        Ok(r) => println!("pearson(image count, pixel count) = {r:.4}"),
        Err(e) => println!("correlation undefined: {e}"),
    }
    Ok(())
}
