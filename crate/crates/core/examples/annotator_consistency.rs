//! Scores each annotator's re-annotations against the reference masks.

use aquanet::analytics::dataset_consistency;
use aquanet::dataset::Dataset;
use aquanet::synthgen::{generate_fixture, REANNOTATIONS_DIR};

fn main() -> aquanet::Result<()> {
    let root = std::env::temp_dir().join("aquanet-examples").join("consistency4");
    generate_fixture("consistency4", &root, 0)?;
    let ds = Dataset::open(&root)?;
    let report = dataset_consistency(&ds, &root.join(REANNOTATIONS_DIR))?;
    print!("{}", report.render_table());
    Ok(())
}
