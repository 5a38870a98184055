//! The five-row component ablation on the aqua16 fixture. Pass an
//! iteration count per row (default 100).

use aquanet::ablation::run_ablation;
use aquanet::dataset::{Dataset, Split};
use aquanet::network::AquaNetConfig;
use aquanet::synthgen::generate_fixture;
use aquanet::training::{load_pairs, TrainConfig};

fn main() -> aquanet::Result<()> {
    let iters = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let root = std::env::temp_dir().join("aquanet-examples").join("aqua16");
    generate_fixture("aqua16", &root, 0)?;
    let ds = Dataset::open(&root)?;
    let train_set = load_pairs(&ds.split(Split::Train))?;
    let val_set = load_pairs(&ds.split(Split::Val))?;
    let cfg = TrainConfig {
        max_iters: iters,
        ..TrainConfig::toy()
    };
    let table = run_ablation(&AquaNetConfig::toy(), &cfg, &ds.taxonomy, &train_set, &val_set, None)?;
    print!("{}", table.render_table());
    for row in &table.rows {
        println!("{:<20} {:>7} params, final loss {:?}", row.label, row.num_params, row.final_loss);
    }
    Ok(())
}
