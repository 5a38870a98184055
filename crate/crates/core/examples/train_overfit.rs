//! Trains the toy network on the aqua16 fixture and reports train/val
//! metrics. Pass an iteration count to shorten the run (default 500).

use aquanet::dataset::{Dataset, Split};
use aquanet::network::{AquaNet, AquaNetConfig};
use aquanet::synthgen::generate_fixture;
use aquanet::training::{evaluate, load_pairs, train, TrainConfig, TrainOptions};

fn main() -> aquanet::Result<()> {
    let iters = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let root = std::env::temp_dir().join("aquanet-examples").join("aqua16");
    generate_fixture("aqua16", &root, 0)?;
    let ds = Dataset::open(&root)?;
    let train_set = load_pairs(&ds.split(Split::Train))?;
    let val_set = load_pairs(&ds.split(Split::Val))?;

    let mut net = AquaNet::new(AquaNetConfig::toy(), ds.taxonomy.clone())?;
    let cfg = TrainConfig {
        max_iters: iters,
        scale_range: (1.0, 1.0),
        ..TrainConfig::toy()
    };
    let out = root.join("run");
    let outcome = train(
        &mut net,
        &cfg,
        &train_set,
        &TrainOptions {
            out_dir: Some(&out),
            progress_every: 100,
        },
    )?;
    let n = outcome.log.rows.len();
    println!("loss {:.4} -> {:.4}", outcome.log.window_mean(0, 20), outcome.log.window_mean(n.saturating_sub(20), n));
    print!("{}", evaluate(&net, &train_set, &ds.taxonomy)?.render_table("train"));
    print!("{}", evaluate(&net, &val_set, &ds.taxonomy)?.render_table("val"));
    println!("checkpoint and loss log in {}", out.display());
    Ok(())
}
