//! Renders a few procedural scenes with each layout and writes every
//! shipped fixture with its content hash.

use aquanet::dataset::save_rgb;
use aquanet::synthgen::{aqua16_recipes, generate, generate_fixture, Layout, SceneSpec, FIXTURES};

fn main() -> aquanet::Result<()> {
    let out = std::env::temp_dir().join("aquanet-examples").join("scenes");
    for (name, layout) in [
        ("bands", Layout::Bands),
        ("random_bands", Layout::RandomBands { count: 4, snap: 8 }),
        ("voronoi", Layout::Voronoi { cells: 9 }),
    ] {
        let spec = SceneSpec {
            seed: 3,
            height: 96,
            width: 128,
            palette: vec![0, 1, 2, 3],
            recipes: aqua16_recipes(),
            layout,
        };
        let (img, mask) = generate(&spec)?;
        save_rgb(&out.join(format!("{name}.png")), &img)?;
        mask.save_png(&out.join(format!("{name}_mask.png")))?;
        println!("{name}: classes {:?}", mask.present_ids());
    }
    for name in FIXTURES {
        let info = generate_fixture(name, &out.join(name), 0)?;
        println!("{name}: {} files, sha256 {}", info.files, info.content_hash);
    }
    println!("written below {}", out.display());
    Ok(())
}
