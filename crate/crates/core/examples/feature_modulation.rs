//! Feature modulation on its own: a fresh block is the identity, and after
//! perturbing its weights the output moves away from the input.

use aquanet::modulation::{modulate, modulation_params, ModulationBlock};
use aquanet::tensor::Tensor;

fn main() -> aquanet::Result<()> {
    let f1 = Tensor::from_fn_chw(4, 16, 16, |c, y, x| ((c * 7 + y * 3 + x) as f64 * 0.2).sin());
    let f2 = Tensor::from_fn_chw(4, 16, 16, |c, y, x| ((c + y * x) as f64 * 0.05).cos());

    let mut block = ModulationBlock::new(0, 4, 4, 8);
    let out = modulate(&block.net, &block.store, &f1, &f2)?;
    println!("fresh block: max |F1' - F1| = {:e}", max_diff(&out, &f1));

    block.randomize(1, 0.3);
    let p = modulation_params(&block.net, &block.store, &f2, (4, 16, 16))?;
    let out = modulate(&block.net, &block.store, &f1, &f2)?;
    println!("perturbed: |alpha|max = {:.3}, |beta|max = {:.3}", p.alpha.max_abs(), p.beta.max_abs());
    println!("perturbed: max |F1' - F1| = {:.3}", max_diff(&out, &f1));
    Ok(())
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
