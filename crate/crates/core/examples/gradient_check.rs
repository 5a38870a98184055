//! Finite-difference check of the modulation block's backward pass.

use aquanet::modulation::modulation_grad_check;

fn main() -> aquanet::Result<()> {
    for (channels, size) in [(1, 4), (2, 4), (2, 8)] {
        let r = modulation_grad_check(channels, size, 1e-4, 0)?;
        let verdict = if r.max_relative_error < 1e-4 { "ok" } else { "FAIL" };
        println!("{channels}×{size}×{size}: {} entries, max relative error {:.2e} {verdict}", r.checked, r.max_relative_error);
    }
    Ok(())
}
