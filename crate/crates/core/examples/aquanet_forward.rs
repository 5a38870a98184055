//! One forward pass of the desk-scale network on the full label space,
//! for each component configuration.

use aquanet::ablation::ABLATION_ROWS;
use aquanet::network::{AquaNet, AquaNetConfig};
use aquanet::taxonomy::ClassTaxonomy;
use aquanet::tensor::Tensor;

fn main() -> aquanet::Result<()> {
    let tax = ClassTaxonomy::atlantis();
    let image = Tensor::from_fn_chw(3, 64, 96, |c, y, x| ((c * 5 + y + 2 * x) as f64 * 0.1).sin());
    for (label, toggles) in ABLATION_ROWS {
        let mut cfg = toggles.apply(&AquaNetConfig::toy());
        cfg.zero_init_classifier = false;
        let net = AquaNet::new(cfg, tax.clone())?;
        let (p, aux) = net.forward(&image)?;
        let probs = p.softmax_channels();
        println!(
            "{label:<20} params {:>7}  P_final {:?}  P_aux {:?}  mean max-prob {:.4}",
            net.num_params(),
            p.shape(),
            aux.shape(),
            max_prob(&probs)
        );
    }
    Ok(())
}

fn max_prob(p: &Tensor) -> f64 {
    let (k, h, w) = p.chw();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            total += (0..k).map(|c| p.at(c, y, x)).fold(0.0, f64::max);
        }
    }
    total / (h * w) as f64
}
