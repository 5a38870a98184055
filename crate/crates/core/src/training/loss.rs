use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mask::IndexMask;
use crate::tensor::ProbabilityMap;

pub const DEFAULT_AUX_WEIGHT: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub main: f64,
    pub aux: f64,
    pub total: f64,
}

/// Loss nodes for one image on an existing tape.
///
/// Both terms are divided by `normalizer`, the number of non-ignored pixels
/// in the whole batch, so summing per-image graphs yields batch means.
/// `aux` logits are upsampled bilinearly to the mask resolution.
pub struct LossVars {
    pub main: Var,
    pub aux: Var,
    pub total: Var,
}

pub fn loss_graph(
    g: &mut Graph,
    logits: Var,
    aux: Var,
    target: &IndexMask,
    ignore_id: u8,
    aux_weight: f64,
    normalizer: usize,
) -> Result<LossVars> {
    if normalizer == 0 {
        return Err(Error::AllPixelsIgnored);
    }
    let (h, w) = target.dims();
    let (_, lh, lw) = g.value(logits).chw();
    if (lh, lw) != (h, w) {
        return Err(Error::ShapeMismatch(format!("logits {lh}×{lw} vs mask {h}×{w}")));
    }
    let t: Arc<[u8]> = target.data().into();
    let inv = 1.0 / normalizer as f64;
    let main = g.cross_entropy(logits, t.clone(), ignore_id, inv)?;
    let aux_up = g.resize(aux, h, w);
    let aux = g.cross_entropy(aux_up, t, ignore_id, inv)?;
    let weighted = g.scale(aux, aux_weight);
    let total = g.add(main, weighted)?;
    Ok(LossVars { main, aux, total })
}

pub fn count_valid(mask: &IndexMask, ignore_id: u8) -> usize {
    mask.data().iter().filter(|&&v| v != ignore_id).count()
}

/// Mean cross-entropy of `p_final` over non-ignored pixels plus
/// `aux_weight` times the same for `p_aux` (upsampled to mask size).
pub fn total_loss(
    p_final: &ProbabilityMap,
    p_aux: &ProbabilityMap,
    target: &IndexMask,
    ignore_id: u8,
    aux_weight: f64,
) -> Result<LossBreakdown> {
    p_final.expect_chw("P_final")?;
    p_aux.expect_chw("P_aux")?;
    let mut g = Graph::new();
    let l = g.input(p_final.clone());
    let a = g.input(p_aux.clone());
    let v = loss_graph(&mut g, l, a, target, ignore_id, aux_weight, count_valid(target, ignore_id))?;
    Ok(LossBreakdown {
        main: g.value(v.main).data()[0],
        aux: g.value(v.aux).data()[0],
        total: g.value(v.total).data()[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn uniform_two_class_pixel_is_ln2() {
        let logits = Tensor::zeros(&[2, 1, 1]);
        let m = IndexMask::filled(1, 1, 0);
        let l = total_loss(&logits, &logits, &m, 255, 0.0).unwrap();
        assert!((l.main - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(l.total, l.main);
    }

    #[test]
    fn all_ignored_is_an_error() {
        let logits = Tensor::zeros(&[2, 2, 2]);
        let m = IndexMask::filled(2, 2, 255);
        assert!(matches!(total_loss(&logits, &logits, &m, 255, 0.4), Err(Error::AllPixelsIgnored)));
    }
}
