//! Feature modulation `F1' = α ⊙ F1 + β + F1`, with `α`, `β` predicted from a
//! conditioning map `F2`.
//!
//! The parameter network has three 2× average-pool downsamples, six pointwise
//! convolutions and two leaky rectifiers:
//!
//! ```text
//! F2 ─ pool ─ conv ─ leaky ─ pool ─ conv ─ leaky ─ pool ─┬─ conv ─ conv ─ α
//!                                                        └─ conv ─ conv ─ β
//! ```
//!
//! `α` and `β` come out at 1/8 of `F2`'s resolution and are resampled
//! bilinearly to `F1`'s size. The last convolution of each head starts at
//! zero, so a fresh block is the identity.

use crate::error::{Error, Result};
use crate::gradcheck::{grad_check_with, DifferentiableBlock, GradCheckOptions, GradCheckReport};
use crate::graph::{Graph, Var};
use crate::layers::{Conv, Init};
use crate::params::{normal, ParamStore};
use crate::tensor::FeatureMap;

pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct ModulationNet {
    pub in_channels: usize,
    pub out_channels: usize,
    pub hidden: usize,
    pub negative_slope: f64,
    trunk: [Conv; 2],
    alpha_head: [Conv; 2],
    beta_head: [Conv; 2],
}

/// `α` and `β`, each shaped like the modulated map.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationParams {
    pub alpha: FeatureMap,
    pub beta: FeatureMap,
}

impl ModulationNet {
    /// Registers the six convolutions under `name` in `store`.
    pub fn new(store: &mut ParamStore, seed: u64, name: &str, in_channels: usize, out_channels: usize, hidden: usize) -> Self {
        let pw = |store: &mut ParamStore, n: &str, ci, co, init| Conv::pointwise(store, seed, &format!("{name}.{n}"), ci, co, init);
        let trunk = [
            pw(store, "trunk0", in_channels, hidden, Init::He),
            pw(store, "trunk1", hidden, hidden, Init::He),
        ];
        let alpha_head = [
            pw(store, "alpha0", hidden, hidden, Init::He),
            pw(store, "alpha1", hidden, out_channels, Init::Zero),
        ];
        let beta_head = [
            pw(store, "beta0", hidden, hidden, Init::He),
            pw(store, "beta1", hidden, out_channels, Init::Zero),
        ];
        Self {
            in_channels,
            out_channels,
            hidden,
            negative_slope: DEFAULT_NEGATIVE_SLOPE,
            trunk,
            alpha_head,
            beta_head,
        }
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv> {
        self.trunk.iter().chain(&self.alpha_head).chain(&self.beta_head)
    }

    /// `(α, β)` at the given spatial size.
    pub fn params_graph(&self, g: &mut Graph, store: &ParamStore, cond: Var, height: usize, width: usize) -> Result<(Var, Var)> {
        let (c, _, _) = g.value(cond).chw();
        if c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conditioning map has {c} channels, modulation expects {}",
                self.in_channels
            )));
        }
        let mut x = g.avg_pool2(cond);
        x = self.trunk[0].forward(g, store, x)?;
        x = g.leaky_relu(x, self.negative_slope);
        x = g.avg_pool2(x);
        x = self.trunk[1].forward(g, store, x)?;
        x = g.leaky_relu(x, self.negative_slope);
        x = g.avg_pool2(x);
        let a = self.alpha_head[0].forward(g, store, x)?;
        let a = self.alpha_head[1].forward(g, store, a)?;
        let b = self.beta_head[0].forward(g, store, x)?;
        let b = self.beta_head[1].forward(g, store, b)?;
        Ok((g.resize(a, height, width), g.resize(b, height, width)))
    }

    /// `α ⊙ F1 + β + F1` on the tape.
    pub fn modulate_graph(&self, g: &mut Graph, store: &ParamStore, target: Var, cond: Var) -> Result<Var> {
        let (c, h, w) = g.value(target).chw();
        if c != self.out_channels {
            return Err(Error::ShapeMismatch(format!(
                "modulated map has {c} channels, modulation produces {}",
                self.out_channels
            )));
        }
        let (alpha, beta) = self.params_graph(g, store, cond, h, w)?;
        let scaled = g.mul(alpha, target)?;
        let shifted = g.add(scaled, beta)?;
        g.add(shifted, target)
    }
}

pub fn modulation_params(
    net: &ModulationNet,
    store: &ParamStore,
    cond: &FeatureMap,
    target_shape: (usize, usize, usize),
) -> Result<ModulationParams> {
    cond.expect_chw("conditioning map")?;
    let (c, h, w) = target_shape;
    if c != net.out_channels || h == 0 || w == 0 {
        return Err(Error::ShapeMismatch(format!(
            "target {target_shape:?} for a modulation producing {} channels",
            net.out_channels
        )));
    }
    let mut g = Graph::new();
    let x = g.input(cond.clone());
    let (a, b) = net.params_graph(&mut g, store, x, h, w)?;
    Ok(ModulationParams {
        alpha: g.value(a).clone(),
        beta: g.value(b).clone(),
    })
}

pub fn modulate(net: &ModulationNet, store: &ParamStore, target: &FeatureMap, cond: &FeatureMap) -> Result<FeatureMap> {
    target.expect_chw("modulated map")?;
    cond.expect_chw("conditioning map")?;
    let mut g = Graph::new();
    let t = g.input(target.clone());
    let c = g.input(cond.clone());
    let out = net.modulate_graph(&mut g, store, t, c)?;
    Ok(g.value(out).clone())
}

/// Applies already-computed parameters: `α ⊙ F1 + β + F1`.
pub fn apply_modulation(target: &FeatureMap, params: &ModulationParams) -> Result<FeatureMap> {
    if !target.same_shape(&params.alpha) || !target.same_shape(&params.beta) {
        return Err(Error::ShapeMismatch(format!(
            "target {:?}, alpha {:?}, beta {:?}",
            target.shape(),
            params.alpha.shape(),
            params.beta.shape()
        )));
    }
    let mut out = target.clone();
    for ((o, a), b) in out.data_mut().iter_mut().zip(params.alpha.data()).zip(params.beta.data()) {
        *o = a * *o + b + *o;
    }
    Ok(out)
}

/// A free-standing modulation net with its own parameters, for gradient
/// checks. Inputs are `[F1, F2]`, the output is `F1'`.
#[derive(Debug, Clone)]
pub struct ModulationBlock {
    pub net: ModulationNet,
    pub store: ParamStore,
}

impl ModulationBlock {
    pub fn new(seed: u64, in_channels: usize, out_channels: usize, hidden: usize) -> Self {
        let mut store = ParamStore::new();
        let net = ModulationNet::new(&mut store, seed, "m", in_channels, out_channels, hidden);
        Self { net, store }
    }

    /// Replaces every parameter, the zero-started heads included, with
    /// seeded `N(0, std²)` values so no gradient path is trivially zero.
    pub fn randomize(&mut self, seed: u64, std: f64) {
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            let name = format!("randomize.{}", self.store.name(id));
            let shape = self.store.get(id).shape().to_vec();
            *self.store.get_mut(id) = normal(seed, &name, &shape, std);
        }
    }
}

impl DifferentiableBlock for ModulationBlock {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, g: &mut Graph, inputs: &[Var]) -> Result<Vec<Var>> {
        Ok(vec![self.net.modulate_graph(g, &self.store, inputs[0], inputs[1])?])
    }
}

/// Finite-difference check of a randomized `channels×size×size` block
/// (hidden width 4) against every input and parameter element.
pub fn modulation_grad_check(channels: usize, size: usize, epsilon: f64, seed: u64) -> Result<GradCheckReport> {
    let mut block = ModulationBlock::new(seed, channels, channels, 4);
    block.randomize(seed, 0.5);
    let shape = vec![channels, size, size];
    let opts = GradCheckOptions {
        epsilon,
        seed,
        ..Default::default()
    };
    grad_check_with(&mut block, &[shape.clone(), shape], &opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn wave(c: usize, h: usize, w: usize, k: f64) -> Tensor {
        Tensor::from_fn_chw(c, h, w, |ci, y, x| ((ci * 31 + y * 7 + x) as f64 * k).sin() * 2.0)
    }

    #[test]
    fn fresh_net_is_identity() {
        let mut store = ParamStore::new();
        let net = ModulationNet::new(&mut store, 3, "m", 8, 16, 8);
        let f1 = wave(16, 64, 64, 0.37);
        let f2 = wave(8, 64, 64, 0.11);
        let p = modulation_params(&net, &store, &f2, (16, 64, 64)).unwrap();
        assert_eq!(p.alpha.shape(), &[16, 64, 64]);
        assert!(p.alpha.data().iter().all(|&v| v == 0.0));
        assert!(p.beta.data().iter().all(|&v| v == 0.0));
        assert_eq!(modulate(&net, &store, &f1, &f2).unwrap(), f1);
    }

    #[test]
    fn six_convs_two_rectifiers() {
        let mut store = ParamStore::new();
        let net = ModulationNet::new(&mut store, 3, "m", 4, 5, 6);
        assert_eq!(net.convs().count(), 6);
        assert!(net.convs().all(|c| c.geom == crate::kernels::ConvGeom::POINTWISE));
        assert_eq!(store.len(), 12);
    }

    #[test]
    fn scalar_arithmetic() {
        let f1 = Tensor::from_vec(vec![1, 1, 1], vec![2.0]).unwrap();
        let p = ModulationParams {
            alpha: Tensor::from_vec(vec![1, 1, 1], vec![0.5]).unwrap(),
            beta: Tensor::from_vec(vec![1, 1, 1], vec![1.0]).unwrap(),
        };
        assert_eq!(apply_modulation(&f1, &p).unwrap().data(), &[4.0]);
    }

    #[test]
    fn injected_unit_alpha_doubles() {
        // α ≡ 1: zero the alpha head weights and set its last bias to one.
        let mut store = ParamStore::new();
        let net = ModulationNet::new(&mut store, 9, "m", 3, 4, 5);
        store.by_name_mut("m.alpha1.bias").unwrap().data_mut().fill(1.0);
        let f1 = wave(4, 8, 8, 0.5);
        let f2 = wave(3, 8, 8, 0.2);
        let out = modulate(&net, &store, &f1, &f2).unwrap();
        assert_eq!(out, f1.scale(2.0));
    }

    #[test]
    fn shape_errors() {
        let mut store = ParamStore::new();
        let net = ModulationNet::new(&mut store, 1, "m", 3, 4, 5);
        let f1 = wave(4, 8, 8, 0.5);
        assert!(matches!(modulate(&net, &store, &f1, &wave(2, 8, 8, 0.1)), Err(Error::ShapeMismatch(_))));
        assert!(matches!(modulate(&net, &store, &wave(5, 8, 8, 0.1), &wave(3, 8, 8, 0.1)), Err(Error::ShapeMismatch(_))));
        assert!(modulation_params(&net, &store, &wave(3, 8, 8, 0.1), (3, 8, 8)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let r = modulation_grad_check(2, 8, 1e-4, 0).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }
}
