use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::params::{he_normal, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    He,
    Zero,
}

/// A 2-D convolution whose weights live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
        init: Init,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        let w = match init {
            Init::He => he_normal(seed, &format!("{name}.weight"), &shape),
            Init::Zero => Tensor::zeros(&shape),
        };
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            weight,
            bias,
            geom,
            in_channels,
            out_channels,
        }
    }

    pub fn pointwise(store: &mut ParamStore, seed: u64, name: &str, c_in: usize, c_out: usize, init: Init) -> Self {
        Self::new(store, seed, name, c_in, c_out, 1, ConvGeom::POINTWISE, init)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.geom)
    }
}
