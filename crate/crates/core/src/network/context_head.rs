//! Multi-scale context head: parallel dilated branches plus an image-level
//! pooling branch, concatenated, projected and classified.
//!
//! This stands in for the attention-based pyramid head of the original
//! design; it keeps the multi-rate context role at a fraction of the cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::layers::{Conv, Init};
use crate::params::ParamStore;
use crate::tensor::{FeatureMap, ProbabilityMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextHeadSpec {
    pub branch_width: usize,
    /// One branch per rate; rate 1 is a pointwise conv, others 3×3 dilated.
    pub dilations: Vec<usize>,
}

impl Default for ContextHeadSpec {
    fn default() -> Self {
        Self {
            branch_width: 256,
            dilations: vec![1, 12, 24, 36],
        }
    }
}

impl ContextHeadSpec {
    pub fn toy() -> Self {
        Self {
            branch_width: 16,
            dilations: vec![1, 2, 4, 6],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContextHead {
    pub num_out: usize,
    branches: Vec<Conv>,
    pooled: Conv,
    project: Conv,
    classifier: Conv,
}

impl ContextHead {
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        in_channels: usize,
        num_out: usize,
        spec: &ContextHeadSpec,
        zero_classifier: bool,
    ) -> Result<Self> {
        if spec.branch_width == 0 || spec.dilations.is_empty() || spec.dilations.contains(&0) || num_out == 0 {
            return Err(Error::ConfigInvalid(format!("context head {spec:?} with {num_out} outputs")));
        }
        let bw = spec.branch_width;
        let branches = spec
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let n = format!("{name}.branch{i}");
                if d == 1 {
                    Conv::pointwise(store, seed, &n, in_channels, bw, Init::He)
                } else {
                    Conv::new(store, seed, &n, in_channels, bw, 3, ConvGeom::same3(d), Init::He)
                }
            })
            .collect::<Vec<_>>();
        let pooled = Conv::pointwise(store, seed, &format!("{name}.pooled"), in_channels, bw, Init::He);
        let concat = bw * (branches.len() + 1);
        let project = Conv::pointwise(store, seed, &format!("{name}.project"), concat, bw, Init::He);
        let init = if zero_classifier { Init::Zero } else { Init::He };
        let classifier = Conv::pointwise(store, seed, &format!("{name}.classifier"), bw, num_out, init);
        Ok(Self {
            num_out,
            branches,
            pooled,
            project,
            classifier,
        })
    }

    /// Name prefix of the classifier's weight and bias.
    pub fn classifier(&self) -> &Conv {
        &self.classifier
    }

    pub(crate) fn forward_graph(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (_, h, w) = g.value(x).chw();
        let mut parts = Vec::with_capacity(self.branches.len() + 1);
        for b in &self.branches {
            let y = b.forward(g, store, x)?;
            parts.push(g.relu(y));
        }
        let gp = g.global_avg_pool(x);
        let gp = self.pooled.forward(g, store, gp)?;
        let gp = g.relu(gp);
        parts.push(g.resize(gp, h, w));
        let cat = g.concat(&parts)?;
        let y = self.project.forward(g, store, cat)?;
        let y = g.relu(y);
        self.classifier.forward(g, store, y)
    }

    pub fn forward(&self, store: &ParamStore, feature: &FeatureMap) -> Result<ProbabilityMap> {
        feature.expect_chw("context head input")?;
        let mut g = Graph::new();
        let x = g.input(feature.clone());
        let y = self.forward_graph(&mut g, store, x)?;
        Ok(g.value(y).clone())
    }
}
