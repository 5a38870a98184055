use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::layers::{Conv, Init};
use crate::params::ParamStore;
use crate::tensor::{FeatureMap, Tensor};

/// Backbone wiring. Both variants end at stride 8 with dilated last stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneSpec {
    /// Stem conv (stride 2) then four stages of 3×3 conv + ReLU:
    /// stage 1 and 2 stride 2, stage 3 dilation 2, stage 4 dilation 4.
    Plain { stem: usize, widths: [usize; 4], depths: [usize; 4] },
    /// Bottleneck residual network (`blocks = [3, 4, 23, 3]`, `widths =
    /// [64, 128, 256, 512]` is the 101-layer layout). Normalization is a
    /// learnable per-channel affine; the stem's pooling is a 2×2 average.
    ResNet { stem: usize, widths: [usize; 4], blocks: [usize; 4] },
}

impl BackboneSpec {
    pub fn toy() -> Self {
        BackboneSpec::Plain {
            stem: 16,
            widths: [16, 32, 32, 48],
            depths: [1, 1, 1, 1],
        }
    }

    pub fn resnet101() -> Self {
        BackboneSpec::ResNet {
            stem: 64,
            widths: [64, 128, 256, 512],
            blocks: [3, 4, 23, 3],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            BackboneSpec::Plain { stem, widths, depths } => {
                *stem > 0 && widths.iter().all(|&w| w > 0) && depths.iter().all(|&d| d > 0)
            }
            BackboneSpec::ResNet { stem, widths, blocks } => {
                *stem > 0 && widths.iter().all(|&w| w > 0) && blocks.iter().all(|&d| d > 0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("backbone has a zero width or depth: {self:?}")))
        }
    }

    /// Channels of (low-level, aux, main) features.
    pub fn channels(&self) -> (usize, usize, usize) {
        match self {
            BackboneSpec::Plain { widths, .. } => (widths[1], widths[2], widths[3]),
            BackboneSpec::ResNet { widths, .. } => (4 * widths[1], 4 * widths[2], 4 * widths[3]),
        }
    }
}

/// Backbone features, all at 1/8 of the input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput {
    /// Output of the second stage (ResNet's `conv3_x`).
    pub low_level: FeatureMap,
    /// Output of the fourth stage.
    pub main: FeatureMap,
    /// Output of the third stage (ResNet's `conv4_x`), fed to the auxiliary head.
    pub aux: FeatureMap,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BackboneVars {
    pub low_level: Var,
    pub main: Var,
    pub aux: Var,
}

#[derive(Debug, Clone)]
struct Affine {
    scale: crate::params::ParamId,
    shift: crate::params::ParamId,
}

impl Affine {
    fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            scale: store.add(format!("{name}.scale"), Tensor::ones(&[c])),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[c])),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let s = g.param(store, self.scale);
        let t = g.param(store, self.shift);
        g.channel_affine(x, s, t)
    }
}

#[derive(Debug, Clone)]
struct Bottleneck {
    reduce: Conv,
    reduce_norm: Affine,
    spatial: Conv,
    spatial_norm: Affine,
    expand: Conv,
    expand_norm: Affine,
    shortcut: Option<(Conv, Affine)>,
}

impl Bottleneck {
    fn new(store: &mut ParamStore, seed: u64, name: &str, c_in: usize, width: usize, stride: usize, dilation: usize) -> Self {
        let c_out = 4 * width;
        let spatial_geom = ConvGeom {
            stride,
            pad: dilation,
            dilation,
        };
        let shortcut = (c_in != c_out || stride != 1).then(|| {
            let geom = ConvGeom {
                stride,
                pad: 0,
                dilation: 1,
            };
            (
                Conv::new(store, seed, &format!("{name}.shortcut"), c_in, c_out, 1, geom, Init::He),
                Affine::new(store, &format!("{name}.shortcut_norm"), c_out),
            )
        });
        Self {
            reduce: Conv::pointwise(store, seed, &format!("{name}.reduce"), c_in, width, Init::He),
            reduce_norm: Affine::new(store, &format!("{name}.reduce_norm"), width),
            spatial: Conv::new(store, seed, &format!("{name}.spatial"), width, width, 3, spatial_geom, Init::He),
            spatial_norm: Affine::new(store, &format!("{name}.spatial_norm"), width),
            expand: Conv::pointwise(store, seed, &format!("{name}.expand"), width, c_out, Init::He),
            expand_norm: Affine::new(store, &format!("{name}.expand_norm"), c_out),
            shortcut,
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut y = self.reduce.forward(g, store, x)?;
        y = self.reduce_norm.forward(g, store, y)?;
        y = g.relu(y);
        y = self.spatial.forward(g, store, y)?;
        y = self.spatial_norm.forward(g, store, y)?;
        y = g.relu(y);
        y = self.expand.forward(g, store, y)?;
        y = self.expand_norm.forward(g, store, y)?;
        let skip = match &self.shortcut {
            Some((conv, norm)) => {
                let s = conv.forward(g, store, x)?;
                norm.forward(g, store, s)?
            }
            None => x,
        };
        let sum = g.add(y, skip)?;
        Ok(g.relu(sum))
    }
}

#[derive(Debug, Clone)]
enum Stages {
    Plain { stem: Conv, stages: Vec<Vec<Conv>> },
    ResNet { stem: Conv, stem_norm: Affine, stages: Vec<Vec<Bottleneck>> },
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub spec: BackboneSpec,
    stages: Stages,
}

/// Stride (relative to the previous stage) and dilation of each stage.
const STAGE_LAYOUT: [(usize, usize); 4] = [(2, 1), (2, 1), (1, 2), (1, 4)];
const RESNET_LAYOUT: [(usize, usize); 4] = [(1, 1), (2, 1), (1, 2), (1, 4)];

impl Backbone {
    pub fn new(store: &mut ParamStore, seed: u64, spec: &BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let stages = match spec {
            BackboneSpec::Plain { stem, widths, depths } => {
                let stem_conv = Conv::new(store, seed, "backbone.stem", 3, *stem, 3, ConvGeom::strided3(2), Init::He);
                let mut c_in = *stem;
                let mut stages = Vec::new();
                for (s, ((&width, &depth), &(stride, dilation))) in widths.iter().zip(depths).zip(&STAGE_LAYOUT).enumerate() {
                    let mut convs = Vec::new();
                    for d in 0..depth {
                        let geom = ConvGeom {
                            stride: if d == 0 { stride } else { 1 },
                            pad: dilation,
                            dilation,
                        };
                        let name = format!("backbone.stage{}.conv{d}", s + 1);
                        convs.push(Conv::new(store, seed, &name, c_in, width, 3, geom, Init::He));
                        c_in = width;
                    }
                    stages.push(convs);
                }
                Stages::Plain { stem: stem_conv, stages }
            }
            BackboneSpec::ResNet { stem, widths, blocks } => {
                let stem_geom = ConvGeom {
                    stride: 2,
                    pad: 3,
                    dilation: 1,
                };
                let stem_conv = Conv::new(store, seed, "backbone.stem", 3, *stem, 7, stem_geom, Init::He);
                let stem_norm = Affine::new(store, "backbone.stem_norm", *stem);
                let mut c_in = *stem;
                let mut stages = Vec::new();
                for (s, ((&width, &n), &(stride, dilation))) in widths.iter().zip(blocks).zip(&RESNET_LAYOUT).enumerate() {
                    let mut layer = Vec::new();
                    for b in 0..n {
                        let name = format!("backbone.layer{}.block{b}", s + 1);
                        let st = if b == 0 { stride } else { 1 };
                        layer.push(Bottleneck::new(store, seed, &name, c_in, width, st, dilation));
                        c_in = 4 * width;
                    }
                    stages.push(layer);
                }
                Stages::ResNet {
                    stem: stem_conv,
                    stem_norm,
                    stages,
                }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            stages,
        })
    }

    pub(crate) fn check_image(image: &Tensor) -> Result<(usize, usize)> {
        let s = image.shape();
        if s.len() != 3 || s[0] != 3 || s[1] == 0 || s[2] == 0 || !s[1].is_multiple_of(32) || !s[2].is_multiple_of(32) {
            return Err(Error::BadInputShape(format!(
                "expected a 3×H×W image with H, W positive multiples of 32, got {s:?}"
            )));
        }
        Ok((s[1], s[2]))
    }

    pub(crate) fn forward_graph(&self, g: &mut Graph, store: &ParamStore, image: Var) -> Result<BackboneVars> {
        Self::check_image(g.value(image))?;
        let mut outs = Vec::with_capacity(4);
        match &self.stages {
            Stages::Plain { stem, stages } => {
                let mut x = stem.forward(g, store, image)?;
                x = g.relu(x);
                for stage in stages {
                    for conv in stage {
                        x = conv.forward(g, store, x)?;
                        x = g.relu(x);
                    }
                    outs.push(x);
                }
            }
            Stages::ResNet { stem, stem_norm, stages } => {
                let mut x = stem.forward(g, store, image)?;
                x = stem_norm.forward(g, store, x)?;
                x = g.relu(x);
                x = g.avg_pool2(x);
                for stage in stages {
                    for block in stage {
                        x = block.forward(g, store, x)?;
                    }
                    outs.push(x);
                }
            }
        }
        Ok(BackboneVars {
            low_level: outs[1],
            aux: outs[2],
            main: outs[3],
        })
    }

    pub fn forward(&self, store: &ParamStore, image: &Tensor) -> Result<BackboneOutput> {
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let v = self.forward_graph(&mut g, store, x)?;
        Ok(BackboneOutput {
            low_level: g.value(v.low_level).clone(),
            main: g.value(v.main).clone(),
            aux: g.value(v.aux).clone(),
        })
    }
}
