use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneSpec};
use super::context_head::{ContextHead, ContextHeadSpec};
use crate::checkpoint::{self, Checkpoint};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::layers::{Conv, Init};
use crate::modulation::ModulationNet;
use crate::params::ParamStore;
use crate::taxonomy::{ClassTaxonomy, PathSplit};
use crate::tensor::{ProbabilityMap, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AquaNetConfig {
    pub backbone: BackboneSpec,
    pub context_head: ContextHeadSpec,
    /// Width of the modulation parameter networks.
    pub modulation_hidden: usize,
    pub aux_branch_width: usize,
    pub two_paths: bool,
    pub low_level_modulation: bool,
    pub cross_path_modulation: bool,
    /// Start every class-score layer at zero so all variants share the same
    /// (all-zero) initial logits.
    pub zero_init_classifier: bool,
    pub seed: u64,
}

impl Default for AquaNetConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneSpec::resnet101(),
            context_head: ContextHeadSpec::default(),
            modulation_hidden: 64,
            aux_branch_width: 256,
            two_paths: true,
            low_level_modulation: true,
            cross_path_modulation: true,
            zero_init_classifier: true,
            seed: 0,
        }
    }
}

impl AquaNetConfig {
    /// A desk-scale network that trains in minutes on a CPU.
    pub fn toy() -> Self {
        Self {
            backbone: BackboneSpec::toy(),
            context_head: ContextHeadSpec::toy(),
            modulation_hidden: 16,
            aux_branch_width: 16,
            ..Self::default()
        }
    }

    pub fn with_toggles(mut self, two_paths: bool, low_level: bool, cross_path: bool) -> Self {
        self.two_paths = two_paths;
        self.low_level_modulation = low_level;
        self.cross_path_modulation = cross_path;
        self
    }
}

#[derive(Debug, Clone)]
pub struct PathBranch {
    pub low_level_channels: Vec<usize>,
    pub modulation: Option<ModulationNet>,
    pub head: ContextHead,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Paths {
    Single(PathBranch),
    Dual {
        aquatic: PathBranch,
        nonaquatic: PathBranch,
        /// `(M(P1 | P2), M(P2 | P1))`, independent weights.
        cross: Option<(ModulationNet, ModulationNet)>,
    },
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct AquaNetVars {
    /// `K×H×W` class logits at input resolution, channels in class-id order.
    pub logits: Var,
    /// `K×H/8×W/8` auxiliary logits.
    pub aux: Var,
    /// Per-path logits after cross-path modulation (two-path variants only).
    pub paths: Option<(Var, Var)>,
}

#[derive(Debug, Clone)]
pub struct AquaNet {
    pub config: AquaNetConfig,
    pub taxonomy: ClassTaxonomy,
    pub params: ParamStore,
    split: PathSplit,
    backbone: Backbone,
    paths: Paths,
    aux_hidden: Conv,
    aux_classifier: Conv,
}

impl AquaNet {
    pub fn new(config: AquaNetConfig, taxonomy: ClassTaxonomy) -> Result<Self> {
        let seed = config.seed;
        let split = taxonomy.path_split();
        let k = taxonomy.num_classes();
        if config.modulation_hidden == 0 || config.aux_branch_width == 0 {
            return Err(Error::ConfigInvalid("modulation and aux widths must be positive".into()));
        }
        if config.cross_path_modulation && !config.two_paths {
            return Err(Error::ConfigInvalid("cross-path modulation requires two paths".into()));
        }
        if config.two_paths && (split.aquatic.is_empty() || split.nonaquatic.is_empty()) {
            return Err(Error::ConfigInvalid(format!(
                "two paths need aquatic and non-aquatic classes (have {} and {})",
                split.aquatic.len(),
                split.nonaquatic.len()
            )));
        }
        let mut params = ParamStore::new();
        let backbone = Backbone::new(&mut params, seed, &config.backbone)?;
        let (c_low, c_aux, c_main) = config.backbone.channels();
        let hidden = config.modulation_hidden;
        let zero = config.zero_init_classifier;

        let make_branch = |params: &mut ParamStore, name: &str, low: Vec<usize>, n_out: usize| -> Result<PathBranch> {
            let modulation = config
                .low_level_modulation
                .then(|| ModulationNet::new(params, seed, &format!("{name}.lm"), low.len(), c_main, hidden));
            let head = ContextHead::new(params, seed, &format!("{name}.head"), c_main, n_out, &config.context_head, zero)?;
            Ok(PathBranch {
                low_level_channels: low,
                modulation,
                head,
            })
        };

        let paths = if config.two_paths {
            if config.low_level_modulation && c_low < 2 {
                return Err(Error::ConfigInvalid("low-level feature needs at least two channels to split".into()));
            }
            let half = c_low / 2;
            let aquatic = make_branch(&mut params, "aquatic", (0..half).collect(), split.aquatic.len())?;
            let nonaquatic = make_branch(&mut params, "nonaquatic", (half..c_low).collect(), split.nonaquatic.len())?;
            let cross = config.cross_path_modulation.then(|| {
                let (n1, n2) = (split.aquatic.len(), split.nonaquatic.len());
                (
                    ModulationNet::new(&mut params, seed, "cross.aquatic", n2, n1, hidden),
                    ModulationNet::new(&mut params, seed, "cross.nonaquatic", n1, n2, hidden),
                )
            });
            Paths::Dual {
                aquatic,
                nonaquatic,
                cross,
            }
        } else {
            Paths::Single(make_branch(&mut params, "single", (0..c_low).collect(), k)?)
        };

        let aw = config.aux_branch_width;
        let aux_hidden = Conv::new(&mut params, seed, "aux.hidden", c_aux, aw, 3, ConvGeom::same3(1), Init::He);
        let aux_init = if zero { Init::Zero } else { Init::He };
        let aux_classifier = Conv::pointwise(&mut params, seed, "aux.classifier", aw, k, aux_init);

        Ok(Self {
            config,
            taxonomy,
            params,
            split,
            backbone,
            paths,
            aux_hidden,
            aux_classifier,
        })
    }

    pub fn split(&self) -> &PathSplit {
        &self.split
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn paths(&self) -> &Paths {
        &self.paths
    }

    pub fn num_classes(&self) -> usize {
        self.taxonomy.num_classes()
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    fn branch_forward(&self, g: &mut Graph, branch: &PathBranch, main: Var, low: Var) -> Result<Var> {
        let feature = match &branch.modulation {
            Some(m) => {
                let cond = if branch.low_level_channels.len() == g.value(low).chw().0 {
                    low
                } else {
                    g.gather_channels(low, &branch.low_level_channels)?
                };
                m.modulate_graph(g, &self.params, main, cond)?
            }
            None => main,
        };
        branch.head.forward_graph(g, &self.params, feature)
    }

    /// Builds the full forward pass on `g` for an image node.
    pub fn forward_graph(&self, g: &mut Graph, image: Var) -> Result<AquaNetVars> {
        let (h, w) = Backbone::check_image(g.value(image))?;
        let bb = self.backbone.forward_graph(g, &self.params, image)?;
        let (logits, paths) = match &self.paths {
            Paths::Single(branch) => (self.branch_forward(g, branch, bb.main, bb.low_level)?, None),
            Paths::Dual {
                aquatic,
                nonaquatic,
                cross,
            } => {
                let p1 = self.branch_forward(g, aquatic, bb.main, bb.low_level)?;
                let p2 = self.branch_forward(g, nonaquatic, bb.main, bb.low_level)?;
                let (q1, q2) = match cross {
                    Some((m1, m2)) => (
                        m1.modulate_graph(g, &self.params, p1, p2)?,
                        m2.modulate_graph(g, &self.params, p2, p1)?,
                    ),
                    None => (p1, p2),
                };
                let cat = g.concat(&[q1, q2])?;
                (g.gather_channels(cat, &self.split.reassembly())?, Some((q1, q2)))
            }
        };
        let logits = g.resize(logits, h, w);
        let a = self.aux_hidden.forward(g, &self.params, bb.aux)?;
        let a = g.relu(a);
        let aux = self.aux_classifier.forward(g, &self.params, a)?;
        Ok(AquaNetVars { logits, aux, paths })
    }

    /// `(P_final, P_aux)` for one image.
    pub fn forward(&self, image: &Tensor) -> Result<(ProbabilityMap, ProbabilityMap)> {
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let v = self.forward_graph(&mut g, x)?;
        Ok((g.value(v.logits).clone(), g.value(v.aux).clone()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let config = serde_json::json!({
            "kind": "aquanet",
            "model": self.config,
            "taxonomy": self.taxonomy,
        });
        Checkpoint::from_params(config, &self.params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.config.get("kind").and_then(|v| v.as_str()) != Some("aquanet") {
            return Err(Error::Checkpoint("not an aquanet checkpoint".into()));
        }
        let config: AquaNetConfig = serde_json::from_value(ckpt.config["model"].clone())
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let taxonomy: ClassTaxonomy = serde_json::from_value(ckpt.config["taxonomy"].clone())
            .map_err(|e| Error::Checkpoint(format!("taxonomy: {e}")))?;
        let mut net = Self::new(config, taxonomy)?;
        net.params.load_named(&ckpt.blobs).map_err(Error::Checkpoint)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::read(path)?)
    }
}

/// `(M(P1 | P2), M(P2 | P1))`. Both modulations condition on the original
/// maps, never on each other's output.
pub fn cross_path(
    net_a: &ModulationNet,
    net_b: &ModulationNet,
    store: &ParamStore,
    p1: &ProbabilityMap,
    p2: &ProbabilityMap,
) -> Result<(ProbabilityMap, ProbabilityMap)> {
    let (_, h1, w1) = p1.expect_chw("P1")?;
    let (_, h2, w2) = p2.expect_chw("P2")?;
    if (h1, w1) != (h2, w2) {
        return Err(Error::ShapeMismatch(format!("P1 is {h1}×{w1}, P2 is {h2}×{w2}")));
    }
    let mut g = Graph::new();
    let a = g.input(p1.clone());
    let b = g.input(p2.clone());
    let qa = net_a.modulate_graph(&mut g, store, a, b)?;
    let qb = net_b.modulate_graph(&mut g, store, b, a)?;
    Ok((g.value(qa).clone(), g.value(qb).clone()))
}
