use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::augment;
use super::config::TrainConfig;
use super::loss::{count_valid, loss_graph};
use super::schedule::{poly_lr, Sgd};
use crate::dataset::SegSample;
use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph};
use crate::mask::IndexMask;
use crate::network::AquaNet;
use crate::params::derived_rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    pub loss_main: f64,
    pub loss_aux: f64,
    pub loss_total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,lr,loss_main,loss_aux,loss_total\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", r.iter, r.lr, r.loss_main, r.loss_aux, r.loss_total));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Mean total loss over rows `from..to`.
    pub fn window_mean(&self, from: usize, to: usize) -> f64 {
        let rows = &self.rows[from.min(self.rows.len())..to.min(self.rows.len())];
        rows.iter().map(|r| r.loss_total).sum::<f64>() / rows.len().max(1) as f64
    }
}

/// An in-memory training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub image: Tensor,
    pub mask: IndexMask,
}

impl TrainPair {
    pub fn load(sample: &SegSample) -> Result<Self> {
        let image = sample.load_image()?;
        let mask = sample.load_mask()?;
        let (_, h, w) = image.expect_chw("image")?;
        if (h, w) != mask.dims() {
            return Err(Error::ShapeMismatch(format!(
                "{}: image {:?} vs mask {:?}",
                sample.name,
                &image.shape()[1..],
                mask.dims()
            )));
        }
        Ok(Self { image, mask })
    }
}

pub fn load_pairs(samples: &[&SegSample]) -> Result<Vec<TrainPair>> {
    samples.iter().map(|s| TrainPair::load(s)).collect()
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Where checkpoints and the loss log go; nothing is written when `None`.
    pub out_dir: Option<&'a Path>,
    /// Log progress every this many iterations (0 = silent).
    pub progress_every: usize,
}


pub const CHECKPOINT_FILE: &str = "checkpoint.aqn";
pub const LOG_FILE: &str = "train_log.csv";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub checkpoint: Option<PathBuf>,
}

/// Batch order: seeded permutation of the data, reshuffled every epoch.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            pos: 0,
            epoch: 0,
            seed,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        let mut rng = derived_rng(self.seed, &format!("train.order.{}", self.epoch));
        self.order.shuffle(&mut rng);
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Runs `cfg.max_iters` SGD steps on `net`.
///
/// Each step draws `batch_size` pairs, augments them, and averages the loss
/// over every non-ignored pixel of the batch. Per-image graphs run in
/// parallel; their gradients are summed in batch order, so results do not
/// depend on the thread count.
pub fn train(net: &mut AquaNet, cfg: &TrainConfig, data: &[TrainPair], opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    let ignore = net.taxonomy.ignore_id();
    let aug = cfg.augment(ignore);
    let mut sampler = Sampler::new(data.len(), cfg.seed);
    let mut opt = Sgd::new(&net.params, cfg.momentum, cfg.weight_decay);
    let mut log = TrainLog::default();
    if let Some(dir) = opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for iter in 0..cfg.max_iters {
        let lr = poly_lr(cfg.base_lr, iter, cfg.max_iters, cfg.power);
        let batch: Vec<(Tensor, IndexMask)> = (0..cfg.batch_size)
            .map(|slot| {
                let pair = &data[sampler.next()];
                let mut rng = derived_rng(cfg.seed, &format!("augment.{iter}.{slot}"));
                augment(&pair.image, &pair.mask, &mut rng, &aug)
            })
            .collect();
        let n_valid: usize = batch.iter().map(|(_, m)| count_valid(m, ignore)).sum();
        if n_valid == 0 {
            log::warn!("iteration {iter}: every pixel of the batch is ignored, step skipped");
            log.rows.push(LogRow {
                iter,
                lr,
                loss_main: 0.0,
                loss_aux: 0.0,
                loss_total: 0.0,
            });
            continue;
        }

        let net_ref = &*net;
        let results: Vec<Result<(f64, f64, f64, Gradients)>> = batch
            .par_iter()
            .map(|(img, mask)| {
                let mut g = Graph::new();
                let x = g.input(img.clone());
                let v = net_ref.forward_graph(&mut g, x)?;
                let l = loss_graph(&mut g, v.logits, v.aux, mask, ignore, cfg.aux_weight, n_valid)?;
                let vals = (g.value(l.main).data()[0], g.value(l.aux).data()[0], g.value(l.total).data()[0]);
                g.backward(l.total)?;
                Ok((vals.0, vals.1, vals.2, g.param_grads(&net_ref.params)))
            })
            .collect();

        let mut grads = Gradients::zeros_like(&net.params);
        let (mut main, mut aux, mut total) = (0.0, 0.0, 0.0);
        for r in results {
            let (m, a, t, g) = r?;
            main += m;
            aux += a;
            total += t;
            grads.accumulate(&g);
        }
        if !total.is_finite() || !grads.all_finite() {
            return Err(Error::DivergedLoss { iter, loss: total });
        }
        opt.step(&mut net.params, &grads, lr);
        log.rows.push(LogRow {
            iter,
            lr,
            loss_main: main,
            loss_aux: aux,
            loss_total: total,
        });
        if opts.progress_every > 0 && (iter + 1) % opts.progress_every == 0 {
            log::info!("iter {:>6}  lr {lr:.3e}  loss {total:.4} (main {main:.4}, aux {aux:.4})", iter + 1);
        }
        if let Some(dir) = opts.out_dir {
            if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 && iter + 1 < cfg.max_iters {
                net.save(&dir.join(format!("checkpoint_{:06}.aqn", iter + 1)))?;
            }
        }
    }

    let checkpoint = match opts.out_dir {
        Some(dir) => {
            let path = dir.join(CHECKPOINT_FILE);
            net.save(&path)?;
            log.write_csv(&dir.join(LOG_FILE))?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome { log, checkpoint })
}
