//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the code under test except for plain data types.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use aquanet::mask::IndexMask;
use aquanet::synthgen::generate_fixture;
use aquanet::taxonomy::{ClassDef, ClassTaxonomy, Group};
use aquanet::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const IGNORE: u8 = 255;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `k` classes named `c0..`, aquatic where `aquatic[i]`.
pub fn taxonomy(aquatic: &[bool]) -> ClassTaxonomy {
    let classes = aquatic
        .iter()
        .enumerate()
        .map(|(i, &a)| ClassDef {
            id: i as u8,
            name: format!("c{i}"),
            group: if a { Group::Natural } else { Group::General },
            aquatic: a,
        })
        .collect();
    ClassTaxonomy::new(classes, IGNORE).unwrap()
}

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize, k: u8, ignore_prob: f64) -> IndexMask {
    IndexMask::from_fn(h, w, |_, _| if rng.random_bool(ignore_prob) { IGNORE } else { rng.random_range(0..k) })
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Metrics recomputed pixel by pixel, without a confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMetrics {
    pub acc: f64,
    pub miou: f64,
    pub a_acc: Option<f64>,
    pub a_miou: Option<f64>,
    pub weighted: (f64, f64, f64),
}

pub fn oracle_metrics(pairs: &[(IndexMask, IndexMask)], aquatic: &[bool]) -> OracleMetrics {
    let k = aquatic.len();
    let pixels: Vec<(usize, usize)> = pairs
        .iter()
        .flat_map(|(p, g)| p.data().iter().zip(g.data()).map(|(&a, &b)| (a, b)).collect::<Vec<_>>())
        .filter(|&(_, g)| g != IGNORE)
        .map(|(p, g)| (p as usize, g as usize))
        .collect();
    let n = pixels.len() as f64;
    let acc = pixels.iter().filter(|(p, g)| p == g).count() as f64 / n;

    let iou = |c: usize| -> Option<f64> {
        let inter = pixels.iter().filter(|&&(p, g)| p == c && g == c).count();
        let union = pixels.iter().filter(|&&(p, g)| p == c || g == c).count();
        (union > 0).then(|| inter as f64 / union as f64)
    };
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let miou = mean((0..k).filter_map(iou).collect()).unwrap();
    let a_miou = mean((0..k).filter(|&c| aquatic[c]).filter_map(iou).collect());
    let in_scope: Vec<&(usize, usize)> = pixels.iter().filter(|(_, g)| aquatic[*g]).collect();
    let a_acc = (!in_scope.is_empty()).then(|| in_scope.iter().filter(|(p, g)| p == g).count() as f64 / in_scope.len() as f64);

    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = pixels.iter().filter(|&&(p, g)| p == c && g == c).count() as f64;
        let predicted = pixels.iter().filter(|&&(p, _)| p == c).count() as f64;
        let support = pixels.iter().filter(|&&(_, g)| g == c).count() as f64;
        let prec = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let rec = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        wp += prec * support / n;
        wr += rec * support / n;
        wf += f1 * support / n;
    }
    OracleMetrics {
        acc,
        miou,
        a_acc,
        a_miou,
        weighted: (wp, wr, wf),
    }
}

/// Half-pixel-centre bilinear sample of one channel.
pub fn bilinear(t: &Tensor, c: usize, oh: usize, ow: usize, oy: usize, ox: usize) -> f64 {
    let (_, h, w) = t.chw();
    let tap = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let (y0, y1, fy) = tap(oy, h, oh);
    let (x0, x1, fx) = tap(ox, w, ow);
    let v = |y, x| t.at(c, y, x);
    (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1)) + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1))
}

/// `-log softmax(logits)[target]` averaged over non-ignored pixels.
pub fn oracle_ce(logits: &Tensor, mask: &IndexMask) -> f64 {
    let (k, h, w) = logits.chw();
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let t = mask.get(y, x);
            if t == IGNORE {
                continue;
            }
            let m = (0..k).map(|c| logits.at(c, y, x)).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..k).map(|c| (logits.at(c, y, x) - m).exp()).sum::<f64>().ln();
            sum += lse - logits.at(t as usize, y, x);
            n += 1;
        }
    }
    sum / n as f64
}

/// Main CE plus `aux_weight` times CE of the bilinearly upsampled aux map.
pub fn oracle_total_loss(main: &Tensor, aux: &Tensor, mask: &IndexMask, aux_weight: f64) -> (f64, f64, f64) {
    let (h, w) = mask.dims();
    let (k, _, _) = aux.chw();
    let up = Tensor::from_fn_chw(k, h, w, |c, y, x| bilinear(aux, c, h, w, y, x));
    let m = oracle_ce(main, mask);
    let a = oracle_ce(&up, mask);
    (m, a, m + aux_weight * a)
}

/// Every stride-32 tile whose 1024 mask pixels share one value, as
/// `(row, col, value)`.
pub fn uniform_tiles(mask: &IndexMask) -> Vec<(usize, usize, u8)> {
    let (h, w) = mask.dims();
    let mut out = Vec::new();
    let mut row = 0;
    while row + 32 <= h {
        let mut col = 0;
        while col + 32 <= w {
            let mut seen = std::collections::BTreeSet::new();
            for y in row..row + 32 {
                for x in col..col + 32 {
                    seen.insert(mask.get(y, x));
                }
            }
            if seen.len() == 1 {
                out.push((row, col, *seen.iter().next().unwrap()));
            }
            col += 32;
        }
        row += 32;
    }
    out
}

/// Per-cell vote over nearest-resized masks; ties to the lowest id.
pub fn oracle_mode(masks: &[IndexMask], size: usize) -> IndexMask {
    IndexMask::from_fn(size, size, |y, x| {
        let mut votes: BTreeMap<u8, usize> = BTreeMap::new();
        for m in masks {
            let (h, w) = m.dims();
            let v = m.get(y * h / size, x * w / size);
            *votes.entry(v).or_default() += 1;
        }
        let best = votes.values().copied().max().unwrap();
        *votes.iter().find(|(_, &n)| n == best).unwrap().0
    })
}

pub fn fixture(name: &str, dir: &Path, seed: u64) -> std::path::PathBuf {
    let root = dir.join(name);
    generate_fixture(name, &root, seed).unwrap();
    root
}
