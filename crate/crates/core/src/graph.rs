//! Reverse-mode gradient tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the reverse of insertion order is a valid
//! topological order for backpropagation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Backward rule of a user-supplied operation: given the input values and
/// the output gradient, returns one gradient per input.
pub type CustomBackward = Arc<dyn Fn(&[&Tensor], &Tensor) -> Vec<Tensor> + Send + Sync>;

enum Op {
    Leaf,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    AvgPool2(Var),
    Resize(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Gather {
        x: Var,
        channels: Vec<usize>,
    },
    GlobalAvgPool(Var),
    ChannelAffine {
        x: Var,
        scale: Var,
        shift: Var,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        target: Arc<[u8]>,
        ignore: u8,
        weight: f64,
    },
    Custom {
        inputs: Vec<Var>,
        backward: CustomBackward,
    },
}

#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

/// Per-parameter gradients gathered from one or more graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            slots: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots[id.index()].as_ref()
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_assign(t),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(Tensor::all_finite)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Brings a stored parameter onto the tape. Repeated requests for the
    /// same parameter return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.params.push((id, v));
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] {
            return Err(Error::ShapeMismatch(format!("conv input {xs:?} with weight {ws:?}")));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [ws[0]] {
                return Err(Error::ShapeMismatch(format!("conv bias {:?} for {} outputs", self.value(b).shape(), ws[0])));
            }
        }
        if geom.out_len(xs[1], ws[2]).is_none() || geom.out_len(xs[2], ws[3]).is_none() {
            return Err(Error::ShapeMismatch(format!("conv window {ws:?} larger than padded input {xs:?}")));
        }
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu { x, slope })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let out = kernels::avg_pool2_forward(self.value(x));
        self.push(out, Op::AvgPool2(x))
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Var {
        let (_, xh, xw) = self.value(x).chw();
        if xh == h && xw == w {
            return x;
        }
        let out = kernels::resize_bilinear_forward(self.value(x), h, w);
        self.push(out, Op::Resize(x))
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let out_data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(self.value(a).shape().to_vec(), out_data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).scale(k);
        self.push(out, Op::Scale(x, k))
    }

    /// Channel-wise concatenation of `C_i×H×W` maps.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::ShapeMismatch("concat of nothing".into()));
        };
        let (_, h, w) = self.value(first).chw();
        let mut data = Vec::new();
        let mut c = 0;
        for &p in parts {
            let (pc, ph, pw) = self.value(p).chw();
            if (ph, pw) != (h, w) {
                return Err(Error::ShapeMismatch(format!("concat {ph}×{pw} with {h}×{w}")));
            }
            data.extend_from_slice(self.value(p).data());
            c += pc;
        }
        let out = Tensor::from_vec(vec![c, h, w], data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Output channel `i` is input channel `channels[i]`.
    pub fn gather_channels(&mut self, x: Var, channels: &[usize]) -> Result<Var> {
        let (c, h, w) = self.value(x).chw();
        if let Some(&bad) = channels.iter().find(|&&ch| ch >= c) {
            return Err(Error::ShapeMismatch(format!("channel {bad} of a {c}-channel map")));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(channels.len() * h * w);
        for &ch in channels {
            data.extend_from_slice(src.plane(ch));
        }
        let out = Tensor::from_vec(vec![channels.len(), h, w], data)?;
        Ok(self.push(
            out,
            Op::Gather {
                x,
                channels: channels.to_vec(),
            },
        ))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let src = self.value(x);
        let out = Tensor::from_fn_chw(c, 1, 1, |ci, _, _| src.plane(ci).iter().sum::<f64>() / (h * w) as f64);
        self.push(out, Op::GlobalAvgPool(x))
    }

    /// `y[c] = x[c] * scale[c] + shift[c]` with per-channel vectors.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw();
        if self.value(scale).shape() != [c] || self.value(shift).shape() != [c] {
            return Err(Error::ShapeMismatch(format!("channel affine over {c} channels")));
        }
        let (xs, sc, sh) = (self.value(x), self.value(scale), self.value(shift));
        let out = Tensor::from_fn_chw(c, h, w, |ci, y, xx| xs.at(ci, y, xx) * sc.data()[ci] + sh.data()[ci]);
        Ok(self.push(out, Op::ChannelAffine { x, scale, shift }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// `weight * Σ_p -log softmax(logits[:, p])[target[p]]` over pixels whose
    /// target is not `ignore`. Returns a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, target: Arc<[u8]>, ignore: u8, weight: f64) -> Result<Var> {
        let (k, h, w) = self.value(logits).chw();
        if target.len() != h * w {
            return Err(Error::ShapeMismatch(format!("target of {} pixels for {h}×{w} logits", target.len())));
        }
        let hw = h * w;
        let l = self.value(logits).data();
        let mut total = 0.0;
        for (p, &t) in target.iter().enumerate() {
            if t == ignore {
                continue;
            }
            if t as usize >= k {
                return Err(Error::IdOutOfRange {
                    id: t as u32,
                    num_classes: k,
                });
            }
            let m = (0..k).map(|c| l[c * hw + p]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..k).map(|c| (l[c * hw + p] - m).exp()).sum::<f64>().ln();
            total += lse - l[t as usize * hw + p];
        }
        Ok(self.push(
            Tensor::scalar(weight * total),
            Op::CrossEntropy {
                logits,
                target,
                ignore,
                weight,
            },
        ))
    }

    /// Appends an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Backpropagates from a scalar root with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward from a non-scalar node of shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let vals = &self.values;
        match &self.ops[i] {
            Op::Leaf | Op::Param => {}
            Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) = kernels::conv2d_backward(&vals[x.0], &vals[w.0], g, *geom);
                Self::accumulate(grads, *x, gx);
                Self::accumulate(grads, *w, gw);
                if let Some(b) = b {
                    Self::accumulate(grads, *b, gb);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let gx = vals[x.0]
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { slope * gv })
                    .collect();
                Self::accumulate(grads, *x, Tensor::from_vec(g.shape().to_vec(), gx).expect("same shape"));
            }
            Op::AvgPool2(x) => {
                Self::accumulate(grads, *x, kernels::avg_pool2_backward(vals[x.0].shape(), g));
            }
            Op::Resize(x) => {
                Self::accumulate(grads, *x, kernels::resize_bilinear_backward(vals[x.0].shape(), g));
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let ga = zip_map(g, &vals[b.0], |gv, bv| gv * bv);
                let gb = zip_map(g, &vals[a.0], |gv, av| gv * av);
                Self::accumulate(grads, *a, ga);
                Self::accumulate(grads, *b, gb);
            }
            Op::Scale(x, k) => Self::accumulate(grads, *x, g.scale(*k)),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = vals[p.0].numel();
                    let part = Tensor::from_vec(vals[p.0].shape().to_vec(), g.data()[offset..offset + n].to_vec())
                        .expect("same shape");
                    offset += n;
                    Self::accumulate(grads, *p, part);
                }
            }
            Op::Gather { x, channels } => {
                let mut gx = Tensor::zeros(vals[x.0].shape());
                for (out_c, &src_c) in channels.iter().enumerate() {
                    for (d, s) in gx.plane_mut(src_c).iter_mut().zip(g.plane(out_c)) {
                        *d += s;
                    }
                }
                Self::accumulate(grads, *x, gx);
            }
            Op::GlobalAvgPool(x) => {
                let (c, h, w) = vals[x.0].chw();
                let n = (h * w) as f64;
                let gx = Tensor::from_fn_chw(c, h, w, |ci, _, _| g.data()[ci] / n);
                Self::accumulate(grads, *x, gx);
            }
            Op::ChannelAffine { x, scale, shift } => {
                let xv = &vals[x.0];
                let sc = &vals[scale.0];
                let (c, h, w) = xv.chw();
                let gx = Tensor::from_fn_chw(c, h, w, |ci, y, xx| g.at(ci, y, xx) * sc.data()[ci]);
                let mut gs = Tensor::zeros(&[c]);
                let mut gt = Tensor::zeros(&[c]);
                for ci in 0..c {
                    gs.data_mut()[ci] = xv.plane(ci).iter().zip(g.plane(ci)).map(|(a, b)| a * b).sum();
                    gt.data_mut()[ci] = g.plane(ci).iter().sum();
                }
                Self::accumulate(grads, *x, gx);
                Self::accumulate(grads, *scale, gs);
                Self::accumulate(grads, *shift, gt);
            }
            Op::Sum(x) => {
                Self::accumulate(grads, *x, Tensor::full(vals[x.0].shape(), g.data()[0]));
            }
            Op::CrossEntropy {
                logits,
                target,
                ignore,
                weight,
            } => {
                let lv = &vals[logits.0];
                let (k, h, w) = lv.chw();
                let hw = h * w;
                let scale = weight * g.data()[0];
                let mut gl = Tensor::zeros(&[k, h, w]);
                let l = lv.data();
                let out = gl.data_mut();
                for (p, &t) in target.iter().enumerate() {
                    if t == *ignore {
                        continue;
                    }
                    let m = (0..k).map(|c| l[c * hw + p]).fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = (0..k).map(|c| (l[c * hw + p] - m).exp()).sum();
                    for c in 0..k {
                        let prob = (l[c * hw + p] - m).exp() / z;
                        let onehot = if c == t as usize { 1.0 } else { 0.0 };
                        out[c * hw + p] = scale * (prob - onehot);
                    }
                }
                Self::accumulate(grads, *logits, gl);
            }
            Op::Custom { inputs, backward } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| &vals[v.0]).collect();
                let gs = backward(&ins, g);
                assert_eq!(gs.len(), inputs.len(), "custom backward must return one gradient per input");
                for (v, gv) in inputs.iter().zip(gs) {
                    Self::accumulate(grads, *v, gv);
                }
            }
        }
    }

    /// Gradient of the last [`Graph::backward`] root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param_grads(&self, store: &ParamStore) -> Gradients {
        let mut out = Gradients::zeros_like(store);
        for &(id, v) in &self.params {
            if let Some(g) = self.grad(v) {
                out.slots[id.index()] = Some(g.clone());
            }
        }
        out
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape().to_vec(), data).expect("same shape")
}
