use crate::graph::Gradients;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_POLY_POWER: f64 = 0.9;

/// `base · (1 − iter/max_iter)^power`.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize, power: f64) -> f64 {
    assert!(iter <= max_iter, "iteration {iter} beyond schedule length {max_iter}");
    if max_iter == 0 {
        return base;
    }
    base * (1.0 - iter as f64 / max_iter as f64).powf(power)
}

/// SGD with classical momentum and L2 weight decay:
/// `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`.
///
/// Parameters that received no gradient in a step are left alone,
/// momentum included.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: vec![None; store.len()],
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let w = store.get_mut(id);
            let mut d = g.clone();
            if self.weight_decay != 0.0 {
                d.axpy(self.weight_decay, w);
            }
            let v = match &mut self.velocity[id.index()] {
                Some(v) => {
                    for (vi, di) in v.data_mut().iter_mut().zip(d.data()) {
                        *vi = self.momentum * *vi + di;
                    }
                    v
                }
                slot @ None => slot.insert(d),
            };
            w.axpy(-lr, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn poly_endpoints() {
        assert_eq!(poly_lr(2.5e-4, 0, 100, 0.9), 2.5e-4);
        assert_eq!(poly_lr(2.5e-4, 100, 100, 0.9), 0.0);
        assert_eq!(poly_lr(2.5e-4, 50, 100, 1.0), 1.25e-4);
    }

    fn quadratic(w0: f64) -> (ParamStore, Gradients) {
        // loss = w², gradient 2w
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(w0));
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let sq = g.mul(w, w).unwrap();
        g.backward(sq).unwrap();
        let grads = g.param_grads(&store);
        (store, grads)
    }

    #[test]
    fn zero_lr_leaves_weights() {
        let (mut store, grads) = quadratic(1.5);
        let mut opt = Sgd::new(&store, 0.9, 1e-4);
        opt.step(&mut store, &grads, 0.0);
        assert_eq!(store.by_name("w").unwrap().data()[0], 1.5);
    }

    #[test]
    fn plain_gradient_descent_without_momentum_or_decay() {
        let (mut store, grads) = quadratic(1.5);
        let mut opt = Sgd::new(&store, 0.0, 0.0);
        opt.step(&mut store, &grads, 0.1);
        assert_eq!(store.by_name("w").unwrap().data()[0], 1.5 - 0.1 * 3.0);
    }

    #[test]
    fn momentum_and_decay_follow_the_update_rule() {
        let (mut store, grads) = quadratic(1.0);
        let mut opt = Sgd::new(&store, 0.9, 0.1);
        opt.step(&mut store, &grads, 0.5);
        // v = 2 + 0.1 = 2.1, w = 1 - 1.05
        let w1 = store.by_name("w").unwrap().data()[0];
        assert!((w1 - (1.0 - 0.5 * 2.1)).abs() < 1e-15);
        opt.step(&mut store, &grads, 0.5);
        let v2 = 0.9 * 2.1 + (2.0 + 0.1 * w1);
        assert!((store.by_name("w").unwrap().data()[0] - (w1 - 0.5 * v2)).abs() < 1e-15);
    }
}
