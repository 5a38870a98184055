//! Central finite-difference verification of tape gradients.
//!
//! The scalar under test is the sum of every output of the block. Each
//! input element and each parameter is nudged by `±ε` and the symmetric
//! difference quotient is compared with the analytic gradient.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{derived_rng, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Something with a forward pass on the gradient tape.
pub trait DifferentiableBlock {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn forward(&self, g: &mut Graph, inputs: &[Var]) -> Result<Vec<Var>>;
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Relative error is `|analytic − numeric| / max(|numeric|, floor)`.
    pub floor: f64,
    /// Check at most this many scalars (sampled without replacement);
    /// `None` checks every input and parameter element.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            floor: 1e-3,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Input { index: usize, element: usize },
    Param { id: ParamId, element: usize },
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst: Option<Location>,
    pub checked: usize,
}

/// Checks a block on seeded standard-normal inputs of the given shapes and
/// returns the maximum relative error.
pub fn grad_check(block: &mut dyn DifferentiableBlock, input_shapes: &[Vec<usize>], epsilon: f64, seed: u64) -> Result<f64> {
    let opts = GradCheckOptions {
        epsilon,
        seed,
        ..Default::default()
    };
    Ok(grad_check_with(block, input_shapes, &opts)?.max_relative_error)
}

pub fn grad_check_with(
    block: &mut dyn DifferentiableBlock,
    input_shapes: &[Vec<usize>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&opts.epsilon) {
        return Err(Error::ConfigInvalid(format!("epsilon {} outside [1e-6, 1e-3]", opts.epsilon)));
    }
    let mut rng = derived_rng(opts.seed, "gradcheck.inputs");
    let inputs: Vec<Tensor> = input_shapes
        .iter()
        .map(|shape| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor::from_vec(shape.clone(), data)
        })
        .collect::<Result<_>>()?;
    grad_check_inputs(block, &inputs, opts)
}

/// Like [`grad_check_with`] with caller-supplied input values.
pub fn grad_check_inputs(block: &mut dyn DifferentiableBlock, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (input_grads, param_grads) = analytic(block, inputs)?;

    let mut locations = Vec::new();
    for (index, t) in inputs.iter().enumerate() {
        locations.extend((0..t.numel()).map(|element| Location::Input { index, element }));
    }
    for id in block.params().ids() {
        locations.extend((0..block.params().get(id).numel()).map(|element| Location::Param { id, element }));
    }
    if let Some(cap) = opts.max_entries {
        if cap < locations.len() {
            let mut rng = derived_rng(opts.seed, "gradcheck.sample");
            let mut picked: Vec<usize> = sample(&mut rng, locations.len(), cap).into_vec();
            picked.sort_unstable();
            locations = picked.into_iter().map(|i| locations[i]).collect();
        }
    }

    let mut inputs = inputs.to_vec();
    let mut worst = None;
    let mut max_err = 0.0f64;
    for &loc in &locations {
        let analytic_value = match loc {
            Location::Input { index, element } => input_grads[index].data()[element],
            Location::Param { id, element } => param_grads[id.index()].data()[element],
        };
        let numeric = central_difference(block, &mut inputs, loc, opts.epsilon)?;
        if !analytic_value.is_finite() || !numeric.is_finite() {
            return Err(Error::NonFiniteGradient(format!("{loc:?}")));
        }
        let err = (analytic_value - numeric).abs() / numeric.abs().max(opts.floor);
        if err > max_err || worst.is_none() {
            max_err = max_err.max(err);
            worst = Some(loc);
        }
    }
    Ok(GradCheckReport {
        max_relative_error: max_err,
        worst,
        checked: locations.len(),
    })
}

fn scalar_output(block: &dyn DifferentiableBlock, g: &mut Graph, inputs: &[Tensor]) -> Result<(Vec<Var>, Var)> {
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let outs = block.forward(g, &vars)?;
    let mut total = None;
    for o in outs {
        let s = g.sum(o);
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    let total = total.ok_or_else(|| Error::ShapeMismatch("block produced no outputs".into()))?;
    Ok((vars, total))
}

fn evaluate(block: &dyn DifferentiableBlock, inputs: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let (_, total) = scalar_output(block, &mut g, inputs)?;
    Ok(g.value(total).data()[0])
}

fn analytic(block: &dyn DifferentiableBlock, inputs: &[Tensor]) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let mut g = Graph::new();
    let (vars, total) = scalar_output(block, &mut g, inputs)?;
    g.backward(total)?;
    let input_grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let pg = g.param_grads(block.params());
    let param_grads = block
        .params()
        .ids()
        .map(|id| pg.get(id).cloned().unwrap_or_else(|| Tensor::zeros(block.params().get(id).shape())))
        .collect();
    Ok((input_grads, param_grads))
}

fn central_difference(block: &mut dyn DifferentiableBlock, inputs: &mut [Tensor], loc: Location, eps: f64) -> Result<f64> {
    let original = read(block, inputs, loc);
    write(block, inputs, loc, original + eps);
    let plus = evaluate(block, inputs);
    write(block, inputs, loc, original - eps);
    let minus = evaluate(block, inputs);
    write(block, inputs, loc, original);
    Ok((plus? - minus?) / (2.0 * eps))
}

fn read(block: &dyn DifferentiableBlock, inputs: &[Tensor], loc: Location) -> f64 {
    match loc {
        Location::Input { index, element } => inputs[index].data()[element],
        Location::Param { id, element } => block.params().get(id).data()[element],
    }
}

fn write(block: &mut dyn DifferentiableBlock, inputs: &mut [Tensor], loc: Location, v: f64) {
    match loc {
        Location::Input { index, element } => inputs[index].data_mut()[element] = v,
        Location::Param { id, element } => block.params_mut().get_mut(id).data_mut()[element] = v,
    }
}
