//! Forward and reverse-mode passes over a stack of dense and activation layers.
//!
//! Every reduction runs in a fixed order: a dense output accumulates its
//! products sequentially over the input index and adds the bias last; weight
//! gradients accumulate sequentially over the batch; input gradients
//! sequentially over the output index. The inner loops run across independent
//! outputs, so vectorizing them never changes rounding.

use super::matrix::Matrix;
use super::params::{Activation, InitScheme, LayerSpec, ParamVector};
use super::rng::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    params: ParamVector,
}

/// Activations recorded by [`Network::forward_trace`]: `values[0]` is the input
/// and `values[k + 1]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct Trace {
    values: Vec<Matrix>,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        self.values.last().expect("trace holds at least the input")
    }
}

impl Network {
    pub fn new(params: ParamVector) -> Self {
        Self { params }
    }

    pub fn init(layers: &[LayerSpec], scheme: InitScheme, rng: &mut Rng) -> Result<Self> {
        Ok(Self::new(super::params::init_params_with(layers, scheme, rng)?))
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        self.params.specs()
    }

    pub fn in_dim(&self) -> usize {
        self.params.layout()[0].spec.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.params.layout().last().map_or(0, |e| e.spec.out_dim())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for i in 0..self.params.layout().len() {
            cur = self.layer_forward(i, &cur);
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &Matrix) -> Result<Trace> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.params.layout().len() + 1);
        values.push(x.clone());
        for i in 0..self.params.layout().len() {
            let next = self.layer_forward(i, values.last().unwrap());
            values.push(next);
        }
        Ok(Trace { values })
    }

    /// Gradients of `sum(upstream * forward(x))` with respect to the parameters
    /// and to `x`.
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<(ParamVector, Matrix)> {
        let trace = self.forward_trace(x)?;
        let (grads, input_grad) = self.backward_trace(&trace, upstream, true)?;
        Ok((grads, input_grad.expect("requested")))
    }

    /// Backward pass over a recorded trace. The input gradient is only formed
    /// when `want_input_grad` is set.
    pub fn backward_trace(
        &self,
        trace: &Trace,
        upstream: &Matrix,
        want_input_grad: bool,
    ) -> Result<(ParamVector, Option<Matrix>)> {
        let mut grads = self.params.zeros_like();
        let dx = self.reverse(trace, upstream, Some(&mut grads), want_input_grad)?;
        Ok((grads, dx))
    }

    /// Gradient with respect to the input only; no parameter gradients are formed.
    pub fn input_gradient(&self, trace: &Trace, upstream: &Matrix) -> Result<Matrix> {
        Ok(self
            .reverse(trace, upstream, None, true)?
            .expect("input gradient requested"))
    }

    fn reverse(
        &self,
        trace: &Trace,
        upstream: &Matrix,
        mut grads: Option<&mut ParamVector>,
        want_input_grad: bool,
    ) -> Result<Option<Matrix>> {
        let out = trace.output();
        if upstream.shape() != out.shape() {
            return Err(Error::shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        let mut g = upstream.clone();
        let n = self.params.layout().len();
        for i in (0..n).rev() {
            let need_dx = want_input_grad || i > 0;
            let input = &trace.values[i];
            let output = &trace.values[i + 1];
            g = match self.params.layout()[i].spec {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let (w, _) = self.params.dense_parts(i);
                    if let Some(grads) = grads.as_deref_mut() {
                        let (gw, gb) = grads.dense_parts_mut(i);
                        dense_param_grads(input, &g, gw, gb, in_dim, out_dim);
                    }
                    if need_dx {
                        dense_input_grad(&g, w, in_dim, out_dim)
                    } else {
                        Matrix::zeros(0, in_dim)
                    }
                }
                LayerSpec::Activation { activation, .. } => {
                    activation_backward(activation, input, output, &g)
                }
            };
        }
        Ok(want_input_grad.then_some(g))
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, i: usize, x: &Matrix) -> Matrix {
        match self.params.layout()[i].spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                let (w, b) = self.params.dense_parts(i);
                dense_forward(x, w, b, in_dim, out_dim)
            }
            LayerSpec::Activation { activation, .. } => {
                let mut y = x.clone();
                for v in y.as_mut_slice() {
                    *v = activate(activation, *v);
                }
                y
            }
        }
    }
}

fn dense_forward(x: &Matrix, w: &[f32], b: &[f32], in_dim: usize, out_dim: usize) -> Matrix {
    let mut y = Matrix::zeros(x.rows(), out_dim);
    // Each output accumulates over inputs in ascending order, then the bias.
    // Rows are processed in blocks so each weight row is loaded once per block.
    for (block, yb) in y.as_mut_slice().chunks_mut(ROW_BLOCK * out_dim).enumerate() {
        let r0 = block * ROW_BLOCK;
        let rows = yb.len() / out_dim.max(1);
        for i in 0..in_dim {
            let wr = &w[i * out_dim..(i + 1) * out_dim];
            for (k, yr) in yb.chunks_mut(out_dim).enumerate().take(rows) {
                let xv = x.get(r0 + k, i);
                for (acc, &wv) in yr.iter_mut().zip(wr) {
                    *acc += xv * wv;
                }
            }
        }
        for yr in yb.chunks_mut(out_dim) {
            for (acc, &bv) in yr.iter_mut().zip(b) {
                *acc += bv;
            }
        }
    }
    y
}

const ROW_BLOCK: usize = 8;

/// Accumulates over batch rows in ascending order for every entry.
fn dense_param_grads(
    x: &Matrix,
    gy: &Matrix,
    gw: &mut [f32],
    gb: &mut [f32],
    in_dim: usize,
    out_dim: usize,
) {
    for i in 0..in_dim {
        let gwr = &mut gw[i * out_dim..(i + 1) * out_dim];
        for r in 0..x.rows() {
            let xv = x.get(r, i);
            for (acc, &gv) in gwr.iter_mut().zip(gy.row(r)) {
                *acc += xv * gv;
            }
        }
    }
    for r in 0..gy.rows() {
        for (acc, &gv) in gb.iter_mut().zip(gy.row(r)) {
            *acc += gv;
        }
    }
}

fn dense_input_grad(gy: &Matrix, w: &[f32], in_dim: usize, out_dim: usize) -> Matrix {
    let mut gx = Matrix::zeros(gy.rows(), in_dim);
    for r in 0..gy.rows() {
        let gr = gy.row(r);
        let gxr = gx.row_mut(r);
        for (i, slot) in gxr.iter_mut().enumerate() {
            *slot = dot(gr, &w[i * out_dim..(i + 1) * out_dim]);
        }
    }
    gx
}

/// Dot product with a fixed order: eight running partial sums over
/// `a[k], a[k + 8], ...`, combined pairwise, then the tail added in order.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (at, bt) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for k in 0..8 {
            lanes[k] += x[k] * y[k];
        }
    }
    let mut acc = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5]))
        + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
    for (&x, &y) in at.iter().zip(bt) {
        acc += x * y;
    }
    acc
}

pub(crate) fn activate(a: Activation, v: f32) -> f32 {
    match a {
        Activation::Identity => v,
        Activation::Relu => v.max(0.0),
        Activation::LeakyRelu(alpha) => {
            if v > 0.0 {
                v
            } else {
                alpha * v
            }
        }
        Activation::Tanh => v.tanh(),
        Activation::Sigmoid => sigmoid(v),
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn activation_backward(a: Activation, input: &Matrix, output: &Matrix, g: &Matrix) -> Matrix {
    let mut dx = g.clone();
    let xs = input.as_slice();
    let ys = output.as_slice();
    for (k, d) in dx.as_mut_slice().iter_mut().enumerate() {
        let local = match a {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if xs[k] > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(alpha) => {
                if xs[k] > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Tanh => 1.0 - ys[k] * ys[k],
            Activation::Sigmoid => ys[k] * (1.0 - ys[k]),
        };
        *d *= local;
    }
    dx
}
