//! Feedforward networks `Q = T_M ... T_1` with `T_m(x) = R_m(W_m x + b_m)`,
//! optionally wrapped in a residual skip (`x + Q(x)`).
//!
//! Differentiation is hand written. A forward pass records a [`Trace`]: the
//! input of every layer plus the local linear behaviour of each activation
//! (a diagonal slope vector or a pairwise swap pattern). All activations
//! offered here are piecewise linear, so the trace captures the Jacobian
//! exactly and both modes reuse it:
//!
//! * forward mode (`jvp`) pushes a tangent through `W_m` and the recorded
//!   activation slopes;
//! * reverse mode (`vjp`) pulls a cotangent back through the transposes and
//!   accumulates parameter gradients on the way.

pub mod bounds;
pub mod checkpoint;
pub mod spectral;

use crate::conv::{self, BankShape};
use crate::error::{arg_err, dim_err, Result};
use crate::linear::{ConvBank, LinearMap};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use spectral::{
    dense_jacobian, jacobian_spectral_norm, penalty_grad, JacobianProbe, PenaltyGrad, QForm, QMap,
};

/// Default leaky-rectifier slope.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Identity,
    /// `t` for `t >= 0`, `slope * t` otherwise.
    LeakyRelu { slope: f64 },
    /// Ascending sort inside consecutive disjoint pairs; a trailing odd
    /// entry passes through.
    SortPairs,
}

/// Activation operator together with its averagedness constant `alpha`
/// (`R = (1 - alpha) Id + alpha N` with `N` nonexpansive).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    pub averagedness: f64,
}

impl ActivationSpec {
    pub fn identity() -> Self {
        Self {
            kind: ActivationKind::Identity,
            averagedness: 0.0,
        }
    }

    /// Leaky rectifier, 1/2-averaged.
    pub fn leaky_relu(slope: f64) -> Self {
        Self {
            kind: ActivationKind::LeakyRelu { slope },
            averagedness: 0.5,
        }
    }

    pub fn sort_pairs() -> Self {
        Self {
            kind: ActivationKind::SortPairs,
            averagedness: 1.0,
        }
    }

    /// Acts coordinatewise.
    pub fn is_separable(&self) -> bool {
        !matches!(self.kind, ActivationKind::SortPairs)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.averagedness) {
            return Err(arg_err!("averagedness {} not in [0, 1]", self.averagedness));
        }
        if let ActivationKind::LeakyRelu { slope } = self.kind {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(arg_err!("leaky slope {slope} not in (0, 1)"));
            }
        }
        Ok(())
    }

    /// Applies the activation in place and returns its local linear pattern.
    fn apply(&self, z: &mut [f64]) -> Pattern {
        match self.kind {
            ActivationKind::Identity => Pattern::Identity,
            ActivationKind::LeakyRelu { slope } => {
                let mut d = Vec::with_capacity(z.len());
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v *= slope;
                        d.push(slope);
                    } else {
                        d.push(1.0);
                    }
                }
                Pattern::Diagonal(d)
            }
            ActivationKind::SortPairs => {
                let mut swaps = Vec::with_capacity(z.len() / 2);
                for pair in z.chunks_exact_mut(2) {
                    let swap = pair[0] > pair[1];
                    if swap {
                        pair.swap(0, 1);
                    }
                    swaps.push(swap);
                }
                Pattern::Swaps(swaps)
            }
        }
    }
}

/// Local linear behaviour of an activation at a point. Diagonals and pair
/// swaps are symmetric, so the same routine serves forward and adjoint.
#[derive(Clone, Debug)]
enum Pattern {
    Identity,
    Diagonal(Vec<f64>),
    Swaps(Vec<bool>),
}

impl Pattern {
    fn apply(&self, v: &mut [f64]) {
        match self {
            Pattern::Identity => {}
            Pattern::Diagonal(d) => v.iter_mut().zip(d).for_each(|(a, s)| *a *= s),
            Pattern::Swaps(sw) => {
                for (pair, &s) in v.chunks_exact_mut(2).zip(sw) {
                    if s {
                        pair.swap(0, 1);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// `out x inp` matrix acting on flat vectors.
    Dense { out: usize, inp: usize },
    /// `cout x cin x k x k` circular convolution bank, `k` odd.
    Conv { cout: usize, cin: usize, k: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    /// Row-major weights (`[out][inp]` or `[cout][cin][k][k]`).
    pub weight: Vec<f64>,
    /// One entry per output unit (dense) or output channel (conv).
    pub bias: Vec<f64>,
    pub activation: ActivationSpec,
}

impl Layer {
    pub fn dense(out: usize, inp: usize, weight: Vec<f64>, bias: Vec<f64>, activation: ActivationSpec) -> Result<Self> {
        let l = Self {
            kind: LayerKind::Dense { out, inp },
            weight,
            bias,
            activation,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn conv(cout: usize, cin: usize, k: usize, weight: Vec<f64>, bias: Vec<f64>, activation: ActivationSpec) -> Result<Self> {
        let l = Self {
            kind: LayerKind::Conv { cout, cin, k },
            weight,
            bias,
            activation,
        };
        l.validate()?;
        Ok(l)
    }

    /// He-style Gaussian initialization (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn init(kind: LayerKind, activation: ActivationSpec, rng: &mut Rng) -> Result<Self> {
        let (n, fan_in, nb) = match kind {
            LayerKind::Dense { out, inp } => (out * inp, inp, out),
            LayerKind::Conv { cout, cin, k } => (cout * cin * k * k, cin * k * k, cout),
        };
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = rng.normal_vec(n).into_iter().map(|v| v * std).collect();
        let l = Self {
            kind,
            weight,
            bias: vec![0.0; nb],
            activation,
        };
        l.validate()?;
        Ok(l)
    }

    fn validate(&self) -> Result<()> {
        self.activation.validate()?;
        let (nw, nb) = match self.kind {
            LayerKind::Dense { out, inp } => {
                if out == 0 || inp == 0 {
                    return Err(dim_err!("dense layer with zero extent"));
                }
                (out * inp, out)
            }
            LayerKind::Conv { cout, cin, k } => {
                if k % 2 == 0 || cout == 0 || cin == 0 {
                    return Err(dim_err!("conv layer needs odd kernel and nonzero channels"));
                }
                (cout * cin * k * k, cout)
            }
        };
        if self.weight.len() != nw {
            return Err(dim_err!("layer expects {nw} weights, got {}", self.weight.len()));
        }
        if self.bias.len() != nb {
            return Err(dim_err!("layer expects {nb} biases, got {}", self.bias.len()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn input_units(&self) -> usize {
        match self.kind {
            LayerKind::Dense { inp, .. } => inp,
            LayerKind::Conv { cin, .. } => cin,
        }
    }

    fn output_units(&self) -> usize {
        match self.kind {
            LayerKind::Dense { out, .. } => out,
            LayerKind::Conv { cout, .. } => cout,
        }
    }

    fn bank(&self, h: usize, w: usize) -> BankShape {
        match self.kind {
            LayerKind::Conv { cout, cin, k } => BankShape { cout, cin, k, h, w },
            LayerKind::Dense { .. } => unreachable!("bank of a dense layer"),
        }
    }

    /// Output shape for a given input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let t = Tensor::zeros(input);
        match self.kind {
            LayerKind::Dense { out, inp } => {
                if t.len() != inp {
                    return Err(dim_err!("dense layer expects {inp} inputs, got {input:?}"));
                }
                Ok(vec![out])
            }
            LayerKind::Conv { cout, cin, k } => {
                let (c, h, w) = t.dims3();
                if c != cin || input.len() != 3 {
                    return Err(dim_err!("conv layer expects ({cin}, h, w), got {input:?}"));
                }
                if k > h || k > w {
                    return Err(dim_err!("{k}x{k} kernel on a {h}x{w} image"));
                }
                Ok(vec![cout, h, w])
            }
        }
    }

    /// `W x` (no bias).
    fn linear(&self, x: &Tensor) -> Tensor {
        match self.kind {
            LayerKind::Dense { out, inp } => {
                let xs = x.data();
                let y = (0..out)
                    .map(|o| {
                        self.weight[o * inp..(o + 1) * inp]
                            .iter()
                            .zip(xs)
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect();
                Tensor::from_vec(y)
            }
            LayerKind::Conv { cout, .. } => {
                let (_, h, w) = x.dims3();
                let mut y = Tensor::zeros(&[cout, h, w]);
                conv::bank_forward(self.bank(h, w), &self.weight, x.data(), y.data_mut());
                y
            }
        }
    }

    /// `W^T g`, shaped like `input_shape`.
    fn linear_adjoint(&self, g: &Tensor, input_shape: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(input_shape);
        match self.kind {
            LayerKind::Dense { out: no, inp } => {
                let o = out.data_mut();
                for (r, gv) in g.data().iter().enumerate().take(no) {
                    for (oi, wv) in o.iter_mut().zip(&self.weight[r * inp..(r + 1) * inp]) {
                        *oi += wv * gv;
                    }
                }
            }
            LayerKind::Conv { .. } => {
                let (_, h, w) = g.dims3();
                conv::bank_adjoint(self.bank(h, w), &self.weight, g.data(), out.data_mut());
            }
        }
        out
    }

    /// Accumulates the gradient of `<g, W x>` with respect to `W` into
    /// `grad_w`.
    fn weight_grad(&self, x: &Tensor, g: &Tensor, grad_w: &mut [f64]) {
        match self.kind {
            LayerKind::Dense { out, inp } => {
                let xs = x.data();
                for (r, gv) in g.data().iter().enumerate().take(out) {
                    for (gw, xv) in grad_w[r * inp..(r + 1) * inp].iter_mut().zip(xs) {
                        *gw += gv * xv;
                    }
                }
            }
            LayerKind::Conv { .. } => {
                let (_, h, w) = g.dims3();
                conv::bank_weight_grad(self.bank(h, w), x.data(), g.data(), grad_w);
            }
        }
    }

    fn add_bias(&self, z: &mut Tensor) {
        let per = z.len() / self.bias.len();
        for (chunk, b) in z.data_mut().chunks_exact_mut(per).zip(&self.bias) {
            chunk.iter_mut().for_each(|v| *v += b);
        }
    }

    fn bias_grad(&self, g: &Tensor, grad_b: &mut [f64]) {
        let per = g.len() / self.bias.len();
        for (chunk, gb) in g.data().chunks_exact(per).zip(grad_b.iter_mut()) {
            *gb += chunk.iter().sum::<f64>();
        }
    }

    /// The weight operator `W` as a [`LinearMap`] on inputs of `input_shape`.
    pub fn operator(&self, input_shape: &[usize]) -> Result<LinearMap> {
        self.output_shape(input_shape)?;
        Ok(match self.kind {
            LayerKind::Dense { out, inp } => {
                LinearMap::dense(nalgebra::DMatrix::from_row_slice(out, inp, &self.weight))
            }
            LayerKind::Conv { .. } => {
                let (_, h, w) = Tensor::zeros(input_shape).dims3();
                LinearMap::ConvBank(std::sync::Arc::new(ConvBank::new(
                    self.bank(h, w),
                    self.weight.clone(),
                )?))
            }
        })
    }
}

/// A layered feedforward model. With `residual` set the network computes
/// `x + chain(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    residual: bool,
}

/// Record of a forward pass: the input of every layer and the activation
/// patterns, enough to apply the Jacobian and its transpose.
#[derive(Clone, Debug)]
pub struct Trace {
    inputs: Vec<Tensor>,
    patterns: Vec<Pattern>,
    output: Tensor,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn input(&self) -> &Tensor {
        &self.inputs[0]
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>, residual: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(arg_err!("network needs at least one layer"));
        }
        for l in &layers {
            l.validate()?;
        }
        for (m, pair) in layers.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            let ok = match (a.kind, b.kind) {
                (LayerKind::Dense { out, .. }, LayerKind::Dense { inp, .. }) => out == inp,
                (LayerKind::Conv { cout, .. }, LayerKind::Conv { cin, .. }) => cout == cin,
                // dense after conv depends on the spatial size; checked at run time
                (LayerKind::Conv { .. }, LayerKind::Dense { .. }) => true,
                (LayerKind::Dense { .. }, LayerKind::Conv { .. }) => false,
            };
            if !ok {
                return Err(dim_err!("layers {m} and {} do not chain", m + 1));
            }
        }
        let net = Self { layers, residual };
        if residual {
            let first = &net.layers[0];
            let last = &net.layers[net.layers.len() - 1];
            let same = match (first.kind, last.kind) {
                (LayerKind::Dense { inp, .. }, LayerKind::Dense { out, .. }) => inp == out,
                (LayerKind::Conv { cin, .. }, LayerKind::Conv { cout, .. }) => cin == cout,
                _ => false,
            };
            if !same {
                return Err(dim_err!("residual network must map a space to itself"));
            }
        }
        Ok(net)
    }

    /// Residual convolutional denoiser: `depth` 3x3 circular convolutions,
    /// `hidden` channels, leaky rectifiers on hidden layers, linear last
    /// layer.
    pub fn conv_denoiser(
        channels: usize,
        hidden: usize,
        depth: usize,
        slope: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if depth < 2 {
            return Err(arg_err!("conv_denoiser needs depth >= 2"));
        }
        let mut layers = Vec::with_capacity(depth);
        for m in 0..depth {
            let cin = if m == 0 { channels } else { hidden };
            let (cout, act) = if m + 1 == depth {
                (channels, ActivationSpec::identity())
            } else {
                (hidden, ActivationSpec::leaky_relu(slope))
            };
            layers.push(Layer::init(LayerKind::Conv { cout, cin, k: 3 }, act, rng)?);
        }
        Self::new(layers, true)
    }

    /// Dense network with the given widths; `hidden_act` on every layer
    /// but the last, which is linear.
    pub fn mlp(widths: &[usize], hidden_act: ActivationSpec, residual: bool, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(arg_err!("mlp needs at least two widths"));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(m, w)| {
                let act = if m + 2 == widths.len() {
                    ActivationSpec::identity()
                } else {
                    hidden_act
                };
                Layer::init(LayerKind::Dense { out: w[1], inp: w[0] }, act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, residual)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    /// Same layers without the skip connection.
    pub fn without_residual(&self) -> Network {
        Network {
            layers: self.layers.clone(),
            residual: false,
        }
    }

    pub fn channels_in(&self) -> usize {
        self.layers[0].input_units()
    }

    pub fn channels_out(&self) -> usize {
        self.layers[self.layers.len() - 1].output_units()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weight);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(dim_err!(
                "network has {} parameters, got {}",
                self.num_params(),
                params.len()
            ));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Network> {
        let mut n = self.clone();
        n.set_params(params)?;
        Ok(n)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let mut shape = x.shape().to_vec();
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
        }
        if self.residual && shape.iter().product::<usize>() != x.len() {
            return Err(dim_err!("residual output {shape:?} does not match input"));
        }
        Ok(())
    }

    /// Output shape for an input of shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if self.residual {
            self.check_input(&Tensor::zeros(input))?;
            return Ok(input.to_vec());
        }
        let mut shape = input.to_vec();
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            let mut z = l.linear(&h);
            l.add_bias(&mut z);
            l.activation.apply(z.data_mut());
            h = z;
        }
        if self.residual {
            let mut out = x.clone();
            out += &h;
            Ok(out)
        } else {
            Ok(h)
        }
    }

    /// Forward pass recording the linearization.
    pub fn trace(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut patterns = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let mut z = l.linear(&h);
            l.add_bias(&mut z);
            patterns.push(l.activation.apply(z.data_mut()));
            inputs.push(std::mem::replace(&mut h, z));
        }
        let output = if self.residual {
            let mut out = x.clone();
            out += &h;
            out
        } else {
            h
        };
        Ok(Trace {
            inputs,
            patterns,
            output,
        })
    }

    /// Tangents at the input of every layer plus the output tangent of the
    /// chain (without the residual term).
    fn push_tangent(&self, trace: &Trace, v: &Tensor) -> (Vec<Tensor>, Tensor) {
        let mut tangents = Vec::with_capacity(self.layers.len());
        let mut t = v.clone();
        for (l, p) in self.layers.iter().zip(&trace.patterns) {
            let mut z = l.linear(&t);
            p.apply(z.data_mut());
            tangents.push(std::mem::replace(&mut t, z));
        }
        (tangents, t)
    }

    /// Pulls `cot` back through the linearized chain. `layer_inputs` are the
    /// vectors the weights multiply (primal activations for ordinary
    /// gradients, tangents for the Jacobian-penalty gradient). Returns the
    /// parameter gradient (if requested) and the chain input gradient.
    fn pull_back(
        &self,
        trace: &Trace,
        layer_inputs: &[Tensor],
        cot: &Tensor,
        want_params: bool,
        with_bias: bool,
    ) -> (Option<Vec<f64>>, Tensor) {
        let mut grad = want_params.then(|| vec![0.0; self.num_params()]);
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |off, l| {
                let o = *off;
                *off += l.num_params();
                Some(o)
            })
            .collect();
        let mut g = cot.clone();
        for m in (0..self.layers.len()).rev() {
            let l = &self.layers[m];
            trace.patterns[m].apply(g.data_mut());
            if let Some(grad) = grad.as_mut() {
                let off = offsets[m];
                let nw = l.weight.len();
                l.weight_grad(&layer_inputs[m], &g, &mut grad[off..off + nw]);
                if with_bias {
                    l.bias_grad(&g, &mut grad[off + nw..off + l.num_params()]);
                }
            }
            g = l.linear_adjoint(&g, trace.inputs[m].shape());
        }
        (grad, g)
    }

    /// Reverse mode: returns `u^T d(out)/d(theta)` and `u^T d(out)/dx`.
    pub fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<(Tensor, Tensor)> {
        let trace = self.trace(x)?;
        self.vjp_traced(&trace, cotangent)
    }

    pub fn vjp_traced(&self, trace: &Trace, cotangent: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_cotangent(trace, cotangent)?;
        let (grad, mut gin) = self.pull_back(trace, &trace.inputs, cotangent, true, true);
        self.finish_input_grad(trace, cotangent, &mut gin);
        Ok((Tensor::from_vec(grad.unwrap()), gin))
    }

    /// Input part of the reverse mode only.
    pub fn vjp_input_traced(&self, trace: &Trace, cotangent: &Tensor) -> Result<Tensor> {
        self.check_cotangent(trace, cotangent)?;
        let (_, mut gin) = self.pull_back(trace, &trace.inputs, cotangent, false, false);
        self.finish_input_grad(trace, cotangent, &mut gin);
        Ok(gin)
    }

    fn check_cotangent(&self, trace: &Trace, cot: &Tensor) -> Result<()> {
        if cot.shape() != trace.output.shape() {
            return Err(dim_err!(
                "cotangent {:?} does not match output {:?}",
                cot.shape(),
                trace.output.shape()
            ));
        }
        Ok(())
    }

    fn finish_input_grad(&self, trace: &Trace, cot: &Tensor, gin: &mut Tensor) {
        if self.residual {
            gin.axpy(1.0, cot);
        }
        *gin = gin.clone().reshape(trace.inputs[0].shape()).expect("same size");
    }

    /// Forward mode: `d(out)/dx * tangent`.
    pub fn jvp(&self, x: &Tensor, tangent: &Tensor) -> Result<Tensor> {
        let trace = self.trace(x)?;
        self.jvp_traced(&trace, tangent)
    }

    pub fn jvp_traced(&self, trace: &Trace, tangent: &Tensor) -> Result<Tensor> {
        if tangent.shape() != trace.inputs[0].shape() {
            return Err(dim_err!(
                "tangent {:?} does not match input {:?}",
                tangent.shape(),
                trace.inputs[0].shape()
            ));
        }
        let (_, mut out) = self.push_tangent(trace, tangent);
        if self.residual {
            out = out.reshape(tangent.shape()).expect("same size");
            out += tangent;
        }
        Ok(out)
    }

    /// Gradient with respect to the parameters of `<c, J(x) v>`, where
    /// `J(x)` is the input Jacobian at the traced point, for fixed `v`
    /// and `c`. Biases only move the activation patterns, which are locally
    /// constant, so their entries are zero.
    pub fn jacobian_param_grad(&self, trace: &Trace, v: &Tensor, c: &Tensor) -> Result<Tensor> {
        if v.shape() != trace.inputs[0].shape() {
            return Err(dim_err!("direction does not match input shape"));
        }
        self.check_cotangent(trace, c)?;
        let (tangents, _) = self.push_tangent(trace, v);
        let (grad, _) = self.pull_back(trace, &tangents, c, true, false);
        Ok(Tensor::from_vec(grad.unwrap()))
    }

    /// Wraps the network as the resolvent it models.
    pub fn into_resolvent(self, shape: &[usize]) -> Result<crate::mmo::Resolvent> {
        self.check_input(&Tensor::zeros(shape))?;
        Ok(crate::mmo::Resolvent::new(
            shape,
            crate::mmo::Provenance::Network,
            move |x| self.forward(x).expect("shape checked at construction"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn scalar_affine(w: f64, b: f64, residual: bool) -> Network {
        Network::new(
            vec![Layer::dense(1, 1, vec![w], vec![b], ActivationSpec::identity()).unwrap()],
            residual,
        )
        .unwrap()
    }

    #[test]
    fn affine_arithmetic() {
        let net = scalar_affine(2.0, 1.0, false);
        let y = net.forward(&Tensor::from_vec(vec![3.0])).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn zero_residual_net_is_identity() {
        let mut rng = Rng::new(1);
        let mut net = Network::conv_denoiser(2, 4, 3, 0.2, &mut rng).unwrap();
        let zeros = vec![0.0; net.num_params()];
        net.set_params(&zeros).unwrap();
        let x = Tensor::randn(&[2, 5, 6], &mut rng);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn sort_pairs_ascending() {
        let net = Network::new(
            vec![Layer::dense(
                4,
                4,
                nalgebra::DMatrix::<f64>::identity(4, 4).as_slice().to_vec(),
                vec![0.0; 4],
                ActivationSpec::sort_pairs(),
            )
            .unwrap()],
            false,
        )
        .unwrap();
        let y = net.forward(&Tensor::from_vec(vec![3.0, -1.0, 0.0, 5.0])).unwrap();
        assert_eq!(y.data(), &[-1.0, 3.0, 0.0, 5.0]);
    }

    #[test]
    fn leaky_tangent_scaling() {
        let net = Network::new(
            vec![Layer::dense(1, 1, vec![1.0], vec![0.0], ActivationSpec::leaky_relu(0.3)).unwrap()],
            false,
        )
        .unwrap();
        let x = Tensor::from_vec(vec![-2.0]);
        let t = net.jvp(&x, &Tensor::from_vec(vec![1.5])).unwrap();
        assert!((t.data()[0] - 0.45).abs() < 1e-15);
        let t = net.jvp(&Tensor::from_vec(vec![2.0]), &Tensor::from_vec(vec![1.5])).unwrap();
        assert_eq!(t.data(), &[1.5]);
    }

    #[test]
    fn identity_network_derivatives() {
        let net = scalar_affine(0.0, 0.0, true);
        let x = Tensor::from_vec(vec![0.7]);
        let u = Tensor::from_vec(vec![-1.3]);
        assert_eq!(net.jvp(&x, &u).unwrap(), u);
        assert_eq!(net.vjp(&x, &u).unwrap().1, u);
    }

    #[test]
    fn dense_input_gradient_is_transpose() {
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let net = Network::new(
            vec![Layer::dense(2, 3, w, vec![0.5, -0.5], ActivationSpec::identity()).unwrap()],
            false,
        )
        .unwrap();
        let x = Tensor::from_vec(vec![0.1, 0.2, 0.3]);
        let (_, gin) = net.vjp(&x, &Tensor::from_vec(vec![1.0, -2.0])).unwrap();
        assert_eq!(gin.data(), &[1.0 - 8.0, 2.0 - 10.0, 3.0 - 12.0]);
    }

    #[test]
    fn shape_errors() {
        let mut rng = Rng::new(2);
        let net = Network::conv_denoiser(1, 4, 3, 0.2, &mut rng).unwrap();
        assert!(matches!(net.forward(&Tensor::zeros(&[2, 4, 4])), Err(Error::Dimension(_))));
        let x = Tensor::zeros(&[1, 4, 4]);
        assert!(net.vjp(&x, &Tensor::zeros(&[1, 4, 5])).is_err());
        assert!(net.jvp(&x, &Tensor::zeros(&[16])).is_err());
        let bad = Layer::init(LayerKind::Conv { cout: 2, cin: 1, k: 3 }, ActivationSpec::identity(), &mut rng).unwrap();
        assert!(Network::new(vec![bad], true).is_err());
        assert!(Layer::conv(1, 1, 2, vec![0.0; 4], vec![0.0], ActivationSpec::identity()).is_err());
        assert!(Layer::dense(1, 1, vec![0.0], vec![0.0], ActivationSpec::leaky_relu(1.5)).is_err());
    }

    #[test]
    fn params_roundtrip_bit_exact() {
        let mut rng = Rng::new(3);
        let net = Network::conv_denoiser(1, 3, 3, 0.2, &mut rng).unwrap();
        let p = net.params();
        let back = net.with_params(&p).unwrap();
        assert_eq!(back, net);
        assert!(net.with_params(&p[1..]).is_err());
    }
}
