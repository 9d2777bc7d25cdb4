//! Upper bounds on the Lipschitz constant of the layer chain
//! `T_M ... T_1` (the residual skip, if any, is not included).
//!
//! Three bounds, from loosest to tightest:
//!
//! * [`lipschitz_bound_product`]: `prod_m ||W_m||`;
//! * [`lipschitz_bound_enum`]: for averaged separable activations, the max
//!   of `||W_M L_{M-1} ... L_1 W_1||` over diagonal `L_m` with entries in
//!   `{1 - 2 alpha_m, 1}`;
//! * [`lipschitz_bound_nonneg`]: `||W_M ... W_1||` when every weight is
//!   nonnegative.

use nalgebra::DMatrix;

use super::{LayerKind, Network};
use crate::error::{arg_err, Error, Result};
use crate::linear::{op_norm, LinearMap};
use crate::mmo;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Largest number of enumerated activation entries.
pub const ENUM_WIDTH_LIMIT: usize = 20;

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Shapes of the inputs of every layer, plus the final output shape.
fn layer_shapes(net: &Network, input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input_shape.to_vec()];
    for l in net.layers() {
        let next = l.output_shape(shapes.last().unwrap())?;
        shapes.push(next);
    }
    Ok(shapes)
}

/// Product of the layer operator norms. Dense norms come from an SVD,
/// convolution norms from the per-frequency block symbols.
pub fn lipschitz_bound_product(net: &Network, input_shape: &[usize]) -> Result<f64> {
    let shapes = layer_shapes(net, input_shape)?;
    let mut bound = 1.0;
    for (l, shape) in net.layers().iter().zip(&shapes) {
        bound *= match l.operator(shape)? {
            LinearMap::Dense(d) => spectral_norm(&d.matrix),
            LinearMap::ConvBank(b) => b.exact_norm(),
            _ => unreachable!("layer operators are dense or conv banks"),
        };
    }
    Ok(bound)
}

/// Bound by enumeration of the activation slope patterns. Needs dense
/// layers with separable activations on all but the last layer and at
/// most [`ENUM_WIDTH_LIMIT`] hidden entries with nonzero averagedness.
pub fn lipschitz_bound_enum(net: &Network) -> Result<f64> {
    let layers = net.layers();
    let mut mats = Vec::with_capacity(layers.len());
    for (m, l) in layers.iter().enumerate() {
        let LayerKind::Dense { out, inp } = l.kind else {
            return Err(Error::Precondition(format!(
                "layer {m} is convolutional; enumeration needs dense layers"
            )));
        };
        mats.push(DMatrix::from_row_slice(out, inp, &l.weight));
    }
    // (layer, unit) entries whose diagonal factor can be 1 - 2 alpha
    let mut free = Vec::new();
    for (m, l) in layers[..layers.len() - 1].iter().enumerate() {
        if !l.activation.is_separable() {
            return Err(Error::Precondition(format!("layer {m} activation is not separable")));
        }
        if l.activation.averagedness > 0.0 {
            let LayerKind::Dense { out, .. } = l.kind else { unreachable!() };
            free.extend((0..out).map(|i| (m, i, 1.0 - 2.0 * l.activation.averagedness)));
        }
    }
    if free.len() > ENUM_WIDTH_LIMIT {
        return Err(Error::Refused(format!(
            "{} hidden entries exceed the enumeration limit {ENUM_WIDTH_LIMIT}",
            free.len()
        )));
    }
    let mut best: f64 = 0.0;
    for mask in 0u64..(1u64 << free.len()) {
        let mut diags: Vec<Vec<f64>> = mats.iter().map(|w| vec![1.0; w.nrows()]).collect();
        for (bit, &(m, i, low)) in free.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                diags[m][i] = low;
            }
        }
        let mut prod = mats[0].clone();
        for m in 1..mats.len() {
            for (i, d) in diags[m - 1].iter().enumerate() {
                prod.row_mut(i).scale_mut(*d);
            }
            prod = &mats[m] * prod;
        }
        best = best.max(spectral_norm(&prod));
    }
    Ok(best)
}

/// `||W_M ... W_1||` for networks with nonnegative weights and separable
/// averaged activations, by power iteration on the composed operator.
pub fn lipschitz_bound_nonneg(net: &Network, input_shape: &[usize]) -> Result<f64> {
    let shapes = layer_shapes(net, input_shape)?;
    for (m, l) in net.layers().iter().enumerate() {
        if let Some(v) = l.weight.iter().find(|v| **v < 0.0) {
            return Err(Error::Precondition(format!(
                "layer {m} has a negative weight ({v})"
            )));
        }
        if !l.activation.is_separable() {
            return Err(Error::Precondition(format!("layer {m} activation is not separable")));
        }
    }
    let ops = net
        .layers()
        .iter()
        .zip(&shapes)
        .map(|(l, s)| l.operator(s))
        .collect::<Result<Vec<_>>>()?;
    let chain = LinearMap::Composition(ops);
    op_norm(&chain, 2000, &mut Rng::new(0x0b0d))
}

/// Largest `||Q(x) - Q(y)|| / ||x - y||` over random pairs in the box
/// `[-half_width, half_width]^n`, where `Q` is the layer chain.
pub fn sampled_lipschitz(
    net: &Network,
    input_shape: &[usize],
    rng: &mut Rng,
    pairs: usize,
    half_width: f64,
) -> Result<f64> {
    if pairs == 0 {
        return Err(arg_err!("need at least one pair"));
    }
    let chain = net.without_residual();
    chain.forward(&Tensor::zeros(input_shape))?;
    Ok(mmo::sample_lipschitz(
        &|x: &Tensor| chain.forward(x).expect("shape checked"),
        input_shape,
        rng,
        pairs,
        half_width,
    ))
}
