#![allow(dead_code)]

use monotone_pnp::net::{ActivationSpec, Layer, LayerKind, Network, QMap};
use monotone_pnp::{Rng, Tensor};

/// Small convolutional residual net with random biases.
pub fn small_conv_net(seed: u64, act: ActivationSpec) -> Network {
    let mut rng = Rng::new(seed);
    let kinds = [
        LayerKind::Conv { cout: 4, cin: 1, k: 3 },
        LayerKind::Conv { cout: 4, cin: 4, k: 3 },
        LayerKind::Conv { cout: 1, cin: 4, k: 3 },
    ];
    let layers = kinds
        .iter()
        .enumerate()
        .map(|(m, &k)| {
            let a = if m == 2 { ActivationSpec::identity() } else { act };
            let mut l = Layer::init(k, a, &mut rng).unwrap();
            l.bias = rng.normal_vec(l.bias.len()).iter().map(|v| 0.1 * v).collect();
            l
        })
        .collect();
    Network::new(layers, true).unwrap()
}

/// Dense net with random biases.
pub fn small_dense_net(seed: u64, widths: &[usize], act: ActivationSpec, residual: bool) -> Network {
    let mut rng = Rng::new(seed);
    let mut net = Network::mlp(widths, act, residual, &mut rng).unwrap();
    for l in net.layers_mut() {
        l.bias = rng.normal_vec(l.bias.len()).iter().map(|v| 0.1 * v).collect();
    }
    net
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Central differences of `f` at `p` along every coordinate.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, p: &[f64], h: f64) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            q[i] = p[i] + h;
            let fp = f(&q);
            q[i] = p[i] - h;
            let fm = f(&q);
            q[i] = p[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `||dQ_theta(x) v||^2` for the reflected map of `net` with parameters
/// `theta`.
pub fn frozen_sigma_sq(net: &Network, theta: &[f64], x: &Tensor, v: &Tensor) -> f64 {
    let n = net.with_params(theta).unwrap();
    QMap::reflected(&n).linearize(x).unwrap().apply(v).unwrap().norm_sq()
}

/// `min 1/2 ||A x - b||^2 + tau ||x||_1` by cyclic coordinate descent, run
/// until a full sweep moves no coordinate by more than `1e-15`.
pub fn lasso_coordinate_descent(a: &nalgebra::DMatrix<f64>, b: &[f64], tau: f64) -> Vec<f64> {
    let (m, n) = a.shape();
    let mut x = vec![0.0; n];
    let mut r: Vec<f64> = b.to_vec();
    let col_sq: Vec<f64> = (0..n).map(|j| a.column(j).norm_squared()).collect();
    for _ in 0..100_000 {
        let mut moved = 0.0f64;
        for j in 0..n {
            let rho: f64 = (0..m).map(|i| a[(i, j)] * r[i]).sum::<f64>() + col_sq[j] * x[j];
            let new = rho.signum() * (rho.abs() - tau).max(0.0) / col_sq[j];
            let d = new - x[j];
            if d != 0.0 {
                for i in 0..m {
                    r[i] -= a[(i, j)] * d;
                }
                x[j] = new;
                moved = moved.max(d.abs());
            }
        }
        if moved < 1e-15 {
            break;
        }
    }
    x
}

/// A random tall Gaussian LASSO instance `(A, b, tau)` with `8` unknowns.
pub fn lasso_instance(seed: u64) -> (nalgebra::DMatrix<f64>, Vec<f64>, f64) {
    let mut rng = Rng::new(seed);
    let a = nalgebra::DMatrix::from_fn(12, 8, |_, _| rng.normal());
    let b: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
    let atb = a.transpose() * nalgebra::DVector::from_column_slice(&b);
    let tau = 0.3 * atb.amax();
    (a, b, tau)
}

/// LASSO instance as a smooth term, the matching soft-threshold resolvent,
/// the step `1/mu`, the oracle solution and `tau`.
pub fn lasso_problem(seed: u64) -> (monotone_pnp::solve::LeastSquares, monotone_pnp::mmo::Resolvent, f64, Vec<f64>, f64) {
    let (a, b, tau) = lasso_instance(seed);
    let mu = a.singular_values().max().powi(2);
    let gamma = 1.0 / mu;
    let f = monotone_pnp::solve::LeastSquares {
        op: monotone_pnp::LinearMap::dense(a.clone()),
        target: Tensor::from_vec(b.clone()),
        mu: Some(mu),
    };
    let j = monotone_pnp::mmo::Resolvent::soft_threshold(&[8], gamma * tau);
    let oracle = lasso_coordinate_descent(&a, &b, tau);
    (f, j, gamma, oracle, tau)
}
