//! Fitting a small residual network to a known separable resolvent on a
//! box, under the nonexpansiveness penalty. This is the empirical side of
//! the universal approximation result: a stationary MMO's resolvent can be
//! approached by firmly nonexpansive networks on compact sets.

use crate::error::{arg_err, Result};
use crate::mmo::{check_firm_nonexpansive, CertReport, ScalarProx};
use crate::net::{penalty_grad, ActivationSpec, Network, QMap};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{adam_step, AdamHyper, AdamState, LAST_LAYER_INIT_SCALE};

/// Largest input dimension accepted.
pub const MAX_DIM: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub enum ApproxTarget {
    Identity,
    SoftThreshold(f64),
    Interval(f64, f64),
}

impl ApproxTarget {
    /// Parses `identity`, `soft-threshold:TAU` or `interval:LO:HI`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| arg_err!("bad number '{t}' in target '{s}'"));
        match parts.as_slice() {
            ["identity"] => Ok(Self::Identity),
            ["soft-threshold", t] => {
                let t = num(t)?;
                if !(t >= 0.0) {
                    return Err(arg_err!("threshold must be >= 0"));
                }
                Ok(Self::SoftThreshold(t))
            }
            ["interval", lo, hi] => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if !(lo <= hi) {
                    return Err(arg_err!("empty interval [{lo}, {hi}]"));
                }
                Ok(Self::Interval(lo, hi))
            }
            _ => Err(arg_err!(
                "unknown target '{s}' (identity, soft-threshold:TAU, interval:LO:HI)"
            )),
        }
    }

    pub fn prox(&self) -> ScalarProx {
        match *self {
            Self::Identity => ScalarProx::Identity,
            Self::SoftThreshold(t) => ScalarProx::SoftThreshold(t),
            Self::Interval(lo, hi) => ScalarProx::Interval(lo, hi),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let p = self.prox();
        x.map(|t| p.apply(t))
    }
}

#[derive(Clone, Debug)]
pub struct ApproxConfig {
    pub dim: usize,
    pub hidden: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// Half-width of the box `[-h, h]^K`.
    pub half_width: f64,
    /// Evaluation points: a uniform grid when `dim = 1`, random points
    /// otherwise.
    pub eval_points: usize,
    pub eval_every: usize,
    /// Sampled pairs for the final firm-nonexpansiveness check.
    pub cert_pairs: usize,
    pub seed: u64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            hidden: 16,
            depth: 2,
            iterations: 4000,
            batch: 64,
            lr: 1e-2,
            lambda: 1e-2,
            epsilon: 0.05,
            half_width: 2.0,
            eval_points: 4001,
            eval_every: 100,
            cert_pairs: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ApproxOutcome {
    pub net: Network,
    /// `(iteration, sup error)` along training, ending with the final net.
    pub curve: Vec<(usize, f64)>,
    pub sup_error: f64,
    pub certification: CertReport,
}

impl ApproxOutcome {
    pub const CSV_HEADER: &'static str = "iteration,sup_error";

    pub fn curve_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (it, e) in &self.curve {
            s.push_str(&format!("{it},{e:e}\n"));
        }
        s
    }
}

fn eval_points(config: &ApproxConfig) -> Vec<Tensor> {
    let h = config.half_width;
    if config.dim == 1 {
        let n = config.eval_points.max(2);
        (0..n)
            .map(|i| Tensor::from_vec(vec![-h + 2.0 * h * i as f64 / (n - 1) as f64]))
            .collect()
    } else {
        let mut rng = Rng::new(config.seed).split(2);
        (0..config.eval_points)
            .map(|_| Tensor::uniform(&[config.dim], -h, h, &mut rng))
            .collect()
    }
}

/// Largest coordinate-wise error of `net` against `target` over `points`.
pub fn sup_error(net: &Network, target: &ApproxTarget, points: &[Tensor]) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in points {
        let e = (&net.forward(x)? - &target.apply(x)).max_abs();
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Trains `x + N(x)` to match `target` on the box and certifies the result
/// by sampling on the same box.
pub fn fit_resolvent(target: &ApproxTarget, config: &ApproxConfig) -> Result<ApproxOutcome> {
    if config.dim == 0 || config.dim > MAX_DIM {
        return Err(arg_err!("dimension must be in 1..={MAX_DIM}"));
    }
    if config.batch == 0 || config.eval_every == 0 || !(config.half_width > 0.0) {
        return Err(arg_err!("batch, eval_every and half_width must be positive"));
    }
    let k = config.dim;
    let master = Rng::new(config.seed);
    let mut net = Network::mlp(
        &[vec![k], vec![config.hidden; config.depth], vec![k]].concat(),
        ActivationSpec::leaky_relu(0.2),
        true,
        &mut master.split(0),
    )?;
    if let Some(last) = net.layers_mut().last_mut() {
        last.weight.iter_mut().for_each(|w| *w *= LAST_LAYER_INIT_SCALE);
    }
    let points = eval_points(config);
    let mut params = net.params();
    let mut state = AdamState::new(params.len());
    let mut curve = Vec::new();
    let h = config.half_width;
    let floor = 1.0 - config.epsilon;
    let drop = config.iterations * 3 / 4;
    let train_rng = master.split(1);
    for it in 0..config.iterations {
        if it % config.eval_every == 0 {
            curve.push((it, sup_error(&net, target, &points)?));
        }
        let mut rng = train_rng.split(it as u64);
        let mut grad = vec![0.0; params.len()];
        for _ in 0..config.batch {
            let x = Tensor::uniform(&[k], -h, h, &mut rng);
            let trace = net.trace(&x)?;
            let r = trace.output() - &target.apply(&x);
            let (g, _) = net.vjp_traced(&trace, &r.scale(2.0))?;
            for (a, b) in grad.iter_mut().zip(g.data()) {
                *a += b;
            }
            if config.lambda > 0.0 {
                let probe = Tensor::uniform(&[k], -h, h, &mut rng);
                let pg = penalty_grad(&QMap::reflected(&net), &probe, 3, &mut rng)?;
                if pg.sigma_sq > floor {
                    for (a, b) in grad.iter_mut().zip(pg.grad.data()) {
                        *a += config.lambda * b;
                    }
                }
            }
        }
        grad.iter_mut().for_each(|g| *g /= config.batch as f64);
        let hyper = AdamHyper {
            lr: if it >= drop { config.lr / 10.0 } else { config.lr },
            ..AdamHyper::default()
        };
        adam_step(&mut state, &grad, &mut params, &hyper)?;
        net.set_params(&params)?;
    }
    let sup = sup_error(&net, target, &points)?;
    curve.push((config.iterations, sup));
    let j = net.clone().into_resolvent(&[k])?;
    let certification = check_firm_nonexpansive(&j, &mut master.split(3), config.cert_pairs, h);
    Ok(ApproxOutcome {
        net,
        curve,
        sup_error: sup,
        certification,
    })
}
