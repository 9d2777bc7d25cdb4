//! Supervised learning of a firmly nonexpansive denoiser.
//!
//! Each batch item `x` yields a noisy input `y = x + sigma w` and a probe
//! point `x~ = rho x + (1 - rho) J(y)` with `rho ~ U[0, 1]`. The loss is
//!
//! ```text
//! ||J(y) - x||^2 + lambda max(||dQ(x~)||^2, 1 - epsilon),   Q = 2J - Id,
//! ```
//!
//! averaged over the batch, where the spectral norm is the power-iteration
//! estimate. The probe point is held fixed when differentiating.

mod adam;
pub mod approx;
mod config;
pub mod data;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

pub use adam::{adam_step, clip_global_norm, AdamHyper, AdamState};
pub use config::{DataLoss, TrainConfig};

use crate::error::{arg_err, Error, Result};
use crate::metrics::psnr;
use crate::net::checkpoint::save_network;
use crate::net::{penalty_grad, Network, QMap};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `x + sigma w` with `w` standard normal.
pub fn make_noisy(x: &Tensor, sigma: f64, rng: &mut Rng) -> Tensor {
    let mut y = x.clone();
    if sigma != 0.0 {
        y.axpy(sigma, &Tensor::randn(x.shape(), rng));
    }
    y
}

/// `rho x + (1 - rho) jy`.
pub fn interpolate_sample(x: &Tensor, jy: &Tensor, rho: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(arg_err!("interpolation weight {rho} outside [0, 1]"));
    }
    x.check_same_shape(jy, "interpolate_sample")?;
    Ok(x.zip_map(jy, |a, b| rho * a + (1.0 - rho) * b))
}

/// Loss of a single item.
#[derive(Clone, Debug)]
pub struct ItemLoss {
    pub value: f64,
    pub data: f64,
    pub penalty: f64,
    /// Power-iteration estimate of `||dQ(x~)||^2`; `None` when `lambda = 0`.
    pub sigma_sq: Option<f64>,
    pub grad: Vec<f64>,
}

/// Loss and gradient for one clean image. Draws the noise, `rho` and the
/// power-iteration start from `rng`.
pub fn item_loss_and_grad(net: &Network, x: &Tensor, config: &TrainConfig, rng: &mut Rng) -> Result<ItemLoss> {
    let sigma = if config.sigma_uniform {
        rng.uniform_in(0.0, config.sigma)
    } else {
        config.sigma
    };
    let y = make_noisy(x, sigma, rng);
    let trace = net.trace(&y)?;
    let r = trace.output() - x;
    let (data, cot) = match config.loss {
        DataLoss::L2 => (r.norm_sq(), r.scale(2.0)),
        DataLoss::L1 => (
            r.data().iter().map(|v| v.abs()).sum(),
            r.map(|v| if v == 0.0 { 0.0 } else { v.signum() }),
        ),
    };
    let (g, _) = net.vjp_traced(&trace, &cot)?;
    let mut grad = g.into_data();
    let (penalty, sigma_sq) = if config.lambda > 0.0 {
        let rho = rng.uniform();
        let probe = interpolate_sample(x, trace.output(), rho)?;
        let pg = penalty_grad(&QMap::reflected(net), &probe, config.power_iters, rng)?;
        let floor = 1.0 - config.epsilon;
        if pg.sigma_sq > floor {
            for (a, b) in grad.iter_mut().zip(pg.grad.data()) {
                *a += config.lambda * b;
            }
            (config.lambda * pg.sigma_sq, Some(pg.sigma_sq))
        } else {
            (config.lambda * floor, Some(pg.sigma_sq))
        }
    } else {
        (0.0, None)
    };
    Ok(ItemLoss {
        value: data + penalty,
        data,
        penalty,
        sigma_sq,
        grad,
    })
}

#[derive(Clone, Debug)]
pub struct BatchDiagnostics {
    pub data: f64,
    pub penalty: f64,
    /// Per-item estimates (empty when `lambda = 0`).
    pub sigma_sq: Vec<f64>,
}

/// Batch mean of [`item_loss_and_grad`]; item `d` uses `rng.split(d)`, so
/// the result does not depend on how the items are scheduled.
pub fn loss_and_grad(
    net: &Network,
    batch: &[Tensor],
    config: &TrainConfig,
    rng: &Rng,
) -> Result<(f64, Vec<f64>, BatchDiagnostics)> {
    if batch.is_empty() {
        return Err(arg_err!("empty batch"));
    }
    let items = batch
        .par_iter()
        .enumerate()
        .map(|(d, x)| item_loss_and_grad(net, x, config, &mut rng.split(d as u64)))
        .collect::<Result<Vec<_>>>()?;
    let n = items.len() as f64;
    let mut grad = vec![0.0; net.num_params()];
    let (mut value, mut data, mut penalty) = (0.0, 0.0, 0.0);
    let mut sigma_sq = Vec::new();
    for it in &items {
        for (a, b) in grad.iter_mut().zip(&it.grad) {
            *a += b;
        }
        value += it.value;
        data += it.data;
        penalty += it.penalty;
        sigma_sq.extend(it.sigma_sq);
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((
        value / n,
        grad,
        BatchDiagnostics {
            data: data / n,
            penalty: penalty / n,
            sigma_sq,
        },
    ))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub loss: Vec<f64>,
    pub data: Vec<f64>,
    pub penalty: Vec<f64>,
    /// Largest `sigma_hat^2` of each batch.
    pub sigma_sq: Vec<Option<f64>>,
    pub wall_ms: Vec<f64>,
    /// `(iteration, mean validation PSNR)`.
    pub validation: Vec<(usize, f64)>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "iteration,loss,data,penalty,sigma_sq_max,wall_ms,val_psnr";

    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    /// CSV with one row per iteration. Wall times are left out when
    /// `with_time` is false so that logs of identical runs compare equal.
    pub fn to_csv(&self, with_time: bool) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let mut val = self.validation.iter().peekable();
        for i in 0..self.len() {
            let n = i + 1;
            let sig = self.sigma_sq[i].map(|v| format!("{v:e}")).unwrap_or_default();
            let t = if with_time {
                format!("{:.1}", self.wall_ms[i])
            } else {
                String::new()
            };
            let v = match val.peek() {
                Some((k, p)) if *k == n => {
                    val.next();
                    crate::metrics::fmt_value(*p)
                }
                _ => String::new(),
            };
            s.push_str(&format!(
                "{n},{:e},{:e},{:e},{sig},{t},{v}\n",
                self.loss[i], self.data[i], self.penalty[i]
            ));
        }
        s
    }
}

/// Optional side channels of a training run.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainHooks<'a> {
    /// Clean validation images for periodic PSNR.
    pub validation: &'a [Tensor],
    /// Directory for periodic `NNC1` checkpoints.
    pub checkpoint_dir: Option<&'a Path>,
}

/// Scale applied to the He-initialized last layer so that the residual
/// network starts close to the identity.
pub const LAST_LAYER_INIT_SCALE: f64 = 1e-2;

/// Initial network for `config` on images with `channels` channels.
pub fn init_network(config: &TrainConfig, channels: usize) -> Result<Network> {
    let mut rng = Rng::new(config.seed).split(u64::MAX);
    let mut net = Network::conv_denoiser(channels, config.hidden, config.depth, config.slope, &mut rng)?;
    if let Some(last) = net.layers_mut().last_mut() {
        last.weight.iter_mut().for_each(|w| *w *= LAST_LAYER_INIT_SCALE);
    }
    Ok(net)
}

/// Fixed noisy copies of `clean` at level `sigma`.
pub fn noisy_set(clean: &[Tensor], sigma: f64, seed: u64) -> Vec<Tensor> {
    let base = Rng::new(seed);
    clean
        .iter()
        .enumerate()
        .map(|(i, x)| make_noisy(x, sigma, &mut base.split(i as u64)))
        .collect()
}

/// Mean PSNR of `net` applied to `noisy` against `clean`.
pub fn mean_denoising_psnr(net: &Network, clean: &[Tensor], noisy: &[Tensor]) -> Result<f64> {
    let vals = clean
        .par_iter()
        .zip(noisy)
        .map(|(x, y)| Ok(psnr(&net.forward(y)?, x)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Builds the initial network and runs [`train_from`].
pub fn train(dataset: &[Tensor], config: &TrainConfig) -> Result<(Network, TrainLog)> {
    let first = dataset.first().ok_or_else(|| arg_err!("empty dataset"))?;
    let net = init_network(config, first.dims3().0)?;
    train_from(net, dataset, config, TrainHooks::default())
}

/// Pretraining (if `config.pretrain_iters > 0`) followed by the main
/// phase, starting from `net`.
pub fn train_from(
    mut net: Network,
    dataset: &[Tensor],
    config: &TrainConfig,
    hooks: TrainHooks,
) -> Result<(Network, TrainLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(arg_err!("empty dataset"));
    }
    let mut log = TrainLog::default();
    let master = Rng::new(config.seed);
    let val_noisy = noisy_set(hooks.validation, config.sigma, config.seed ^ 0x7a1);
    let mut done = 0;
    let start = Instant::now();
    let pre = TrainConfig {
        lambda: 0.0,
        sigma: config.pretrain_sigma_max,
        sigma_uniform: true,
        iterations: config.pretrain_iters,
        ..config.clone()
    };
    for (phase, cfg) in [(0u64, &pre), (1, config)] {
        if cfg.iterations == 0 {
            continue;
        }
        let rng = master.split(phase);
        let mut state = AdamState::new(net.num_params());
        let mut params = net.params();
        let drop = (cfg.lr_drop_at * cfg.iterations as f64).floor() as usize;
        for it in 0..cfg.iterations {
            let it_rng = rng.split(it as u64);
            let mut pick = it_rng.split(0);
            let batch: Vec<Tensor> = (0..cfg.batch)
                .map(|_| {
                    let x = &dataset[pick.index(dataset.len())];
                    data::augment(x, cfg.patch.min(x.dims3().1).min(x.dims3().2), &mut pick)
                })
                .collect();
            let (loss, grad, diag) = loss_and_grad(&net, &batch, cfg, &it_rng.split(1))?;
            done += 1;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "training loss at iteration {done} (data {}, penalty {})",
                    diag.data, diag.penalty
                )));
            }
            let hyper = AdamHyper {
                lr: if it >= drop { cfg.lr / 10.0 } else { cfg.lr },
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.adam_eps,
                clip: cfg.clip,
            };
            adam_step(&mut state, &grad, &mut params, &hyper)?;
            net.set_params(&params)?;
            log.loss.push(loss);
            log.data.push(diag.data);
            log.penalty.push(diag.penalty);
            log.sigma_sq.push(diag.sigma_sq.iter().copied().reduce(f64::max));
            log.wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
            if config.val_every > 0 && done % config.val_every == 0 && !hooks.validation.is_empty() {
                log.validation
                    .push((done, mean_denoising_psnr(&net, hooks.validation, &val_noisy)?));
            }
            if let Some(dir) = hooks.checkpoint_dir {
                if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
                    save_network(&net, dir.join(format!("ckpt_{done:06}.nnc")))?;
                }
            }
        }
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_and_interpolation() {
        let x = Tensor::from_vec(vec![2.0]);
        assert_eq!(make_noisy(&x, 0.0, &mut Rng::new(0)), x);
        let jy = Tensor::from_vec(vec![4.0]);
        assert_eq!(interpolate_sample(&x, &jy, 0.5).unwrap().data(), &[3.0]);
        assert_eq!(interpolate_sample(&x, &jy, 1.0).unwrap(), x);
        assert_eq!(interpolate_sample(&x, &jy, 0.0).unwrap(), jy);
        assert!(interpolate_sample(&x, &jy, 1.5).is_err());
    }

    #[test]
    fn zero_iterations_returns_initial_net() {
        let cfg = TrainConfig {
            iterations: 0,
            hidden: 2,
            depth: 2,
            ..TrainConfig::default()
        };
        let data = data::procedural_corpus(2, 32, 0);
        let (net, log) = train(&data, &cfg).unwrap();
        assert_eq!(net, init_network(&cfg, 1).unwrap());
        assert!(log.is_empty());
    }

    #[test]
    fn perfect_net_noiseless_zero_loss() {
        let mut net = init_network(&TrainConfig::default(), 1).unwrap();
        let z = vec![0.0; net.num_params()];
        net.set_params(&z).unwrap();
        let cfg = TrainConfig {
            sigma: 0.0,
            ..TrainConfig::default()
        };
        let batch = data::procedural_corpus(2, 8, 1);
        let (v, g, _) = loss_and_grad(&net, &batch, &cfg, &Rng::new(0)).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }
}
