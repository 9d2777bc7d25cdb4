mod common;

use common::*;
use monotone_pnp::net::checkpoint::{load_network, save_network};
use monotone_pnp::train::data::procedural_corpus;
use monotone_pnp::train::{
    adam_step, init_network, item_loss_and_grad, loss_and_grad, train, train_from, AdamHyper,
    AdamState, DataLoss, TrainConfig, TrainHooks,
};
use monotone_pnp::certify::certify;
use monotone_pnp::metrics::psnr;
use monotone_pnp::train::{mean_denoising_psnr, noisy_set};
use monotone_pnp::Rng;
use proptest::prelude::*;

fn tiny_config() -> TrainConfig {
    TrainConfig {
        hidden: 3,
        depth: 3,
        batch: 3,
        iterations: 4,
        patch: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn batch_gradient_matches_finite_differences_without_penalty() {
    let cfg = tiny_config();
    let net = init_network(&cfg, 1).unwrap();
    let batch = procedural_corpus(3, 8, 1);
    let rng = Rng::new(2);
    let (_, g, _) = loss_and_grad(&net, &batch, &cfg, &rng).unwrap();
    let f = |p: &[f64]| loss_and_grad(&net.with_params(p).unwrap(), &batch, &cfg, &rng).unwrap().0;
    let fd = fd_grad(f, &net.params(), 1e-6);
    let e = rel_err(&g, &fd);
    assert!(e <= 1e-5, "relative error {e}");
}

#[test]
fn l1_loss_gradient_matches_finite_differences() {
    let cfg = TrainConfig { loss: DataLoss::L1, ..tiny_config() };
    let net = init_network(&cfg, 1).unwrap();
    let batch = procedural_corpus(2, 6, 3);
    let rng = Rng::new(4);
    let (_, g, _) = loss_and_grad(&net, &batch, &cfg, &rng).unwrap();
    let f = |p: &[f64]| loss_and_grad(&net.with_params(p).unwrap(), &batch, &cfg, &rng).unwrap().0;
    let fd = fd_grad(f, &net.params(), 1e-7);
    assert!(rel_err(&g, &fd) <= 1e-4);
}

#[test]
fn hinge_switches_the_penalty_off_below_the_floor() {
    let base = tiny_config();
    let net = init_network(&base, 1).unwrap();
    let x = &procedural_corpus(1, 8, 5)[0];
    let plain = item_loss_and_grad(&net, x, &base, &mut Rng::new(6)).unwrap();
    // floor 1 - epsilon far above any estimate: constant penalty, no gradient
    let off = TrainConfig { lambda: 0.5, epsilon: -1e6, ..base.clone() };
    let r = item_loss_and_grad(&net, x, &off, &mut Rng::new(6)).unwrap();
    assert_eq!(r.grad, plain.grad);
    assert_eq!(r.penalty, 0.5 * (1.0 + 1e6));
    // floor 0: always active, value lambda * sigma^2
    let on = TrainConfig { lambda: 0.5, epsilon: 1.0, ..base };
    let r = item_loss_and_grad(&net, x, &on, &mut Rng::new(6)).unwrap();
    let s = r.sigma_sq.unwrap();
    assert!((r.penalty - 0.5 * s).abs() <= 1e-15);
    assert_ne!(r.grad, plain.grad);
}

#[test]
fn training_is_deterministic() {
    let cfg = TrainConfig { lambda: 1e-2, pretrain_iters: 2, ..tiny_config() };
    let data = procedural_corpus(4, 16, 7);
    let (a, la) = train(&data, &cfg).unwrap();
    let (b, lb) = train(&data, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(la.loss, lb.loss);
    assert_eq!(la.sigma_sq, lb.sigma_sq);
    let (c, _) = train(&data, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn checkpoints_and_log_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { checkpoint_every: 2, val_every: 2, ..tiny_config() };
    let data = procedural_corpus(3, 16, 8);
    let hooks = TrainHooks { validation: &data[..1], checkpoint_dir: Some(dir.path()) };
    let (net, log) = train_from(init_network(&cfg, 1).unwrap(), &data, &cfg, hooks).unwrap();
    assert_eq!(log.len(), 4);
    assert_eq!(log.validation.len(), 2);
    let last = load_network(dir.path().join("ckpt_000004.nnc")).unwrap();
    assert_eq!(last, net);
    assert!(dir.path().join("ckpt_000002.nnc").exists());
    let csv = log.to_csv(false);
    assert_eq!(csv.lines().count(), 5);
    let p = dir.path().join("again.nnc");
    save_network(&net, &p).unwrap();
    assert_eq!(load_network(&p).unwrap(), net);
}

#[test]
fn first_adam_step_is_a_sign_step() {
    let hyper = AdamHyper { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-12, clip: f64::INFINITY };
    let grad = vec![3.0, -1e-3, 250.0, -7.0];
    let mut params = vec![0.0; 4];
    let mut state = AdamState::new(4);
    adam_step(&mut state, &grad, &mut params, &hyper).unwrap();
    for (p, g) in params.iter().zip(&grad) {
        assert!((p + 0.01 * g.signum()).abs() <= 1e-9, "{p}");
    }
}

#[test]
fn toy_denoiser_beats_the_identity() {
    let corpus = procedural_corpus(32, 32, 1);
    let val = procedural_corpus(8, 32, 2);
    let noisy = noisy_set(&val, 0.1, 3);
    let identity: f64 = val.iter().zip(&noisy).map(|(x, y)| psnr(y, x)).sum::<f64>() / val.len() as f64;
    let config = TrainConfig { iterations: 200, sigma: 0.1, patch: 32, ..TrainConfig::default() };
    let (net, _) = train(&corpus, &config).unwrap();
    let learned = mean_denoising_psnr(&net, &val, &noisy).unwrap();
    assert!(learned >= identity + 1.0, "{learned} vs identity {identity}");
}

#[test]
fn max_sigma_does_not_grow_with_the_penalty() {
    let corpus = procedural_corpus(16, 16, 4);
    let probes = noisy_set(&procedural_corpus(20, 16, 5), 0.02, 6);
    let base = TrainConfig {
        hidden: 8,
        depth: 3,
        patch: 16,
        sigma: 0.02,
        iterations: 150,
        power_iters: 10,
        ..TrainConfig::default()
    };
    let init = init_network(&base, 1).unwrap();
    let mut last = f64::INFINITY;
    for lambda in [0.0, 1e-3, 1e-1] {
        let cfg = TrainConfig { lambda, ..base.clone() };
        let (net, _) = train_from(init.clone(), &corpus, &cfg, TrainHooks::default()).unwrap();
        let m = certify(&net, &probes, 30, 7).unwrap().max_sigma_sq();
        assert!(m <= last, "lambda {lambda}: {m} > {last}");
        last = m;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn adam_constant_gradient_is_sign_descent(g in proptest::collection::vec(-10.0f64..10.0, 1..8), steps in 1usize..20) {
        prop_assume!(g.iter().all(|v| v.abs() > 1e-3));
        let hyper = AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-12, clip: f64::INFINITY };
        let mut params = vec![0.0; g.len()];
        let mut state = AdamState::new(g.len());
        for _ in 0..steps {
            adam_step(&mut state, &g, &mut params, &hyper).unwrap();
        }
        for (p, gi) in params.iter().zip(&g) {
            prop_assert!((p + 1e-3 * steps as f64 * gi.signum()).abs() <= 1e-8);
        }
    }

    #[test]
    fn batch_loss_is_schedule_independent(seed in 0u64..1000) {
        let cfg = TrainConfig { lambda: 0.1, ..tiny_config() };
        let net = init_network(&cfg, 1).unwrap();
        let batch = procedural_corpus(3, 8, seed);
        let rng = Rng::new(seed);
        let (v, g, _) = loss_and_grad(&net, &batch, &cfg, &rng).unwrap();
        let mut sum = 0.0;
        for (d, x) in batch.iter().enumerate() {
            sum += item_loss_and_grad(&net, x, &cfg, &mut rng.split(d as u64)).unwrap().value;
        }
        prop_assert!((v - sum / 3.0).abs() <= 1e-12 * v.abs().max(1.0));
        prop_assert_eq!(g.len(), net.num_params());
    }
}
