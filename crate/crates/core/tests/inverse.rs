mod common;

use common::*;
use monotone_pnp::inverse::{
    effective_noise, effective_noise_from, grad_datafit, make_blur_problem, recommend_params,
    recommend_params_from, BlurProblem,
};
use monotone_pnp::kernels;
use monotone_pnp::{Rng, Tensor};
use proptest::prelude::*;

#[test]
fn datafit_gradient_matches_finite_differences() {
    let truth = Tensor::uniform(&[1, 10, 11], 0.0, 1.0, &mut Rng::new(1));
    for (name, k) in kernels::standard_set() {
        let p = make_blur_problem(&k, &truth, 0.05, &mut Rng::new(2), true).unwrap();
        let x = Tensor::randn(&[1, 10, 11], &mut Rng::new(3));
        let g = grad_datafit(&p, &x).unwrap();
        let f = |v: &[f64]| p.datafit(&Tensor::new(&[1, 10, 11], v.to_vec()).unwrap()).unwrap();
        let fd = fd_grad(f, x.data(), 1e-5);
        assert!(rel_err(g.data(), &fd) <= 1e-7, "{name}");
    }
}

#[test]
fn observation_noise_has_requested_std() {
    let truth = Tensor::uniform(&[1, 64, 64], 0.0, 1.0, &mut Rng::new(4));
    let k = kernels::gaussian(5, 1.2).unwrap();
    let clean = make_blur_problem(&k, &truth, 0.0, &mut Rng::new(5), true).unwrap();
    let noisy = make_blur_problem(&k, &truth, 0.03, &mut Rng::new(5), true).unwrap();
    let e = &noisy.observation - &clean.observation;
    let std = (e.norm_sq() / e.len() as f64).sqrt();
    // 4096 samples: the sample std is within a few percent
    assert!((std / 0.03 - 1.0).abs() < 0.05, "{std}");
    assert!(e.sum().abs() / (e.len() as f64) < 0.03 * 0.1);
}

#[test]
fn normalization_gives_unit_lipschitz_constant() {
    let truth = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut Rng::new(6));
    for (name, k) in kernels::standard_set() {
        let p = make_blur_problem(&k.scale(2.7), &truth, 0.0, &mut Rng::new(7), true).unwrap();
        assert!((p.mu - 1.0).abs() < 1e-12, "{name}: {}", p.mu);
        let est = monotone_pnp::linear::op_norm(&p.op, 300, &mut Rng::new(8)).unwrap();
        assert!(est <= 1.0 + 1e-12 && est > 0.99, "{name}: {est}");
    }
}

#[test]
fn heuristic_reference_values() {
    assert!((effective_noise_from(0.01, 0.225) - 0.0045).abs() < 1e-15);
    let (gamma, sigma) = recommend_params_from(1.0, 0.0045).unwrap();
    assert_eq!(gamma, 1.99);
    assert!((sigma - 0.009).abs() < 1e-4);
    let truth = Tensor::zeros(&[1, 8, 8]);
    let p = make_blur_problem(&kernels::dirac(3).unwrap(), &truth, 0.01, &mut Rng::new(0), false).unwrap();
    assert!((effective_noise(&p) - 0.02).abs() < 1e-15);
    assert_eq!(recommend_params(&p).unwrap().0, 1.99);
}

#[test]
fn bundles_roundtrip_without_truth() {
    let dir = tempfile::tempdir().unwrap();
    let obs = Tensor::uniform(&[1, 5, 5], 0.0, 1.0, &mut Rng::new(9));
    let p = BlurProblem::from_parts(kernels::gaussian(3, 1.0).unwrap(), obs, 0.1, None, 42).unwrap();
    p.save(dir.path()).unwrap();
    let q = BlurProblem::load(dir.path()).unwrap();
    assert!(q.truth.is_none());
    assert_eq!(q.seed, 42);
    assert_eq!(q.kernel, p.kernel);
    std::fs::write(dir.path().join("meta"), "mu=1\n").unwrap();
    assert!(BlurProblem::load(dir.path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_is_adjoint_of_residual(seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let truth = Tensor::uniform(&[1, 8, 8], 0.0, 1.0, &mut rng);
        let p = make_blur_problem(&kernels::motion_line(5, 4.0, 0.7).unwrap(), &truth, 0.01, &mut rng, true).unwrap();
        let x = Tensor::randn(&[1, 8, 8], &mut rng);
        let v = Tensor::randn(&[1, 8, 8], &mut rng);
        // <grad f(x), v> = <H x - z, H v>
        let g = grad_datafit(&p, &x).unwrap();
        let hx = &p.op.apply(&x).unwrap() - &p.observation;
        let hv = p.op.apply(&v).unwrap();
        prop_assert!((g.dot(&v) - hx.dot(&hv)).abs() <= 1e-10 * (1.0 + g.norm() * v.norm()));
    }

    #[test]
    fn recommended_step_respects_bound(mu in 1e-3f64..1e3, nu in 0.0f64..0.5) {
        let (g, s) = recommend_params_from(mu, nu).unwrap();
        prop_assert!(g * mu < 2.0);
        prop_assert!((s - g * nu).abs() <= 1e-15 * s.max(1.0));
    }
}
