//! Forward-backward iterations `x <- J(x - gamma grad f(x))`, with a
//! learned or classical resolvent `J`, plus the classical proximal
//! baselines.

use std::time::Instant;

use crate::error::{arg_err, Error, Result};
use crate::inverse::{self, BlurProblem};
use crate::linear::LinearMap;
use crate::mmo::{soft_threshold, Resolvent};
use crate::tensor::Tensor;

/// Iterates are abandoned once `||x_n||` exceeds this multiple of
/// `||x_0||`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// A differentiable data-fit term.
pub trait Smooth: Sync {
    fn grad(&self, x: &Tensor) -> Result<Tensor>;
    fn value(&self, x: &Tensor) -> Result<f64>;
    /// Lipschitz constant of the gradient, when known.
    fn lipschitz(&self) -> Option<f64> {
        None
    }
}

impl Smooth for BlurProblem {
    fn grad(&self, x: &Tensor) -> Result<Tensor> {
        inverse::grad_datafit(self, x)
    }
    fn value(&self, x: &Tensor) -> Result<f64> {
        self.datafit(x)
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(self.mu)
    }
}

/// `f(x) = 1/2 ||A x - z||^2` for an arbitrary linear map.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub op: LinearMap,
    pub target: Tensor,
    pub mu: Option<f64>,
}

impl Smooth for LeastSquares {
    fn grad(&self, x: &Tensor) -> Result<Tensor> {
        let mut r = self.op.apply(x)?;
        r -= &self.target;
        self.op.adjoint(&r)
    }
    fn value(&self, x: &Tensor) -> Result<f64> {
        let r = self.op.apply(x)?;
        Ok(0.5 * r.distance(&self.target).powi(2))
    }
    fn lipschitz(&self) -> Option<f64> {
        self.mu
    }
}

/// `f = 0`.
pub struct Zero;

impl Smooth for Zero {
    fn grad(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros_like(x))
    }
    fn value(&self, _: &Tensor) -> Result<f64> {
        Ok(0.0)
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(0.0)
    }
}

#[derive(Clone, Debug)]
pub struct SolveConfig {
    pub gamma: f64,
    pub max_iters: usize,
    /// Stop once `c_n` falls below this value.
    pub tol: Option<f64>,
    /// Data-fit values are recorded every `record_every` iterations.
    pub record_every: usize,
}

impl SolveConfig {
    pub fn new(gamma: f64, max_iters: usize) -> Self {
        Self {
            gamma,
            max_iters,
            tol: None,
            record_every: 1,
        }
    }

    fn validate(&self, lipschitz: Option<f64>) -> Result<Option<String>> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(arg_err!("step size must be positive, got {}", self.gamma));
        }
        if self.max_iters == 0 {
            return Err(arg_err!("need at least one iteration"));
        }
        if self.record_every == 0 {
            return Err(arg_err!("record_every must be positive"));
        }
        match lipschitz {
            Some(mu) if mu > 0.0 && self.gamma >= 2.0 / mu => Err(arg_err!(
                "step size {} must be below 2/mu = {}",
                self.gamma,
                2.0 / mu
            )),
            Some(_) => Ok(None),
            None => Ok(Some(
                "gradient Lipschitz constant unknown; step size not checked".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    MaxIterations,
    Converged,
    /// The divergence guard fired.
    Diverged,
    NonFinite,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    /// Last finite iterate.
    pub solution: Tensor,
    /// `c_n = ||x_n - x_{n-1}|| / ||x_0||`, one entry per iteration.
    pub residuals: Vec<f64>,
    /// `false` when `x_0 = 0` and the residuals are not normalized.
    pub normalized: bool,
    /// `(n, f(x_n))` pairs.
    pub fidelity: Vec<(usize, f64)>,
    /// Elapsed milliseconds after each iteration.
    pub wall_ms: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
    pub warning: Option<String>,
}

impl SolveReport {
    pub const CSV_HEADER: &'static str = "iteration,c_n,fidelity,wall_ms";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let mut fid = self.fidelity.iter().peekable();
        for (i, (c, t)) in self.residuals.iter().zip(&self.wall_ms).enumerate() {
            let n = i + 1;
            let f = match fid.peek() {
                Some((k, v)) if *k == n => {
                    fid.next();
                    format!("{v:e}")
                }
                _ => String::new(),
            };
            s.push_str(&format!("{n},{c:e},{f},{t:.3}\n"));
        }
        s
    }

    /// Largest increase `c_{n+1} - c_n` along the series (0 when
    /// nonincreasing).
    pub fn max_residual_increase(&self) -> f64 {
        self.residuals
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

/// One forward-backward step.
pub fn fb_step(f: &dyn Smooth, j: &Resolvent, gamma: f64, x: &Tensor) -> Result<Tensor> {
    let mut y = f.grad(x)?.scale(-gamma);
    y += x;
    Ok(j.apply(&y))
}

pub fn fb_solve(f: &dyn Smooth, j: &Resolvent, config: &SolveConfig, x0: &Tensor) -> Result<SolveReport> {
    let warning = config.validate(f.lipschitz())?;
    if j.shape().iter().product::<usize>() != x0.len() {
        return Err(Error::Dimension(format!(
            "resolvent shape {:?} does not match start {:?}",
            j.shape(),
            x0.shape()
        )));
    }
    let start = Instant::now();
    let x0_norm = x0.norm();
    let normalized = x0_norm > 0.0;
    let scale = if normalized { 1.0 / x0_norm } else { 1.0 };
    let guard = DIVERGENCE_FACTOR * if normalized { x0_norm } else { 1.0 };
    let mut report = SolveReport {
        solution: x0.clone(),
        residuals: Vec::with_capacity(config.max_iters),
        normalized,
        fidelity: Vec::new(),
        wall_ms: Vec::with_capacity(config.max_iters),
        iterations: 0,
        status: SolveStatus::MaxIterations,
        warning,
    };
    let mut x = x0.clone();
    for n in 1..=config.max_iters {
        let next = fb_step(f, j, config.gamma, &x)?;
        if !next.is_finite() {
            report.status = SolveStatus::NonFinite;
            break;
        }
        let c = next.distance(&x) * scale;
        x = next;
        report.iterations = n;
        report.residuals.push(c);
        report.wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        if n % config.record_every == 0 {
            report.fidelity.push((n, f.value(&x)?));
        }
        if x.norm() > guard {
            report.status = SolveStatus::Diverged;
            break;
        }
        if config.tol.is_some_and(|t| c < t) {
            report.status = SolveStatus::Converged;
            break;
        }
    }
    report.solution = x;
    Ok(report)
}

/// Exactly `depth` forward-backward steps; agrees bit for bit with
/// [`fb_solve`] run for `depth` iterations without early stopping.
pub fn unfold(j: &Resolvent, f: &dyn Smooth, gamma: f64, depth: usize, x0: &Tensor) -> Result<Tensor> {
    let mut x = x0.clone();
    for _ in 0..depth {
        x = fb_step(f, j, gamma, &x)?;
    }
    Ok(x)
}

/// The residual series; `Err` flags a run whose series is unnormalized
/// because it started at zero.
pub fn residual_series(report: &SolveReport) -> std::result::Result<&[f64], &[f64]> {
    if report.normalized {
        Ok(&report.residuals)
    } else {
        Err(&report.residuals)
    }
}

/// `Psi soft_tau(Psi^T x)`, the proximity operator of `tau ||Psi^T .||_1`
/// for orthogonal `Psi`.
pub fn prox_l1_synthesis(x: &Tensor, tau: f64, psi: &LinearMap) -> Result<Tensor> {
    if tau < 0.0 {
        return Err(arg_err!("tau must be >= 0"));
    }
    if !psi.is_orthogonal(1e-9) {
        return Err(arg_err!("sparsifying transform is not orthogonal"));
    }
    let coeffs = psi.adjoint(x)?;
    psi.apply(&coeffs.map(|c| soft_threshold(c, tau)))
}

/// Resolvent wrapping [`prox_l1_synthesis`].
pub fn l1_resolvent(shape: &[usize], tau: f64, psi: LinearMap) -> Result<Resolvent> {
    prox_l1_synthesis(&Tensor::zeros(shape), tau, &psi)?;
    Ok(Resolvent::new(
        shape,
        crate::mmo::Provenance::ProxClosedForm,
        move |x| prox_l1_synthesis(x, tau, &psi).expect("checked at construction"),
    ))
}

#[derive(Clone, Debug)]
pub struct TvProx {
    pub value: Tensor,
    /// Primal minus dual objective at the returned pair.
    pub gap: f64,
}

// periodic forward differences along rows (dy) and columns (dx)
fn grad2(u: &[f64], h: usize, w: usize, gy: &mut [f64], gx: &mut [f64]) {
    for i in 0..h {
        let i1 = (i + 1) % h;
        for j in 0..w {
            let j1 = (j + 1) % w;
            gy[i * w + j] = u[i1 * w + j] - u[i * w + j];
            gx[i * w + j] = u[i * w + j1] - u[i * w + j];
        }
    }
}

// negative adjoint of grad2
fn div2(py: &[f64], px: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for i in 0..h {
        let i0 = (i + h - 1) % h;
        for j in 0..w {
            let j0 = (j + w - 1) % w;
            out[i * w + j] = py[i * w + j] - py[i0 * w + j] + px[i * w + j] - px[i * w + j0];
        }
    }
}

fn tv_value(u: &[f64], h: usize, w: usize) -> f64 {
    let (mut gy, mut gx) = (vec![0.0; h * w], vec![0.0; h * w]);
    grad2(u, h, w, &mut gy, &mut gx);
    gy.iter().zip(&gx).map(|(a, b)| a.hypot(*b)).sum()
}

/// Approximate proximity operator of `tau TV` (isotropic, periodic) by
/// projected gradient on the dual with step `1/8`. Channels are treated
/// independently.
pub fn prox_tv(x: &Tensor, tau: f64, inner_iters: usize) -> Result<TvProx> {
    if inner_iters == 0 {
        return Err(arg_err!("inner_iters must be >= 1"));
    }
    if tau < 0.0 {
        return Err(arg_err!("tau must be >= 0"));
    }
    if tau == 0.0 {
        return Ok(TvProx {
            value: x.clone(),
            gap: 0.0,
        });
    }
    let (c, h, w) = x.dims3();
    let plane = h * w;
    let mut out = x.clone();
    let mut gap = 0.0;
    let step = 1.0 / (8.0 * tau);
    for ch in 0..c {
        let xs = &x.data()[ch * plane..(ch + 1) * plane];
        let (mut py, mut px) = (vec![0.0; plane], vec![0.0; plane]);
        let (mut gy, mut gx) = (vec![0.0; plane], vec![0.0; plane]);
        let mut d = vec![0.0; plane];
        let mut u = xs.to_vec();
        for _ in 0..inner_iters {
            grad2(&u, h, w, &mut gy, &mut gx);
            for k in 0..plane {
                let (a, b) = (py[k] + step * gy[k], px[k] + step * gx[k]);
                let n = a.hypot(b).max(1.0);
                py[k] = a / n;
                px[k] = b / n;
            }
            div2(&py, &px, h, w, &mut d);
            for k in 0..plane {
                u[k] = xs[k] + tau * d[k];
            }
        }
        let primal = 0.5 * u.iter().zip(xs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            + tau * tv_value(&u, h, w);
        let dual = 0.5 * xs.iter().map(|v| v * v).sum::<f64>()
            - 0.5 * u.iter().map(|v| v * v).sum::<f64>();
        gap += primal - dual;
        out.data_mut()[ch * plane..(ch + 1) * plane].copy_from_slice(&u);
    }
    Ok(TvProx { value: out, gap })
}

/// Resolvent wrapping [`prox_tv`].
pub fn tv_resolvent(shape: &[usize], tau: f64, inner_iters: usize) -> Result<Resolvent> {
    prox_tv(&Tensor::zeros(shape), tau, inner_iters)?;
    Ok(Resolvent::new(
        shape,
        crate::mmo::Provenance::ProxClosedForm,
        move |x| prox_tv(x, tau, inner_iters).expect("checked at construction").value,
    ))
}

/// Total variation of an image (sum over channels).
pub fn total_variation(x: &Tensor) -> f64 {
    let (c, h, w) = x.dims3();
    let plane = h * w;
    (0..c)
        .map(|ch| tv_value(&x.data()[ch * plane..(ch + 1) * plane], h, w))
        .sum()
}
