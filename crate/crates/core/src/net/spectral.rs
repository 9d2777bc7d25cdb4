//! Jacobian spectral norms of `Q` and the gradient of the certification
//! penalty.

use nalgebra::DMatrix;

use super::{Network, Trace};
use crate::error::{arg_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Largest input dimension accepted by [`dense_jacobian`].
pub const DENSE_JACOBIAN_LIMIT: usize = 1024;

/// Which map the network stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QForm {
    /// The network models `J`; `Q = 2 J - Id`.
    Reflected,
    /// The network is `Q` itself.
    Direct,
}

#[derive(Clone, Copy, Debug)]
pub struct QMap<'a> {
    pub net: &'a Network,
    pub form: QForm,
}

impl<'a> QMap<'a> {
    pub fn reflected(net: &'a Network) -> Self {
        Self {
            net,
            form: QForm::Reflected,
        }
    }

    pub fn direct(net: &'a Network) -> Self {
        Self {
            net,
            form: QForm::Direct,
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.net.forward(x)?;
        Ok(match self.form {
            QForm::Reflected => {
                let mut q = y.scale(2.0);
                q -= x;
                q
            }
            QForm::Direct => y,
        })
    }

    /// Jacobian of `Q` at `x`, usable many times.
    pub fn linearize(&self, x: &Tensor) -> Result<LinearizedQ<'a>> {
        if self.form == QForm::Reflected && !self.net.residual() {
            self.check_square(x)?;
        }
        Ok(LinearizedQ {
            net: self.net,
            form: self.form,
            trace: self.net.trace(x)?,
        })
    }

    fn check_square(&self, x: &Tensor) -> Result<()> {
        let out = self.net.output_shape(x.shape())?;
        if out.iter().product::<usize>() != x.len() {
            return Err(Error::Dimension(
                "reflected form needs a network from a space to itself".into(),
            ));
        }
        Ok(())
    }
}

pub struct LinearizedQ<'a> {
    net: &'a Network,
    form: QForm,
    trace: Trace,
}

impl LinearizedQ<'_> {
    pub fn input_shape(&self) -> &[usize] {
        self.trace.input().shape()
    }

    pub fn output_shape(&self) -> &[usize] {
        self.trace.output().shape()
    }

    /// `dQ(x) v`.
    pub fn apply(&self, v: &Tensor) -> Result<Tensor> {
        let jv = self.net.jvp_traced(&self.trace, v)?;
        Ok(match self.form {
            QForm::Reflected => {
                let mut q = jv.scale(2.0).reshape(v.shape())?;
                q -= v;
                q
            }
            QForm::Direct => jv,
        })
    }

    /// `dQ(x)^T u`.
    pub fn adjoint(&self, u: &Tensor) -> Result<Tensor> {
        let u = u.clone().reshape(self.output_shape())?;
        let g = self.net.vjp_input_traced(&self.trace, &u)?;
        Ok(match self.form {
            QForm::Reflected => {
                let mut q = g.scale(2.0);
                q.axpy(-1.0, &u);
                q
            }
            QForm::Direct => g,
        })
    }

    /// Gradient with respect to the network parameters of `||dQ(x) v||^2`
    /// for fixed `x` and `v`.
    pub fn norm_sq_param_grad(&self, v: &Tensor) -> Result<(f64, Tensor)> {
        let qv = self.apply(v)?;
        let c = qv.clone().reshape(self.output_shape())?;
        let g = self.net.jacobian_param_grad(&self.trace, v, &c)?;
        // d||q||^2 = 2 <q, dq>, and dq = s * d(J' v) with s = 2 when reflected
        let s = match self.form {
            QForm::Reflected => 4.0,
            QForm::Direct => 2.0,
        };
        Ok((qv.norm_sq(), g.scale(s)))
    }
}

/// Result of a power iteration on `dQ(x)^T dQ(x)`.
#[derive(Clone, Debug)]
pub struct JacobianProbe {
    pub point: Tensor,
    pub iterations: usize,
    /// Key of the stream the start vector was drawn from.
    pub seed: u64,
    /// `||dQ(x) v||` for the final right vector `v`.
    pub estimate: f64,
    /// Unit left vector `dQ v / ||dQ v||`.
    pub left: Tensor,
    /// Unit right vector.
    pub right: Tensor,
    /// `||dQ v_i||` along the iteration, nondecreasing up to rounding.
    pub history: Vec<f64>,
}

fn unit(t: Tensor) -> Option<Tensor> {
    let n = t.norm();
    (n > 0.0 && n.is_finite()).then(|| t.scale(1.0 / n))
}

/// Estimates `||dQ(x)||` with `iters` steps of the power method started
/// from a Gaussian vector drawn from `rng`.
pub fn jacobian_spectral_norm(q: &QMap, x: &Tensor, iters: usize, rng: &mut Rng) -> Result<JacobianProbe> {
    let lin = q.linearize(x)?;
    probe_linearized(&lin, x, iters, rng)
}

fn probe_linearized(lin: &LinearizedQ, x: &Tensor, iters: usize, rng: &mut Rng) -> Result<JacobianProbe> {
    if iters == 0 {
        return Err(arg_err!("power iteration needs at least one step"));
    }
    let seed = rng.key();
    let mut v = unit(Tensor::randn(x.shape(), rng)).expect("gaussian start is nonzero");
    let mut history = Vec::with_capacity(iters + 1);
    let mut qv = lin.apply(&v)?;
    history.push(qv.norm());
    for _ in 0..iters {
        let z = lin.adjoint(&qv)?;
        let Some(next) = unit(z.reshape(x.shape())?) else {
            break;
        };
        v = next;
        qv = lin.apply(&v)?;
        history.push(qv.norm());
    }
    let estimate = qv.norm();
    if !estimate.is_finite() {
        return Err(Error::NonFinite("jacobian norm estimate".into()));
    }
    let left = unit(qv.clone()).unwrap_or_else(|| Tensor::zeros_like(&qv));
    Ok(JacobianProbe {
        point: x.clone(),
        iterations: history.len() - 1,
        seed,
        estimate,
        left,
        right: v,
        history,
    })
}

/// Dense Jacobian of `Q` at `x`, column by column through forward mode.
pub fn dense_jacobian(q: &QMap, x: &Tensor) -> Result<DMatrix<f64>> {
    if x.len() > DENSE_JACOBIAN_LIMIT {
        return Err(Error::Refused(format!(
            "dense jacobian of a {}-dimensional input exceeds {DENSE_JACOBIAN_LIMIT}",
            x.len()
        )));
    }
    let lin = q.linearize(x)?;
    let rows: usize = lin.output_shape().iter().product();
    let mut m = DMatrix::zeros(rows, x.len());
    for j in 0..x.len() {
        let col = lin.apply(&Tensor::basis(x.shape(), j))?;
        m.column_mut(j).copy_from_slice(col.data());
    }
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct PenaltyGrad {
    /// `sigma^2 = ||dQ(x) v||^2` for the probe's right vector.
    pub sigma_sq: f64,
    /// Gradient of `sigma^2` in parameter order, with `v` held fixed.
    pub grad: Tensor,
    pub probe: JacobianProbe,
}

/// Power iteration followed by the parameter gradient of the squared
/// estimate. The right vector is treated as a constant, which makes the
/// result exact for the piecewise-linear activations offered here.
pub fn penalty_grad(q: &QMap, x: &Tensor, iters: usize, rng: &mut Rng) -> Result<PenaltyGrad> {
    let lin = q.linearize(x)?;
    let probe = probe_linearized(&lin, x, iters, rng)?;
    let (sigma_sq, grad) = lin.norm_sq_param_grad(&probe.right)?;
    Ok(PenaltyGrad {
        sigma_sq,
        grad,
        probe,
    })
}
