//! Maximally monotone operators, handled through their resolvents.
//!
//! An MMO `A` is represented by `J = (Id + A)^-1`, a single-valued firmly
//! nonexpansive map. Every such `J` is the midpoint `(Id + Q) / 2` of the
//! identity and a nonexpansive `Q` (the reflected resolvent), and
//! conversely. The constructors below build resolvents from that
//! correspondence and from the closure rules of the operator algebra
//! (inversion, scaling, unitary conjugation of separable operators).
//!
//! Certification is by sampling. The checks report the worst margin seen
//! over a number of random pairs; they never prove a property.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{arg_err, Error, Result};
use crate::linear::LinearMap;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Default half-width of the sampling box.
pub const DEFAULT_BOX: f64 = 10.0;
/// Default number of sampled pairs.
pub const DEFAULT_PAIRS: usize = 10_000;
/// Largest ambient dimension accepted by stationarity certificates.
pub const MAX_CERT_DIM: usize = 64;

type MapFn = Arc<dyn Fn(&Tensor) -> Tensor + Send + Sync>;

/// How a resolvent was obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    FromNonexpansive,
    SeparableUnitary,
    Affine,
    InverseOf(Box<Provenance>),
    Scaled(f64, Box<Provenance>),
    Network,
    ProxClosedForm,
}

/// Resolvent `J_A` of a maximally monotone operator on tensors of a fixed
/// shape.
#[derive(Clone)]
pub struct Resolvent {
    map: MapFn,
    shape: Vec<usize>,
    provenance: Provenance,
    certificate: Option<Arc<StationaryCertificate>>,
    warning: Option<String>,
}

impl fmt::Debug for Resolvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Resolvent")
            .field("shape", &self.shape)
            .field("provenance", &self.provenance)
            .field("certificate", &self.certificate.is_some())
            .field("warning", &self.warning)
            .finish()
    }
}

impl Resolvent {
    /// Wraps an arbitrary map. The caller vouches for firm nonexpansiveness.
    pub fn new(
        shape: &[usize],
        provenance: Provenance,
        f: impl Fn(&Tensor) -> Tensor + Send + Sync + 'static,
    ) -> Self {
        Self {
            map: Arc::new(f),
            shape: shape.to_vec(),
            provenance,
            certificate: None,
            warning: None,
        }
    }

    /// `J = Id`, the resolvent of `A = 0`.
    pub fn identity(shape: &[usize]) -> Self {
        Self::new(shape, Provenance::Affine, |x| x.clone())
    }

    /// `J = scale * Id`. Firmly nonexpansive only for `scale` in `[0, 1]`.
    pub fn affine_scaling(shape: &[usize], scale: f64) -> Self {
        Self::new(shape, Provenance::Affine, move |x| x.scale(scale))
    }

    /// Componentwise soft-thresholding at level `tau`, the proximity
    /// operator of `tau * ||.||_1`.
    pub fn soft_threshold(shape: &[usize], tau: f64) -> Self {
        Self::new(shape, Provenance::ProxClosedForm, move |x| {
            x.map(|t| soft_threshold(t, tau))
        })
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        (self.map)(x)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn certificate(&self) -> Option<&StationaryCertificate> {
        self.certificate.as_deref()
    }

    pub fn with_certificate(mut self, cert: StationaryCertificate) -> Self {
        self.certificate = Some(Arc::new(cert));
        self
    }

    /// Set when construction-time sampling found the reflected map
    /// expansive.
    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }
}

pub fn soft_threshold(t: f64, tau: f64) -> f64 {
    t.signum() * (t.abs() - tau).max(0.0)
}

/// `J = (Id + Q) / 2` for a nonexpansive `Q`.
///
/// `Q` is sampled on the default box; if any Lipschitz ratio above
/// `1 + 1e-6` is observed the resolvent still gets built but carries a
/// warning.
pub fn resolvent_from_nonexpansive(
    shape: &[usize],
    q: impl Fn(&Tensor) -> Tensor + Send + Sync + 'static,
) -> Resolvent {
    let q: MapFn = Arc::new(q);
    let ratio = sample_lipschitz(&*q, shape, &mut Rng::new(0x5eed), 256, DEFAULT_BOX);
    let qq = q.clone();
    let mut j = Resolvent::new(shape, Provenance::FromNonexpansive, move |x| {
        let mut y = qq(x);
        y += x;
        y.scale(0.5)
    });
    if ratio > 1.0 + 1e-6 {
        j.warning = Some(format!(
            "sampled Lipschitz ratio {ratio:.6} of the nonexpansive generator exceeds 1"
        ));
    }
    j
}

/// Reflected resolvent `Q = 2J - Id`.
pub fn reflected(j: &Resolvent) -> impl Fn(&Tensor) -> Tensor + Send + Sync + Clone {
    let map = j.map.clone();
    move |x: &Tensor| {
        let mut y = map(x).scale(2.0);
        y -= x;
        y
    }
}

/// Largest sampled `||f(x) - f(y)|| / ||x - y||` over pairs uniform in the box.
pub fn sample_lipschitz(
    f: &(dyn Fn(&Tensor) -> Tensor + Send + Sync),
    shape: &[usize],
    rng: &mut Rng,
    pairs: usize,
    half_width: f64,
) -> f64 {
    let base = Rng::new(rng.next_u64());
    (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut r = base.split(i as u64);
            let x = Tensor::uniform(shape, -half_width, half_width, &mut r);
            let y = Tensor::uniform(shape, -half_width, half_width, &mut r);
            let d = x.distance(&y);
            if d == 0.0 {
                0.0
            } else {
                f(&x).distance(&f(&y)) / d
            }
        })
        .reduce(|| 0.0, f64::max)
}

/// One-dimensional proximity operators used as building blocks of separable
/// resolvents.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarProx {
    Identity,
    SoftThreshold(f64),
    /// Projection onto `[lo, hi]`.
    Interval(f64, f64),
    /// Piecewise-linear monotone map through the knots, slopes clamped to
    /// `[0, 1]`, constant beyond the end knots.
    Table(Vec<(f64, f64)>),
}

impl ScalarProx {
    /// Builds a table prox. Knots are sorted by abscissa; each segment slope
    /// is clamped into `[0, 1]`, so the first ordinate is kept and later
    /// ordinates may move.
    pub fn table(mut knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(arg_err!("table prox needs at least one knot"));
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(arg_err!("table prox knots must have distinct abscissae"));
        }
        let mut fixed = vec![knots[0]];
        for w in knots.windows(2) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            let slope = ((y1 - y0) / (x1 - x0)).clamp(0.0, 1.0);
            let prev = fixed.last().unwrap().1;
            fixed.push((x1, prev + slope * (x1 - x0)));
        }
        Ok(ScalarProx::Table(fixed))
    }

    pub fn apply(&self, t: f64) -> f64 {
        match self {
            ScalarProx::Identity => t,
            ScalarProx::SoftThreshold(tau) => soft_threshold(t, *tau),
            ScalarProx::Interval(lo, hi) => t.clamp(*lo, *hi),
            ScalarProx::Table(knots) => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if t <= first.0 {
                    return first.1;
                }
                if t >= last.0 {
                    return last.1;
                }
                let i = knots.partition_point(|k| k.0 <= t) - 1;
                let (x0, y0) = knots[i];
                let (x1, y1) = knots[i + 1];
                y0 + (y1 - y0) * (t - x0) / (x1 - x0)
            }
        }
    }
}

/// Projections and weights witnessing stationarity of an MMO: for every
/// pair `(x, y)` and every `k`,
/// `||P_k (Q x - Q y)||^2 <= <x - y, W_k (x - y)>` with `Q = 2J - Id`.
#[derive(Clone, Debug)]
pub struct StationaryCertificate {
    pub projections: Vec<LinearMap>,
    pub weights: Vec<DMatrix<f64>>,
    dim: usize,
}

impl StationaryCertificate {
    pub fn new(
        dim: usize,
        projections: Vec<LinearMap>,
        weights: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if dim > MAX_CERT_DIM {
            return Err(Error::Refused(format!(
                "stationarity certificates are limited to dim <= {MAX_CERT_DIM}"
            )));
        }
        if projections.len() != weights.len() || projections.is_empty() {
            return Err(arg_err!("need one weight matrix per projection"));
        }
        let cert = Self {
            projections,
            weights,
            dim,
        };
        cert.validate()?;
        Ok(cert)
    }

    /// `P_k = e_k^T` and `W_k = e_k e_k^T`.
    pub fn coordinates(dim: usize) -> Result<Self> {
        Self::from_unitary(&LinearMap::identity(&[dim]))
    }

    /// `P_k = e_k^T U` and `W_k = P_k^T P_k`, the certificate of a separable
    /// operator conjugated by the orthogonal map `U`.
    pub fn from_unitary(u: &LinearMap) -> Result<Self> {
        let dim = u.domain_dim();
        if dim > MAX_CERT_DIM {
            return Err(Error::Refused(format!(
                "stationarity certificates are limited to dim <= {MAX_CERT_DIM}"
            )));
        }
        let mat = u.to_dense()?;
        let mut projections = Vec::with_capacity(dim);
        let mut weights = Vec::with_capacity(dim);
        for k in 0..dim {
            let row = mat.rows(k, 1).into_owned();
            weights.push(row.transpose() * &row);
            projections.push(LinearMap::dense(row));
        }
        Self::new(dim, projections, weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Checks `sum P_k^* P_k = Id`, `||sum W_k|| <= 1` and that every `W_k`
    /// is symmetric positive semidefinite, all to `1e-10`.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim;
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for p in &self.projections {
            if p.domain_dim() != n {
                return Err(arg_err!("projection domain {} != {n}", p.domain_dim()));
            }
            let m = p.to_dense()?;
            gram += m.transpose() * m;
        }
        let gap = (gram - DMatrix::identity(n, n)).abs().max();
        if gap > 1e-10 {
            return Err(arg_err!("projections do not resolve the identity (gap {gap:e})"));
        }
        let mut total = DMatrix::<f64>::zeros(n, n);
        for (k, w) in self.weights.iter().enumerate() {
            if w.nrows() != n || w.ncols() != n {
                return Err(arg_err!("weight {k} is not {n}x{n}"));
            }
            if (w - w.transpose()).abs().max() > 1e-10 {
                return Err(arg_err!("weight {k} is not symmetric"));
            }
            let min_eig = w.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-10 {
                return Err(arg_err!("weight {k} has eigenvalue {min_eig:e} < 0"));
            }
            total += w;
        }
        let norm = total.symmetric_eigenvalues().abs().max();
        if norm > 1.0 + 1e-10 {
            return Err(arg_err!("sum of weights has norm {norm} > 1"));
        }
        Ok(())
    }
}

/// `J(x) = U^* (p_1((Ux)_1), ..., p_K((Ux)_K))`: the resolvent of `U^* B U`
/// for a separable `B`. The result carries the matching stationarity
/// certificate when the dimension allows one.
pub fn separable_unitary_mmo(u: LinearMap, proxes: Vec<ScalarProx>) -> Result<Resolvent> {
    let dim = u.domain_dim();
    if proxes.len() != dim {
        return Err(arg_err!("{} scalar proxes for dimension {dim}", proxes.len()));
    }
    if !u.is_orthogonal(1e-10) {
        return Err(arg_err!("separable_unitary_mmo needs an orthogonal map"));
    }
    let cert = if dim <= MAX_CERT_DIM {
        Some(StationaryCertificate::from_unitary(&u)?)
    } else {
        None
    };
    let shape = u.domain_shape();
    let mut j = Resolvent::new(&shape, Provenance::SeparableUnitary, move |x| {
        let mut coeffs = u.apply(x).expect("shape checked by caller");
        for (c, p) in coeffs.data_mut().iter_mut().zip(&proxes) {
            *c = p.apply(*c);
        }
        u.adjoint(&coeffs).expect("shape checked by caller").reshape(x.shape()).expect("same size")
    });
    if let Some(c) = cert {
        j = j.with_certificate(c);
    }
    Ok(j)
}

/// Resolvent of the inverse operator, `Id - J`. Keeps the certificate.
pub fn inverse_mmo(j: &Resolvent) -> Resolvent {
    let map = j.map.clone();
    Resolvent {
        map: Arc::new(move |x| x - &map(x)),
        shape: j.shape.clone(),
        provenance: Provenance::InverseOf(Box::new(j.provenance.clone())),
        certificate: j.certificate.clone(),
        warning: j.warning.clone(),
    }
}

/// Resolvent of `rho A(. / rho)`, namely `x -> rho J(x / rho)`. Keeps the
/// certificate.
pub fn scale_mmo(j: &Resolvent, rho: f64) -> Result<Resolvent> {
    if rho == 0.0 || !rho.is_finite() {
        return Err(arg_err!("scale_mmo needs a finite nonzero rho, got {rho}"));
    }
    let map = j.map.clone();
    Ok(Resolvent {
        map: Arc::new(move |x| map(&x.scale(1.0 / rho)).scale(rho)),
        shape: j.shape.clone(),
        provenance: Provenance::Scaled(rho, Box::new(j.provenance.clone())),
        certificate: j.certificate.clone(),
        warning: j.warning.clone(),
    })
}

/// Outcome of a sampling check.
#[derive(Clone, Debug, PartialEq)]
pub struct CertReport {
    pub check: String,
    pub samples: usize,
    /// Largest observed `lhs - rhs` of the checked inequality.
    pub max_violation: f64,
    /// Largest observed Lipschitz-type ratio.
    pub worst_ratio: f64,
}

impl CertReport {
    pub const CSV_HEADER: &'static str = "check,samples,max_violation,worst_ratio";

    pub fn passed(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e}",
            self.check, self.samples, self.max_violation, self.worst_ratio
        )
    }
}

fn sample_pairs<T: Send>(
    rng: &mut Rng,
    pairs: usize,
    shape: &[usize],
    half_width: f64,
    f: impl Fn(&Tensor, &Tensor) -> T + Sync,
) -> Vec<T> {
    let base = Rng::new(rng.next_u64());
    (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut r = base.split(i as u64);
            let x = Tensor::uniform(shape, -half_width, half_width, &mut r);
            let y = Tensor::uniform(shape, -half_width, half_width, &mut r);
            f(&x, &y)
        })
        .collect()
}

/// Samples `pairs` point pairs in `[-half_width, half_width]^K` and reports
/// the largest `||Jx - Jy||^2 - <x - y, Jx - Jy>` and the largest Lipschitz
/// ratio of `2J - Id`.
pub fn check_firm_nonexpansive(
    j: &Resolvent,
    rng: &mut Rng,
    pairs: usize,
    half_width: f64,
) -> CertReport {
    let out = sample_pairs(rng, pairs, &j.shape, half_width, |x, y| {
        let jx = j.apply(x);
        let jy = j.apply(y);
        let dj = &jx - &jy;
        let d = x - y;
        let violation = dj.norm_sq() - d.dot(&dj);
        let dq = &dj.scale(2.0) - &d;
        let ratio = if d.norm() > 0.0 { dq.norm() / d.norm() } else { 0.0 };
        (violation, ratio)
    });
    CertReport {
        check: "firm_nonexpansive".into(),
        samples: pairs,
        max_violation: out.iter().map(|o| o.0).fold(f64::NEG_INFINITY, f64::max),
        worst_ratio: out.iter().map(|o| o.1).fold(0.0, f64::max),
    }
}

/// Graph-monotonicity check: with `x_i = J(z_i)` and `u_i = z_i - x_i`,
/// reports the largest `-<x_1 - x_2, u_1 - u_2>`.
pub fn check_monotone(j: &Resolvent, rng: &mut Rng, pairs: usize, half_width: f64) -> CertReport {
    let out = sample_pairs(rng, pairs, &j.shape, half_width, |z1, z2| {
        let x1 = j.apply(z1);
        let x2 = j.apply(z2);
        let u1 = z1 - &x1;
        let u2 = z2 - &x2;
        -(&x1 - &x2).dot(&(&u1 - &u2))
    });
    CertReport {
        check: "monotone_graph".into(),
        samples: pairs,
        max_violation: out.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        worst_ratio: f64::NAN,
    }
}

/// Reports the largest `||P_k(Qx - Qy)||^2 - <x - y, W_k(x - y)>` over
/// sampled pairs in the default box and over `k`.
pub fn check_stationary(
    j: &Resolvent,
    cert: &StationaryCertificate,
    rng: &mut Rng,
    pairs: usize,
) -> Result<CertReport> {
    cert.validate()?;
    if cert.dim() != j.dim() {
        return Err(arg_err!(
            "certificate dimension {} != resolvent dimension {}",
            cert.dim(),
            j.dim()
        ));
    }
    let q = reflected(j);
    let out = sample_pairs(rng, pairs, &j.shape, DEFAULT_BOX, |x, y| {
        let dq = &q(x) - &q(y);
        let d = nalgebra::DVector::from_column_slice((x - y).data());
        let mut worst = (f64::NEG_INFINITY, 0.0f64);
        for (p, w) in cert.projections.iter().zip(&cert.weights) {
            let lhs = p.apply(&dq).expect("dimension checked").norm_sq();
            let rhs = d.dot(&(w * &d));
            worst.0 = worst.0.max(lhs - rhs);
            if rhs > 0.0 {
                worst.1 = worst.1.max((lhs / rhs).sqrt());
            }
        }
        worst
    });
    Ok(CertReport {
        check: "stationary".into(),
        samples: pairs,
        max_violation: out.iter().map(|o| o.0).fold(f64::NEG_INFINITY, f64::max),
        worst_ratio: out.iter().map(|o| o.1).fold(0.0, f64::max),
    })
}
