//! Linear operators with paired forward and adjoint application.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::conv::{self, BankShape};
use crate::error::{arg_err, dim_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A bounded linear operator between two tensor shapes.
///
/// Every variant implements both `apply` and `adjoint`, and they satisfy
/// `<L x, y> = <x, L* y>`. Cloning is cheap: heavy payloads sit behind `Arc`.
#[derive(Clone, Debug)]
pub enum LinearMap {
    Identity { shape: Vec<usize> },
    Scaled { factor: f64, inner: Box<LinearMap> },
    Convolution(Arc<Convolution>),
    ConvBank(Arc<ConvBank>),
    Orthogonal(Arc<Householder>),
    Haar(Haar),
    Dense(Arc<Dense>),
    /// Maps applied in order: `maps[0]` first.
    Composition(Vec<LinearMap>),
}

impl LinearMap {
    pub fn identity(shape: &[usize]) -> Self {
        LinearMap::Identity {
            shape: shape.to_vec(),
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        LinearMap::Scaled {
            factor,
            inner: Box::new(self),
        }
    }

    pub fn convolution(kernel: Tensor, image_shape: &[usize]) -> Result<Self> {
        Ok(LinearMap::Convolution(Arc::new(Convolution::new(
            kernel,
            image_shape,
        )?)))
    }

    pub fn dense(matrix: DMatrix<f64>) -> Self {
        LinearMap::Dense(Arc::new(Dense::new(matrix)))
    }

    /// Composition applying `first` then `second`.
    pub fn then(self, second: LinearMap) -> Result<Self> {
        let a: usize = self.codomain_shape().iter().product();
        let b: usize = second.domain_shape().iter().product();
        if a != b {
            return Err(dim_err!("cannot compose: {a} outputs feed {b} inputs"));
        }
        let mut maps = match self {
            LinearMap::Composition(m) => m,
            other => vec![other],
        };
        maps.push(second);
        Ok(LinearMap::Composition(maps))
    }

    pub fn domain_shape(&self) -> Vec<usize> {
        match self {
            LinearMap::Identity { shape } => shape.clone(),
            LinearMap::Scaled { inner, .. } => inner.domain_shape(),
            LinearMap::Convolution(c) => c.shape.clone(),
            LinearMap::ConvBank(b) => vec![b.shape.cin, b.shape.h, b.shape.w],
            LinearMap::Orthogonal(u) => vec![u.dim],
            LinearMap::Haar(h) => h.shape.clone(),
            LinearMap::Dense(d) => vec![d.matrix.ncols()],
            LinearMap::Composition(m) => m[0].domain_shape(),
        }
    }

    pub fn codomain_shape(&self) -> Vec<usize> {
        match self {
            LinearMap::ConvBank(b) => vec![b.shape.cout, b.shape.h, b.shape.w],
            LinearMap::Dense(d) => vec![d.matrix.nrows()],
            LinearMap::Scaled { inner, .. } => inner.codomain_shape(),
            LinearMap::Composition(m) => m[m.len() - 1].codomain_shape(),
            _ => self.domain_shape(),
        }
    }

    pub fn domain_dim(&self) -> usize {
        self.domain_shape().iter().product()
    }

    fn reshape_in(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if x.len() != n {
            return Err(dim_err!(
                "operator expects {n} entries ({shape:?}), got {:?}",
                x.shape()
            ));
        }
        x.clone().reshape(shape)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let x = Self::reshape_in(x, &self.domain_shape())?;
        Ok(match self {
            LinearMap::Identity { .. } => x,
            LinearMap::Scaled { factor, inner } => inner.apply(&x)?.scale(*factor),
            LinearMap::Convolution(c) => c.apply(&x, false),
            LinearMap::ConvBank(b) => b.apply(&x),
            LinearMap::Orthogonal(u) => u.apply(&x, false),
            LinearMap::Haar(h) => h.run(&x, h.synthesis),
            LinearMap::Dense(d) => d.apply(&x, false),
            LinearMap::Composition(maps) => {
                let mut y = x;
                for m in maps {
                    y = m.apply(&y)?;
                }
                y
            }
        })
    }

    pub fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        let y = Self::reshape_in(y, &self.codomain_shape())?;
        Ok(match self {
            LinearMap::Identity { .. } => y,
            LinearMap::Scaled { factor, inner } => inner.adjoint(&y)?.scale(*factor),
            LinearMap::Convolution(c) => c.apply(&y, true),
            LinearMap::ConvBank(b) => b.adjoint(&y),
            LinearMap::Orthogonal(u) => u.apply(&y, true),
            LinearMap::Haar(h) => h.run(&y, !h.synthesis),
            LinearMap::Dense(d) => d.apply(&y, true),
            LinearMap::Composition(maps) => {
                let mut x = y;
                for m in maps.iter().rev() {
                    x = m.adjoint(&x)?;
                }
                x
            }
        })
    }

    /// Dense matrix of the operator, column by column. Test and oracle use
    /// only.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let n = self.domain_dim();
        let m: usize = self.codomain_shape().iter().product();
        if n > 4096 || m > 4096 {
            return Err(crate::error::Error::Refused(format!(
                "materializing a {m}x{n} operator"
            )));
        }
        let shape = self.domain_shape();
        let mut out = DMatrix::zeros(m, n);
        for j in 0..n {
            let col = self.apply(&Tensor::basis(&shape, j))?;
            for (i, v) in col.data().iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        Ok(out)
    }

    /// Probabilistic orthogonality test: `L* L x = x` on a few random `x`.
    pub fn is_orthogonal(&self, tol: f64) -> bool {
        if self.domain_dim() != self.codomain_shape().iter().product::<usize>() {
            return false;
        }
        let mut rng = Rng::new(0x0a7e);
        let shape = self.domain_shape();
        (0..3).all(|_| {
            let x = Tensor::randn(&shape, &mut rng);
            match self.apply(&x).and_then(|y| self.adjoint(&y)) {
                Ok(back) => back.distance(&x) <= tol * (1.0 + x.norm()),
                Err(_) => false,
            }
        })
    }
}

/// Circular convolution with a fixed kernel on images of a fixed shape.
#[derive(Debug)]
pub struct Convolution {
    kernel: Tensor,
    shape: Vec<usize>,
    spectra: Option<Vec<Vec<Complex64>>>,
}

impl Convolution {
    pub fn new(kernel: Tensor, image_shape: &[usize]) -> Result<Self> {
        let probe = Tensor::zeros(image_shape);
        let (kc, kh, kw) = kernel.dims3();
        let (c, h, w) = probe.dims3();
        if (kc != 1 && kc != c) || kh > h || kw > w {
            return Err(dim_err!(
                "kernel {:?} incompatible with image {image_shape:?}",
                kernel.shape()
            ));
        }
        // single-tap kernels (shifts) stay on the direct path, which is exact
        let taps = kernel.data().iter().filter(|v| **v != 0.0).count();
        let spectra = (taps > 1 && conv::is_fft_friendly(h) && conv::is_fft_friendly(w)).then(|| {
            (0..kc)
                .map(|k| {
                    conv::kernel_spectrum(&kernel.data()[k * kh * kw..][..kh * kw], kh, kw, h, w)
                })
                .collect()
        });
        Ok(Self {
            kernel,
            shape: image_shape.to_vec(),
            spectra,
        })
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    fn apply(&self, x: &Tensor, adjoint: bool) -> Tensor {
        match &self.spectra {
            Some(s) => conv::apply_spectrum(s, x, adjoint),
            None => conv::circ_conv_direct(&self.kernel, x, adjoint).expect("shape checked"),
        }
    }

    /// Exact operator norm: the largest DFT magnitude of the kernel
    /// (maximized over kernel channels).
    pub fn exact_norm(&self) -> f64 {
        let (kc, kh, kw) = self.kernel.dims3();
        let (_, h, w) = Tensor::zeros(&self.shape).dims3();
        (0..kc)
            .flat_map(|k| {
                conv::kernel_spectrum(&self.kernel.data()[k * kh * kw..][..kh * kw], kh, kw, h, w)
            })
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// Multi-channel circular convolution bank (the linear part of a
/// convolutional network layer).
#[derive(Debug)]
pub struct ConvBank {
    pub shape: BankShape,
    pub weights: Vec<f64>,
}

impl ConvBank {
    pub fn new(shape: BankShape, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != shape.cout * shape.cin * shape.k * shape.k {
            return Err(dim_err!("bank weights have wrong length {}", weights.len()));
        }
        Ok(Self { shape, weights })
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        let s = self.shape;
        let mut out = Tensor::zeros(&[s.cout, s.h, s.w]);
        conv::bank_forward(s, &self.weights, x.data(), out.data_mut());
        out
    }

    fn adjoint(&self, y: &Tensor) -> Tensor {
        let s = self.shape;
        let mut out = Tensor::zeros(&[s.cin, s.h, s.w]);
        conv::bank_adjoint(s, &self.weights, y.data(), out.data_mut());
        out
    }

    /// Exact operator norm: maximum over frequencies of the largest singular
    /// value of the `cout x cin` block symbol.
    pub fn exact_norm(&self) -> f64 {
        let s = self.shape;
        conv::bank_symbols(s, &self.weights)
            .into_iter()
            .map(|block| {
                let m = DMatrix::from_row_slice(s.cout, s.cin, &block);
                m.singular_values().max()
            })
            .fold(0.0, f64::max)
    }
}

/// Dense matrix acting on flat vectors.
#[derive(Debug)]
pub struct Dense {
    pub matrix: DMatrix<f64>,
}

impl Dense {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    fn apply(&self, x: &Tensor, transpose: bool) -> Tensor {
        let v = nalgebra::DVector::from_column_slice(x.data());
        let y = if transpose {
            self.matrix.tr_mul(&v)
        } else {
            &self.matrix * v
        };
        Tensor::from_vec(y.as_slice().to_vec())
    }
}

/// Product of `dim` Householder reflections `H_1 H_2 ... H_dim`, each
/// `H_i = I - 2 v_i v_i^T` with unit `v_i` drawn from a seeded Gaussian.
#[derive(Debug)]
pub struct Householder {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl Householder {
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn reflect(v: &[f64], x: &mut [f64]) {
        let d: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi -= 2.0 * d * vi;
        }
    }

    fn apply(&self, x: &Tensor, adjoint: bool) -> Tensor {
        let mut out = x.clone();
        let data = out.data_mut();
        if adjoint {
            for v in &self.vectors {
                Self::reflect(v, data);
            }
        } else {
            for v in self.vectors.iter().rev() {
                Self::reflect(v, data);
            }
        }
        out
    }
}

/// Deterministic orthogonal map on `R^dim` built from Householder
/// reflections seeded by `seed`.
pub fn orthogonal_from_seed(seed: u64, dim: usize) -> Result<LinearMap> {
    if dim == 0 {
        return Err(arg_err!("orthogonal map needs dim >= 1"));
    }
    let mut rng = Rng::new(seed);
    let vectors = (0..dim)
        .map(|_| loop {
            let v = rng.normal_vec(dim);
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-8 {
                break v.into_iter().map(|a| a / n).collect();
            }
        })
        .collect();
    Ok(LinearMap::Orthogonal(Arc::new(Householder { dim, vectors })))
}

/// Orthonormal multi-level 2-D Haar transform, applied per channel.
///
/// Each level transforms the top-left `(h >> l) x (w >> l)` block along
/// rows and then columns; axes of extent 1 are left alone, so flat signals
/// get the 1-D transform.
#[derive(Clone, Debug)]
pub struct Haar {
    shape: Vec<usize>,
    levels: usize,
    /// Maps coefficients to images instead of images to coefficients.
    synthesis: bool,
}

/// Analysis transform: image to coefficients, coarsest band in the top-left
/// corner of each channel.
pub fn haar(shape: &[usize], levels: usize) -> Result<LinearMap> {
    haar_map(shape, levels, false)
}

/// Synthesis transform, the inverse (and adjoint) of [`haar`]. This is the
/// `Psi` expected by [`crate::solve::prox_l1_synthesis`].
pub fn haar_synthesis(shape: &[usize], levels: usize) -> Result<LinearMap> {
    haar_map(shape, levels, true)
}

fn haar_map(shape: &[usize], levels: usize, synthesis: bool) -> Result<LinearMap> {
    let t = Tensor::zeros(shape);
    let (_, h, w) = t.dims3();
    let block = 1usize << levels;
    for (name, n) in [("height", h), ("width", w)] {
        if n > 1 && n % block != 0 {
            return Err(arg_err!(
                "{name} {n} not divisible by 2^{levels} for a {levels}-level Haar transform"
            ));
        }
    }
    Ok(LinearMap::Haar(Haar {
        shape: shape.to_vec(),
        levels,
        synthesis,
    }))
}

impl Haar {
    fn step(buf: &mut [f64], tmp: &mut Vec<f64>, inverse: bool) {
        let n = buf.len();
        let half = n / 2;
        let r = std::f64::consts::FRAC_1_SQRT_2;
        tmp.clear();
        tmp.resize(n, 0.0);
        if inverse {
            for k in 0..half {
                let (a, d) = (buf[k], buf[half + k]);
                tmp[2 * k] = (a + d) * r;
                tmp[2 * k + 1] = (a - d) * r;
            }
        } else {
            for k in 0..half {
                let (p, q) = (buf[2 * k], buf[2 * k + 1]);
                tmp[k] = (p + q) * r;
                tmp[half + k] = (p - q) * r;
            }
        }
        buf.copy_from_slice(tmp);
    }

    fn level(plane: &mut [f64], w: usize, bh: usize, bw: usize, inverse: bool) {
        let mut tmp = Vec::new();
        let mut line = Vec::new();
        // rows then columns forward; the two axes commute, so the inverse
        // may use the same order
        if bw > 1 {
            for y in 0..bh {
                Self::step(&mut plane[y * w..y * w + bw], &mut tmp, inverse);
            }
        }
        if bh > 1 {
            for x in 0..bw {
                line.clear();
                line.extend((0..bh).map(|y| plane[y * w + x]));
                Self::step(&mut line, &mut tmp, inverse);
                for y in 0..bh {
                    plane[y * w + x] = line[y];
                }
            }
        }
    }

    fn run(&self, x: &Tensor, inverse: bool) -> Tensor {
        let mut out = x.clone();
        let (c, h, w) = x.dims3();
        let levels: Vec<usize> = if inverse {
            (0..self.levels).rev().collect()
        } else {
            (0..self.levels).collect()
        };
        for ch in 0..c {
            let plane = &mut out.data_mut()[ch * h * w..][..h * w];
            for &l in &levels {
                let bh = if h > 1 { h >> l } else { 1 };
                let bw = if w > 1 { w >> l } else { 1 };
                Self::level(plane, w, bh, bw, inverse);
            }
        }
        out
    }
}

/// Power-iteration estimate of the operator norm `||L||`.
///
/// Iterates `v <- L*L v / ||L*L v||` from a seeded Gaussian start and
/// returns the largest `||L v||` seen, so the estimate is nondecreasing in
/// `iters` and never exceeds the true norm (up to rounding). Returns 0 for
/// the zero operator.
pub fn op_norm(op: &LinearMap, iters: usize, rng: &mut Rng) -> Result<f64> {
    if iters == 0 {
        return Err(arg_err!("op_norm needs at least one iteration"));
    }
    let shape = op.domain_shape();
    let mut v = Tensor::randn(&shape, rng);
    let n = v.norm();
    v = v.scale(1.0 / n);
    let mut best: f64 = 0.0;
    for _ in 0..iters {
        let lv = op.apply(&v)?;
        best = best.max(lv.norm());
        let w = op.adjoint(&lv)?;
        let wn = w.norm();
        if wn == 0.0 || !wn.is_finite() {
            break;
        }
        v = w.scale(1.0 / wn);
    }
    Ok(best)
}
