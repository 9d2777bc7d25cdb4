//! Periodic (circular) convolution.
//!
//! Two families live here:
//!
//! * single-kernel blur, `(h * x)[p] = sum_q h[q] x[p - (q - c)]`, where the
//!   kernel centre is `c = floor(size / 2)` along each axis. The adjoint is
//!   the matching correlation. Computed through a 2-D FFT when both image
//!   extents factor over {2, 3, 5}, by direct summation otherwise.
//! * convolution banks for network layers, `out[o] = sum_i w[o, i] ⋆ in[i]`
//!   written as a correlation with centred `k x k` kernels (`k` odd).

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// True when `n` has no prime factor other than 2, 3 and 5.
pub fn is_fft_friendly(mut n: usize) -> bool {
    if n == 0 {
        return false;
    }
    for p in [2, 3, 5] {
        while n % p == 0 {
            n /= p;
        }
    }
    n == 1
}

/// Circular convolution of `x` with `kernel`, or its adjoint (correlation).
///
/// `kernel` may have one channel (broadcast over the image channels) or as
/// many channels as `x`. Dispatches to [`circ_conv_fft`] when both spatial
/// extents of `x` are FFT friendly and to [`circ_conv_direct`] otherwise.
pub fn circ_conv_apply(kernel: &Tensor, x: &Tensor, adjoint: bool) -> Result<Tensor> {
    let (_, h, w) = x.dims3();
    if is_fft_friendly(h) && is_fft_friendly(w) {
        circ_conv_fft(kernel, x, adjoint)
    } else {
        circ_conv_direct(kernel, x, adjoint)
    }
}

fn check_kernel(kernel: &Tensor, x: &Tensor) -> Result<(usize, usize, usize)> {
    let (kc, kh, kw) = kernel.dims3();
    let (c, h, w) = x.dims3();
    if kc != 1 && kc != c {
        return Err(dim_err!("kernel has {kc} channels, image has {c}"));
    }
    if kh > h || kw > w {
        return Err(dim_err!(
            "kernel {kh}x{kw} larger than image {h}x{w}"
        ));
    }
    Ok((kc, kh, kw))
}

/// Direct-summation circular convolution.
pub fn circ_conv_direct(kernel: &Tensor, x: &Tensor, adjoint: bool) -> Result<Tensor> {
    let (kc, kh, kw) = check_kernel(kernel, x)?;
    let (c, h, w) = x.dims3();
    let (ch, cw) = (kh / 2, kw / 2);
    let mut out = Tensor::zeros_like(x);
    let plane = h * w;
    for ci in 0..c {
        let kplane = &kernel.data()[(if kc == 1 { 0 } else { ci }) * kh * kw..][..kh * kw];
        let src = &x.data()[ci * plane..][..plane];
        let dst = &mut out.data_mut()[ci * plane..][..plane];
        for i in 0..kh {
            for j in 0..kw {
                let kv = kplane[i * kw + j];
                if kv == 0.0 {
                    continue;
                }
                // convolution reads x[p - (q - c)], correlation x[p + (q - c)]
                let (dy, dx) = if adjoint {
                    (i as isize - ch as isize, j as isize - cw as isize)
                } else {
                    (ch as isize - i as isize, cw as isize - j as isize)
                };
                for y in 0..h {
                    let sy = (y as isize + dy).rem_euclid(h as isize) as usize;
                    add_scaled_shifted(
                        &mut dst[y * w..(y + 1) * w],
                        &src[sy * w..(sy + 1) * w],
                        kv,
                        dx,
                    );
                }
            }
        }
    }
    Ok(out)
}

/// `dst[x] += a * src[(x + shift) mod n]`.
#[inline]
pub(crate) fn add_scaled_shifted(dst: &mut [f64], src: &[f64], a: f64, shift: isize) {
    let n = dst.len();
    let s = shift.rem_euclid(n as isize) as usize;
    let (d_head, d_tail) = dst.split_at_mut(n - s);
    for (d, v) in d_head.iter_mut().zip(&src[s..]) {
        *d += a * v;
    }
    for (d, v) in d_tail.iter_mut().zip(&src[..s]) {
        *d += a * v;
    }
}

/// `sum_x a[x] * b[(x + shift) mod n]`.
#[cfg(test)]
#[inline]
pub(crate) fn dot_shifted(a: &[f64], b: &[f64], shift: isize) -> f64 {
    let n = a.len();
    let s = shift.rem_euclid(n as isize) as usize;
    let head: f64 = a[..n - s].iter().zip(&b[s..]).map(|(p, q)| p * q).sum();
    let tail: f64 = a[n - s..].iter().zip(&b[..s]).map(|(p, q)| p * q).sum();
    head + tail
}

/// In-place 2-D DFT of a row-major `h x w` plane. The inverse is scaled by
/// `1 / (h w)`.
pub fn fft2(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    assert_eq!(data.len(), h * w);
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in data.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
    if inverse {
        let s = 1.0 / (h * w) as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}

/// DFT of a centred `kh x kw` kernel plane embedded periodically into an
/// `h x w` grid (centre moved to the origin).
pub fn kernel_spectrum(plane: &[f64], kh: usize, kw: usize, h: usize, w: usize) -> Vec<Complex64> {
    let (ch, cw) = (kh / 2, kw / 2);
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..kh {
        for j in 0..kw {
            let y = (i as isize - ch as isize).rem_euclid(h as isize) as usize;
            let x = (j as isize - cw as isize).rem_euclid(w as isize) as usize;
            buf[y * w + x] += plane[i * kw + j];
        }
    }
    fft2(&mut buf, h, w, false);
    buf
}

/// Multiply each channel of `x` by a precomputed spectrum (conjugated for the
/// adjoint) and transform back.
pub(crate) fn apply_spectrum(
    spectra: &[Vec<Complex64>],
    x: &Tensor,
    adjoint: bool,
) -> Tensor {
    let (c, h, w) = x.dims3();
    let plane = h * w;
    let mut out = Tensor::zeros_like(x);
    let mut buf = vec![Complex64::new(0.0, 0.0); plane];
    for ci in 0..c {
        let spec = &spectra[if spectra.len() == 1 { 0 } else { ci }];
        for (b, v) in buf.iter_mut().zip(&x.data()[ci * plane..][..plane]) {
            *b = Complex64::new(*v, 0.0);
        }
        fft2(&mut buf, h, w, false);
        for (b, s) in buf.iter_mut().zip(spec) {
            *b *= if adjoint { s.conj() } else { *s };
        }
        fft2(&mut buf, h, w, true);
        for (o, b) in out.data_mut()[ci * plane..][..plane].iter_mut().zip(&buf) {
            *o = b.re;
        }
    }
    out
}

/// FFT-based circular convolution; works for any extents.
pub fn circ_conv_fft(kernel: &Tensor, x: &Tensor, adjoint: bool) -> Result<Tensor> {
    let (kc, kh, kw) = check_kernel(kernel, x)?;
    let (_, h, w) = x.dims3();
    let spectra: Vec<_> = (0..kc)
        .map(|k| kernel_spectrum(&kernel.data()[k * kh * kw..][..kh * kw], kh, kw, h, w))
        .collect();
    Ok(apply_spectrum(&spectra, x, adjoint))
}

/// Geometry of a convolution bank acting on `(cin, h, w)` images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BankShape {
    pub cout: usize,
    pub cin: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
}

impl BankShape {
    fn weight(&self, w: &[f64], o: usize, i: usize) -> usize {
        debug_assert_eq!(w.len(), self.cout * self.cin * self.k * self.k);
        (o * self.cin + i) * self.k * self.k
    }
}

/// Loop reference for [`bank_forward`].
#[cfg(test)]
pub(crate) fn bank_forward_direct(s: BankShape, weights: &[f64], input: &[f64], out: &mut [f64]) {
    let plane = s.h * s.w;
    let c = (s.k / 2) as isize;
    for o in 0..s.cout {
        let dst = &mut out[o * plane..][..plane];
        for i in 0..s.cin {
            let src = &input[i * plane..][..plane];
            let wb = s.weight(weights, o, i);
            for dy in 0..s.k {
                for dx in 0..s.k {
                    let wv = weights[wb + dy * s.k + dx];
                    let oy = dy as isize - c;
                    let ox = dx as isize - c;
                    for y in 0..s.h {
                        let sy = (y as isize + oy).rem_euclid(s.h as isize) as usize;
                        add_scaled_shifted(
                            &mut dst[y * s.w..(y + 1) * s.w],
                            &src[sy * s.w..(sy + 1) * s.w],
                            wv,
                            ox,
                        );
                    }
                }
            }
        }
    }
}

/// Adjoint of [`bank_forward_direct`] with respect to the input, accumulated.
#[cfg(test)]
pub(crate) fn bank_adjoint_direct(s: BankShape, weights: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    let plane = s.h * s.w;
    let c = (s.k / 2) as isize;
    for i in 0..s.cin {
        let dst = &mut grad_in[i * plane..][..plane];
        for o in 0..s.cout {
            let src = &grad_out[o * plane..][..plane];
            let wb = s.weight(weights, o, i);
            for dy in 0..s.k {
                for dx in 0..s.k {
                    let wv = weights[wb + dy * s.k + dx];
                    let oy = dy as isize - c;
                    let ox = dx as isize - c;
                    for y in 0..s.h {
                        let sy = (y as isize - oy).rem_euclid(s.h as isize) as usize;
                        add_scaled_shifted(
                            &mut dst[y * s.w..(y + 1) * s.w],
                            &src[sy * s.w..(sy + 1) * s.w],
                            wv,
                            -ox,
                        );
                    }
                }
            }
        }
    }
}

/// Gradient of `<grad_out, bank_forward_direct(w, input)>` with respect to `w`,
/// accumulated.
#[cfg(test)]
pub(crate) fn bank_weight_grad_direct(s: BankShape, input: &[f64], grad_out: &[f64], grad_w: &mut [f64]) {
    let plane = s.h * s.w;
    let c = (s.k / 2) as isize;
    for o in 0..s.cout {
        let g = &grad_out[o * plane..][..plane];
        for i in 0..s.cin {
            let src = &input[i * plane..][..plane];
            let wb = s.weight(grad_w, o, i);
            for dy in 0..s.k {
                for dx in 0..s.k {
                    let oy = dy as isize - c;
                    let ox = dx as isize - c;
                    let mut acc = 0.0;
                    for y in 0..s.h {
                        let sy = (y as isize + oy).rem_euclid(s.h as isize) as usize;
                        acc += dot_shifted(
                            &g[y * s.w..(y + 1) * s.w],
                            &src[sy * s.w..(sy + 1) * s.w],
                            ox,
                        );
                    }
                    grad_w[wb + dy * s.k + dx] += acc;
                }
            }
        }
    }
}

/// Shifted copies of the input planes: column `r = (i, dy, dx)` of the
/// returned `h w x cin k k` column-major matrix holds
/// `in[i][(y + dy - c) mod h][(x + dx - c) mod w]` at row `y w + x`.
fn im2col(s: BankShape, input: &[f64]) -> Vec<f64> {
    let plane = s.h * s.w;
    let c = (s.k / 2) as isize;
    let mut col = vec![0.0; plane * s.cin * s.k * s.k];
    for i in 0..s.cin {
        let src = &input[i * plane..][..plane];
        for dy in 0..s.k {
            for dx in 0..s.k {
                let r = (i * s.k + dy) * s.k + dx;
                let dst = &mut col[r * plane..][..plane];
                let ox = (dx as isize - c).rem_euclid(s.w as isize) as usize;
                for y in 0..s.h {
                    let sy = (y as isize + dy as isize - c).rem_euclid(s.h as isize) as usize;
                    let row = &src[sy * s.w..(sy + 1) * s.w];
                    let d = &mut dst[y * s.w..(y + 1) * s.w];
                    d[..s.w - ox].copy_from_slice(&row[ox..]);
                    d[s.w - ox..].copy_from_slice(&row[..ox]);
                }
            }
        }
    }
    col
}

/// Adds the columns of an `im2col` layout back onto the input planes.
fn col2im_add(s: BankShape, col: &[f64], out: &mut [f64]) {
    let plane = s.h * s.w;
    let c = (s.k / 2) as isize;
    for i in 0..s.cin {
        let dst = &mut out[i * plane..][..plane];
        for dy in 0..s.k {
            for dx in 0..s.k {
                let r = (i * s.k + dy) * s.k + dx;
                let src = &col[r * plane..][..plane];
                let ox = (dx as isize - c).rem_euclid(s.w as isize) as usize;
                for y in 0..s.h {
                    let sy = (y as isize + dy as isize - c).rem_euclid(s.h as isize) as usize;
                    let row = &mut dst[sy * s.w..(sy + 1) * s.w];
                    let g = &src[y * s.w..(y + 1) * s.w];
                    for (a, b) in row[ox..].iter_mut().zip(&g[..s.w - ox]) {
                        *a += b;
                    }
                    for (a, b) in row[..ox].iter_mut().zip(&g[s.w - ox..]) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// `C (m x n) += A (m x k) B (k x n)` with explicit row and column strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    assert!(c.len() >= (m - 1) * rsc + (n - 1) * csc + 1);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `out[o][p] += sum_{i,dy,dx} w[o,i,dy,dx] in[i][p + (dy - c, dx - c)]`
/// (centred circular correlation).
pub(crate) fn bank_forward(s: BankShape, weights: &[f64], input: &[f64], out: &mut [f64]) {
    let plane = s.h * s.w;
    let r = s.cin * s.k * s.k;
    let col = im2col(s, input);
    // out^T (plane x cout) += col (plane x r) * W^T (r x cout)
    gemm_acc(plane, r, s.cout, &col, (1, plane), weights, (1, r), out, (1, plane));
}

/// Adjoint of [`bank_forward`] with respect to the input, accumulated.
pub(crate) fn bank_adjoint(s: BankShape, weights: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    let plane = s.h * s.w;
    let r = s.cin * s.k * s.k;
    let mut col = vec![0.0; plane * r];
    // col (plane x r) = g^T (plane x cout) * W (cout x r)
    gemm_acc(plane, s.cout, r, grad_out, (1, plane), weights, (r, 1), &mut col, (1, plane));
    col2im_add(s, &col, grad_in);
}

/// Gradient of `<grad_out, bank_forward(w, input)>` with respect to `w`,
/// accumulated.
pub(crate) fn bank_weight_grad(s: BankShape, input: &[f64], grad_out: &[f64], grad_w: &mut [f64]) {
    let plane = s.h * s.w;
    let r = s.cin * s.k * s.k;
    let col = im2col(s, input);
    // dW (cout x r) += g (cout x plane) * col (plane x r)
    gemm_acc(s.cout, plane, r, grad_out, (plane, 1), &col, (1, plane), grad_w, (r, 1));
}

/// Per-frequency block symbol of a bank: for every frequency, the
/// `cout x cin` complex matrix whose largest singular value bounds the
/// layer gain at that frequency. Returned as `h*w` row-major blocks.
pub(crate) fn bank_symbols(s: BankShape, weights: &[f64]) -> Vec<Vec<Complex64>> {
    let mut per_pair = Vec::with_capacity(s.cout * s.cin);
    for o in 0..s.cout {
        for i in 0..s.cin {
            let wb = s.weight(weights, o, i);
            // correlation with kernel w equals convolution with the flipped kernel
            let mut flipped = vec![0.0; s.k * s.k];
            for dy in 0..s.k {
                for dx in 0..s.k {
                    flipped[(s.k - 1 - dy) * s.k + (s.k - 1 - dx)] = weights[wb + dy * s.k + dx];
                }
            }
            per_pair.push(kernel_spectrum(&flipped, s.k, s.k, s.h, s.w));
        }
    }
    (0..s.h * s.w)
        .map(|f| per_pair.iter().map(|spec| spec[f]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn averaging_kernel_on_two_samples() {
        let k = Tensor::from_vec(vec![0.5, 0.5]);
        let x = Tensor::from_vec(vec![1.0, 3.0]);
        for y in [
            circ_conv_direct(&k, &x, false).unwrap(),
            circ_conv_fft(&k, &x, false).unwrap(),
        ] {
            assert!((y.data()[0] - 2.0).abs() < 1e-14);
            assert!((y.data()[1] - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn dirac_is_identity() {
        let mut rng = Rng::new(1);
        let x = Tensor::randn(&[2, 6, 7], &mut rng);
        for size in [1usize, 3, 4, 5] {
            let mut d = vec![0.0; size * size];
            d[(size / 2) * size + size / 2] = 1.0;
            let k = Tensor::new(&[size, size], d).unwrap();
            let y = circ_conv_apply(&k, &x, false).unwrap();
            assert!(y.distance(&x) < 1e-12, "size {size}");
            let y = circ_conv_apply(&k, &x, true).unwrap();
            assert!(y.distance(&x) < 1e-12, "adjoint size {size}");
        }
    }

    #[test]
    fn kernel_too_large_or_wrong_channels() {
        let x = Tensor::zeros(&[1, 3, 3]);
        assert!(circ_conv_apply(&Tensor::zeros(&[4, 4]), &x, false).is_err());
        assert!(circ_conv_apply(&Tensor::zeros(&[2, 1, 1]), &x, false).is_err());
    }

    #[test]
    fn fft_friendly_sizes() {
        assert!(is_fft_friendly(1));
        assert!(is_fft_friendly(60));
        assert!(!is_fft_friendly(7));
        assert!(!is_fft_friendly(0));
    }

    #[test]
    fn bank_adjoint_and_weight_grad_are_consistent() {
        let mut rng = Rng::new(9);
        let s = BankShape { cout: 3, cin: 2, k: 3, h: 5, w: 4 };
        let w = rng.normal_vec(3 * 2 * 9);
        let x = rng.normal_vec(2 * 20);
        let g = rng.normal_vec(3 * 20);
        let mut y = vec![0.0; 3 * 20];
        bank_forward(s, &w, &x, &mut y);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut gx = vec![0.0; 2 * 20];
        bank_adjoint(s, &w, &g, &mut gx);
        let rhs: f64 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
        // linear in w, so <g, F(w)> = <grad_w, w>
        let mut gw = vec![0.0; w.len()];
        bank_weight_grad(s, &x, &g, &mut gw);
        let rhs_w: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn gemm_path_matches_loops() {
        let mut rng = Rng::new(10);
        for s in [
            BankShape { cout: 3, cin: 2, k: 3, h: 5, w: 4 },
            BankShape { cout: 1, cin: 4, k: 5, h: 6, w: 7 },
            BankShape { cout: 2, cin: 1, k: 1, h: 3, w: 3 },
        ] {
            let plane = s.h * s.w;
            let w = rng.normal_vec(s.cout * s.cin * s.k * s.k);
            let x = rng.normal_vec(s.cin * plane);
            let g = rng.normal_vec(s.cout * plane);
            let (mut a, mut b) = (vec![0.5; s.cout * plane], vec![0.5; s.cout * plane]);
            bank_forward(s, &w, &x, &mut a);
            bank_forward_direct(s, &w, &x, &mut b);
            assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-12));
            let (mut a, mut b) = (vec![0.0; s.cin * plane], vec![0.0; s.cin * plane]);
            bank_adjoint(s, &w, &g, &mut a);
            bank_adjoint_direct(s, &w, &g, &mut b);
            assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-12));
            let (mut a, mut b) = (vec![0.0; w.len()], vec![0.0; w.len()]);
            bank_weight_grad(s, &x, &g, &mut a);
            bank_weight_grad_direct(s, &x, &g, &mut b);
            assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-12));
        }
    }
}
