//! Procedural blur kernels and a loader for user-supplied ones.
//!
//! All generators return nonnegative kernels that sum to one, so the
//! associated circular convolution has operator norm exactly 1 (the DC
//! response). Kernels are centred at `floor(size / 2)`.

use std::path::Path;

use crate::error::{arg_err, Error, Result};
use crate::io;
use crate::tensor::Tensor;

fn normalized(size: usize, mut data: Vec<f64>) -> Result<Tensor> {
    let s: f64 = data.iter().sum();
    if s <= 0.0 {
        return Err(arg_err!("kernel has no mass"));
    }
    data.iter_mut().for_each(|v| *v /= s);
    Tensor::new(&[size, size], data)
}

pub fn dirac(size: usize) -> Result<Tensor> {
    if size == 0 {
        return Err(arg_err!("kernel size must be positive"));
    }
    let mut d = vec![0.0; size * size];
    d[(size / 2) * size + size / 2] = 1.0;
    Tensor::new(&[size, size], d)
}

/// Isotropic Gaussian with standard deviation `std` (in pixels).
pub fn gaussian(size: usize, std: f64) -> Result<Tensor> {
    if size == 0 || std <= 0.0 {
        return Err(arg_err!("gaussian kernel needs size > 0 and std > 0"));
    }
    let c = (size / 2) as f64;
    let data = (0..size * size)
        .map(|p| {
            let (y, x) = ((p / size) as f64 - c, (p % size) as f64 - c);
            (-(x * x + y * y) / (2.0 * std * std)).exp()
        })
        .collect();
    normalized(size, data)
}

/// Uniform `width x width` box centred in a `size x size` support.
pub fn uniform_square(size: usize, width: usize) -> Result<Tensor> {
    if width == 0 || width > size {
        return Err(arg_err!("square width must be in 1..=size"));
    }
    let start = size / 2 - width / 2;
    let mut data = vec![0.0; size * size];
    for y in start..start + width {
        for x in start..start + width {
            data[y * size + x] = 1.0;
        }
    }
    normalized(size, data)
}

/// Linear motion blur: a segment of `length` pixels through the centre at
/// `angle` radians, rasterized with bilinear splatting.
pub fn motion_line(size: usize, length: f64, angle: f64) -> Result<Tensor> {
    if size == 0 || length < 0.0 {
        return Err(arg_err!("motion kernel needs size > 0 and length >= 0"));
    }
    let c = (size / 2) as f64;
    let mut data = vec![0.0; size * size];
    let steps = (length * 8.0).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = if steps == 0 { 0.0 } else { s as f64 / steps as f64 - 0.5 };
        let x = c + t * length * angle.cos();
        let y = c + t * length * angle.sin();
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let (yy, xx) = (y0 + dy, x0 + dx);
                if yy >= 0.0 && xx >= 0.0 && (yy as usize) < size && (xx as usize) < size {
                    data[yy as usize * size + xx as usize] += wy * wx;
                }
            }
        }
    }
    normalized(size, data)
}

/// Euclidean norm of the kernel coefficients.
pub fn l2_norm(kernel: &Tensor) -> f64 {
    kernel.norm()
}

/// Loads a kernel from an `NTF1` file or an 8-bit PGM. PGM kernels are
/// normalized to unit sum; `NTF1` kernels are taken verbatim.
pub fn load_kernel(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => {
            let img = io::load_pnm(path)?;
            let (_, h, w) = img.dims3();
            if h != w {
                return Err(Error::Format("PGM kernels must be square".into()));
            }
            normalized(h, img.into_data())
        }
        _ => io::load_ntf(path),
    }
}

/// The procedural stand-in set with stable names.
pub fn standard_set() -> Vec<(&'static str, Tensor)> {
    vec![
        ("gaussian", gaussian(9, 1.6).unwrap()),
        ("motion", motion_line(9, 7.0, 0.6).unwrap()),
        ("square", uniform_square(7, 5).unwrap()),
    ]
}
