//! Procedural toy corpus: piecewise-constant rectangles over a flat
//! background with a few smooth Gaussian bumps, values in `[0, 1]`.

use crate::rng::Rng;
use crate::tensor::Tensor;

/// One `1 x size x size` cartoon image.
pub fn cartoon(size: usize, rng: &mut Rng) -> Tensor {
    let s = size as f64;
    let mut img = vec![rng.uniform_in(0.1, 0.5); size * size];
    let rects = 2 + rng.index(4);
    for _ in 0..rects {
        let (h, w) = (rng.uniform_in(0.15, 0.6) * s, rng.uniform_in(0.15, 0.6) * s);
        let (y0, x0) = (rng.uniform_in(0.0, s - h), rng.uniform_in(0.0, s - w));
        let level = rng.uniform_in(0.0, 1.0);
        for y in y0.round() as usize..((y0 + h).round() as usize).min(size) {
            for x in x0.round() as usize..((x0 + w).round() as usize).min(size) {
                img[y * size + x] = level;
            }
        }
    }
    let bumps = 1 + rng.index(3);
    for _ in 0..bumps {
        let (cy, cx) = (rng.uniform_in(0.0, s), rng.uniform_in(0.0, s));
        let width = rng.uniform_in(0.08, 0.25) * s;
        let amp = rng.uniform_in(-0.3, 0.3);
        for y in 0..size {
            for x in 0..size {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                img[y * size + x] += amp * (-d2 / (2.0 * width * width)).exp();
            }
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Tensor::image(1, size, size, img).expect("finite")
}

/// `count` cartoons; item `i` depends only on `(seed, i)`.
pub fn procedural_corpus(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    let base = Rng::new(seed);
    (0..count)
        .map(|i| cartoon(size, &mut base.split(i as u64)))
        .collect()
}

/// Mirror image along the horizontal and/or vertical axis.
pub fn flip(x: &Tensor, horizontal: bool, vertical: bool) -> Tensor {
    let (c, h, w) = x.dims3();
    let mut out = x.clone();
    let src = x.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let sy = if vertical { h - 1 - y } else { y };
            for xx in 0..w {
                let sx = if horizontal { w - 1 - xx } else { xx };
                dst[(ch * h + y) * w + xx] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    out
}

/// `patch x patch` crop with top-left corner `(y0, x0)`.
pub fn crop(x: &Tensor, y0: usize, x0: usize, patch: usize) -> Tensor {
    let (c, _, w) = x.dims3();
    let mut data = Vec::with_capacity(c * patch * patch);
    for ch in 0..c {
        for y in y0..y0 + patch {
            let row = (ch * x.dims3().1 + y) * w;
            data.extend_from_slice(&x.data()[row + x0..row + x0 + patch]);
        }
    }
    Tensor::image(c, patch, patch, data).expect("finite")
}

/// Random flip and random crop.
pub fn augment(x: &Tensor, patch: usize, rng: &mut Rng) -> Tensor {
    let (_, h, w) = x.dims3();
    let f = flip(x, rng.uniform() < 0.5, rng.uniform() < 0.5);
    let y0 = rng.index(h - patch + 1);
    let x0 = rng.index(w - patch + 1);
    crop(&f, y0, x0, patch)
}
