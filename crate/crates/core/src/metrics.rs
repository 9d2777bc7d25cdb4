//! Image quality metrics and result tables.
//!
//! Both metrics assume images normalized to peak 1. SSIM is the global
//! (single window over the whole image) variant, so values differ from the
//! usual 11x11 Gaussian-window SSIM of other tools.

use std::fmt;

use crate::tensor::Tensor;

const SSIM_C1: f64 = 1e-4;
const SSIM_C2: f64 = 9e-4;

/// `20 log10(sqrt(K) / ||x - reference||)`; `+inf` for identical images.
pub fn psnr(x: &Tensor, reference: &Tensor) -> f64 {
    assert!(x.same_shape(reference), "psnr: shape mismatch");
    let err = x.distance(reference);
    if err == 0.0 {
        return f64::INFINITY;
    }
    20.0 * ((x.len() as f64).sqrt() / err).log10()
}

/// Global structural similarity.
pub fn ssim(x: &Tensor, reference: &Tensor) -> f64 {
    assert!(x.same_shape(reference), "ssim: shape mismatch");
    let n = x.len() as f64;
    let (mx, my) = (x.sum() / n, reference.sum() / n);
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in x.data().iter().zip(reference.data()) {
        let (da, db) = (a - mx, b - my);
        vx += da * da;
        vy += db * db;
        cov += da * db;
    }
    let (vx, vy, cov) = (vx / n, vy / n, cov / n);
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricPair {
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricPair {
    pub fn compute(x: &Tensor, reference: &Tensor) -> Self {
        Self {
            psnr: psnr(x, reference),
            ssim: ssim(x, reference),
        }
    }
}

/// Formats a metric value; infinities become `inf`.
pub fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.6}")
    }
}

/// Parses a value written by [`fmt_value`].
pub fn parse_value(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

impl fmt::Display for MetricPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", fmt_value(self.psnr), fmt_value(self.ssim))
    }
}

/// Method-by-kernel table of mean PSNR values.
#[derive(Clone, Debug, Default)]
pub struct ResultTable {
    columns: Vec<String>,
    rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn set(&mut self, method: &str, column: &str, value: f64) {
        let c = match self.columns.iter().position(|k| k == column) {
            Some(c) => c,
            None => {
                self.columns.push(column.to_string());
                for (_, r) in &mut self.rows {
                    r.push(None);
                }
                self.columns.len() - 1
            }
        };
        let width = self.columns.len();
        let row = match self.rows.iter().position(|(m, _)| m == method) {
            Some(r) => r,
            None => {
                self.rows.push((method.to_string(), vec![None; width]));
                self.rows.len() - 1
            }
        };
        self.rows[row].1[c] = Some(value);
    }

    pub fn get(&self, method: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|k| k == column)?;
        self.rows.iter().find(|(m, _)| m == method)?.1[c]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (m, vals) in &self.rows {
            s.push_str(m);
            for v in vals {
                s.push(',');
                if let Some(v) = v {
                    s.push_str(&fmt_value(*v));
                }
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn psnr_constant_offset() {
        let r = Tensor::zeros(&[10, 10]);
        let x = Tensor::full(&[10, 10], 0.1);
        assert!((psnr(&x, &r) - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&r, &r), f64::INFINITY);
        assert_eq!(MetricPair::compute(&r, &r).to_string(), "inf,1.000000");
    }

    #[test]
    fn ssim_cases() {
        let mut rng = Rng::new(0);
        let r = Tensor::uniform(&[1, 8, 8], 0.0, 1.0, &mut rng);
        assert!((ssim(&r, &r) - 1.0).abs() < 1e-15);
        let c = Tensor::full(&[4], 0.5);
        assert_eq!(ssim(&c, &c), 1.0);
        let m = r.sum() / r.len() as f64;
        let anti = r.map(|v| 2.0 * m - v);
        assert!(ssim(&anti, &r) < 0.0);
    }

    #[test]
    fn table_csv() {
        let mut t = ResultTable::new(&["a", "b"]);
        t.set("pnp", "a", 30.0);
        t.set("tv", "b", f64::INFINITY);
        t.set("pnp", "c", 1.5);
        assert_eq!(t.get("pnp", "c"), Some(1.5));
        assert_eq!(
            t.to_csv(),
            "method,a,b,c\npnp,30.000000,,1.500000\ntv,,inf,\n"
        );
        assert_eq!(parse_value("inf"), Some(f64::INFINITY));
    }
}
