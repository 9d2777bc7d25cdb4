//! Sampled certification of a trained denoiser: the largest Jacobian norm
//! of `Q = 2J - Id` over a set of probe images.

use rayon::prelude::*;

use crate::error::{arg_err, Result};
use crate::net::{jacobian_spectral_norm, Network, QMap};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{data::procedural_corpus, noisy_set};

/// Power iteration on an isometry lands a few ulps either side of 1.
pub const ROUNDING_SLACK: f64 = 1e-12;

/// Per-probe estimates of `||dQ(y)||`.
#[derive(Clone, Debug, PartialEq)]
pub struct Certification {
    pub sigmas: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl Certification {
    pub const CSV_HEADER: &'static str = "probe,sigma,sigma_sq";

    pub fn max_sigma_sq(&self) -> f64 {
        self.sigmas.iter().map(|s| s * s).fold(0.0, f64::max)
    }

    /// Whether every estimate satisfies `sigma^2 <= 1`, up to
    /// [`ROUNDING_SLACK`].
    pub fn passed(&self) -> bool {
        self.max_sigma_sq() <= 1.0 + ROUNDING_SLACK
    }

    /// One row per probe, then a `max` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (i, v) in self.sigmas.iter().enumerate() {
            s.push_str(&format!("{i},{v:e},{:e}\n", v * v));
        }
        let m = self.max_sigma_sq();
        s.push_str(&format!("max,{:e},{m:e}\n", m.sqrt()));
        s
    }
}

/// Noisy procedural images used as probes.
pub fn certification_probes(count: usize, size: usize, sigma: f64, seed: u64) -> Vec<Tensor> {
    let clean = procedural_corpus(count, size, seed);
    noisy_set(&clean, sigma, seed.wrapping_add(1))
}

/// Power iteration with `iters` steps at every probe; probe `l` draws its
/// start vector from `Rng::new(seed).split(l)`.
pub fn certify(net: &Network, probes: &[Tensor], iters: usize, seed: u64) -> Result<Certification> {
    if probes.is_empty() {
        return Err(arg_err!("nothing to certify: no probes"));
    }
    if iters == 0 {
        return Err(arg_err!("need at least one power iteration"));
    }
    let base = Rng::new(seed);
    let q = QMap::reflected(net);
    let sigmas = probes
        .par_iter()
        .enumerate()
        .map(|(l, y)| Ok(jacobian_spectral_norm(&q, y, iters, &mut base.split(l as u64))?.estimate))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Certification {
        sigmas,
        iterations: iters,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ActivationSpec, Layer};

    fn zero_residual() -> Network {
        let l = Layer::conv(1, 1, 3, vec![0.0; 9], vec![0.0], ActivationSpec::identity()).unwrap();
        Network::new(vec![l], true).unwrap()
    }

    #[test]
    fn identity_net_sits_on_the_boundary() {
        let probes = certification_probes(3, 8, 0.1, 0);
        let c = certify(&zero_residual(), &probes, 5, 1).unwrap();
        assert!(c.sigmas.iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert!(c.passed());
        let csv = c.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().last().unwrap().starts_with("max,"));
    }

    #[test]
    fn expansive_net_fails() {
        let mut net = zero_residual();
        net.layers_mut()[0].weight[4] = 0.5;
        let c = certify(&net, &certification_probes(2, 8, 0.1, 0), 5, 1).unwrap();
        assert!((c.max_sigma_sq() - 4.0).abs() < 1e-9);
        assert!(!c.passed());
        assert!(certify(&net, &[], 5, 1).is_err());
    }
}
