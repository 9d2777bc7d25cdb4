//! Periodic deblurring problems `z = H x + e` and the step-size / noise
//! level heuristic for plug-and-play restoration.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{arg_err, Error, Result};
use crate::io;
use crate::linear::{Convolution, LinearMap};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Blur operator, observation and noise level. Color images are blurred
/// channel by channel with the same kernel.
#[derive(Clone, Debug)]
pub struct BlurProblem {
    pub op: LinearMap,
    pub kernel: Tensor,
    pub observation: Tensor,
    pub noise_std: f64,
    pub truth: Option<Tensor>,
    /// `||H||^2`, the Lipschitz constant of the data-fit gradient.
    pub mu: f64,
    pub seed: u64,
}

fn blur_operator(kernel: &Tensor, shape: &[usize]) -> Result<(LinearMap, f64)> {
    let conv = Convolution::new(kernel.clone(), shape)?;
    let norm = conv.exact_norm();
    Ok((LinearMap::Convolution(Arc::new(conv)), norm * norm))
}

/// Blurs `truth` and adds Gaussian noise of std `noise_std`. With
/// `normalize` the kernel is rescaled so that `||H|| = 1`.
pub fn make_blur_problem(
    kernel: &Tensor,
    truth: &Tensor,
    noise_std: f64,
    rng: &mut Rng,
    normalize: bool,
) -> Result<BlurProblem> {
    if !(noise_std >= 0.0) {
        return Err(arg_err!("noise std must be >= 0, got {noise_std}"));
    }
    if kernel.max_abs() == 0.0 {
        return Err(arg_err!("zero blur kernel"));
    }
    let (_, norm_sq) = blur_operator(kernel, truth.shape())?;
    let kernel = if normalize {
        kernel.scale(1.0 / norm_sq.sqrt())
    } else {
        kernel.clone()
    };
    let (op, mu) = blur_operator(&kernel, truth.shape())?;
    let seed = rng.key();
    let mut observation = op.apply(truth)?;
    if noise_std > 0.0 {
        observation.axpy(noise_std, &Tensor::randn(truth.shape(), rng));
    }
    Ok(BlurProblem {
        op,
        kernel,
        observation,
        noise_std,
        truth: Some(truth.clone()),
        mu,
        seed,
    })
}

impl BlurProblem {
    /// Rebuilds a problem from its parts (used when loading bundles).
    pub fn from_parts(
        kernel: Tensor,
        observation: Tensor,
        noise_std: f64,
        truth: Option<Tensor>,
        seed: u64,
    ) -> Result<Self> {
        if let Some(t) = &truth {
            t.check_same_shape(&observation, "truth vs observation")?;
        }
        let (op, mu) = blur_operator(&kernel, observation.shape())?;
        if !(mu > 0.0) {
            return Err(arg_err!("zero blur kernel"));
        }
        Ok(Self {
            op,
            kernel,
            observation,
            noise_std,
            truth,
            mu,
            seed,
        })
    }

    /// `f(x) = 1/2 ||H x - z||^2`.
    pub fn datafit(&self, x: &Tensor) -> Result<f64> {
        Ok(0.5 * self.residual(x)?.norm_sq())
    }

    fn residual(&self, x: &Tensor) -> Result<Tensor> {
        x.check_same_shape(&self.observation, "datafit")?;
        let mut r = self.op.apply(x)?;
        r -= &self.observation;
        Ok(r)
    }

    /// Writes `kernel.ntf`, `observation.ntf`, `truth.ntf` (if known) and
    /// `meta` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        io::save_ntf(&self.kernel, dir.join("kernel.ntf"))?;
        io::save_ntf(&self.observation, dir.join("observation.ntf"))?;
        if let Some(t) = &self.truth {
            io::save_ntf(t, dir.join("truth.ntf"))?;
        }
        let meta = format!(
            "nu={}\nmu={}\nseed={}\n",
            self.noise_std, self.mu, self.seed
        );
        fs::write(dir.join("meta"), meta)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let kernel = io::load_ntf(dir.join("kernel.ntf"))?;
        let observation = io::load_ntf(dir.join("observation.ntf"))?;
        let truth_path = dir.join("truth.ntf");
        let truth = if truth_path.exists() {
            Some(io::load_ntf(truth_path)?)
        } else {
            None
        };
        let text = fs::read_to_string(dir.join("meta"))?;
        let meta = parse_key_values(&text)?;
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Format(format!("meta lacks '{k}'")))
        };
        let nu: f64 = get("nu")?
            .parse()
            .map_err(|_| Error::Format("bad nu".into()))?;
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|_| Error::Format("bad seed".into()))?;
        Self::from_parts(kernel, observation, nu, truth, seed)
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key=value", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// `grad f(x) = H^T (H x - z)`.
pub fn grad_datafit(prob: &BlurProblem, x: &Tensor) -> Result<Tensor> {
    let r = prob.residual(x)?;
    prob.op.adjoint(&r)
}

/// `nu_eff = 2 nu ||h||_2`, the noise level a denoiser sees inside a
/// forward-backward iteration.
pub fn effective_noise(prob: &BlurProblem) -> f64 {
    effective_noise_from(prob.noise_std, prob.kernel.norm())
}

pub fn effective_noise_from(noise_std: f64, kernel_norm: f64) -> f64 {
    2.0 * noise_std * kernel_norm
}

/// `(gamma, sigma) = (1.99 / mu, gamma * nu_eff)`.
pub fn recommend_params(prob: &BlurProblem) -> Result<(f64, f64)> {
    recommend_params_from(prob.mu, effective_noise(prob))
}

pub fn recommend_params_from(mu: f64, nu_eff: f64) -> Result<(f64, f64)> {
    if !(mu > 0.0) {
        return Err(arg_err!("mu must be positive, got {mu}"));
    }
    let gamma = 1.99 / mu;
    Ok((gamma, gamma * nu_eff))
}
