use std::path::Path;

use crate::error::{arg_err, Error, Result};
use crate::inverse::parse_key_values;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataLoss {
    L2,
    L1,
}

/// Training hyperparameters, network shape and toy-corpus settings.
///
/// Parsed from flat `key=value` text; unknown keys are rejected so typos do
/// not silently fall back to defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Hinge margin: the penalty is `lambda * max(sigma_hat^2, 1 - epsilon)`.
    pub epsilon: f64,
    /// Training noise std.
    pub sigma: f64,
    /// Draw the noise std uniformly from `[0, sigma]` per item.
    pub sigma_uniform: bool,
    pub batch: usize,
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient norm clip; 0 disables clipping.
    pub clip: f64,
    /// Fraction of the iterations after which the rate is divided by 10.
    pub lr_drop_at: f64,
    pub power_iters: usize,
    pub seed: u64,
    pub loss: DataLoss,
    /// Iterations of the initial phase with `lambda = 0` and noise std
    /// uniform in `[0, pretrain_sigma_max]`.
    pub pretrain_iters: usize,
    pub pretrain_sigma_max: f64,
    /// Write a checkpoint every this many iterations (0: never).
    pub checkpoint_every: usize,
    /// Validation PSNR every this many iterations (0: never).
    pub val_every: usize,
    pub hidden: usize,
    pub depth: usize,
    pub slope: f64,
    pub corpus_size: usize,
    pub val_size: usize,
    pub image_size: usize,
    /// Side of the random training crops; equal to `image_size` for
    /// whole images.
    pub patch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            epsilon: 0.05,
            sigma: 0.1,
            sigma_uniform: false,
            batch: 8,
            iterations: 200,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip: 1.0,
            lr_drop_at: 0.8,
            power_iters: 5,
            seed: 0,
            loss: DataLoss::L2,
            pretrain_iters: 0,
            pretrain_sigma_max: 0.1,
            checkpoint_every: 0,
            val_every: 0,
            hidden: 16,
            depth: 5,
            slope: crate::net::DEFAULT_LEAKY_SLOPE,
            corpus_size: 64,
            val_size: 8,
            image_size: 32,
            patch: 16,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Format(format!("bad value '{v}' for '{key}'")))
}

impl TrainConfig {
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_key_values(text)? {
            let v = v.as_str();
            match k.as_str() {
                "lambda" => c.lambda = parse(&k, v)?,
                "epsilon" => c.epsilon = parse(&k, v)?,
                "sigma" => c.sigma = parse(&k, v)?,
                "sigma_uniform" => c.sigma_uniform = parse(&k, v)?,
                "batch" => c.batch = parse(&k, v)?,
                "iterations" => c.iterations = parse(&k, v)?,
                "lr" => c.lr = parse(&k, v)?,
                "beta1" => c.beta1 = parse(&k, v)?,
                "beta2" => c.beta2 = parse(&k, v)?,
                "adam_eps" => c.adam_eps = parse(&k, v)?,
                "clip" => c.clip = parse(&k, v)?,
                "lr_drop_at" => c.lr_drop_at = parse(&k, v)?,
                "power_iters" => c.power_iters = parse(&k, v)?,
                "seed" => c.seed = parse(&k, v)?,
                "loss" => {
                    c.loss = match v {
                        "l2" => DataLoss::L2,
                        "l1" => DataLoss::L1,
                        _ => return Err(Error::Format(format!("loss must be l2 or l1, got '{v}'"))),
                    }
                }
                "pretrain_iters" => c.pretrain_iters = parse(&k, v)?,
                "pretrain_sigma_max" => c.pretrain_sigma_max = parse(&k, v)?,
                "checkpoint_every" => c.checkpoint_every = parse(&k, v)?,
                "val_every" => c.val_every = parse(&k, v)?,
                "hidden" => c.hidden = parse(&k, v)?,
                "depth" => c.depth = parse(&k, v)?,
                "slope" => c.slope = parse(&k, v)?,
                "corpus_size" => c.corpus_size = parse(&k, v)?,
                "val_size" => c.val_size = parse(&k, v)?,
                "image_size" => c.image_size = parse(&k, v)?,
                "patch" => c.patch = parse(&k, v)?,
                _ => return Err(Error::Format(format!("unknown key '{k}'"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_key_values(&std::fs::read_to_string(path)?)
    }

    pub fn to_key_values(&self) -> String {
        let loss = match self.loss {
            DataLoss::L2 => "l2",
            DataLoss::L1 => "l1",
        };
        format!(
            "lambda={}\nepsilon={}\nsigma={}\nsigma_uniform={}\nbatch={}\niterations={}\nlr={}\n\
             beta1={}\nbeta2={}\nadam_eps={}\nclip={}\nlr_drop_at={}\npower_iters={}\nseed={}\n\
             loss={loss}\npretrain_iters={}\npretrain_sigma_max={}\ncheckpoint_every={}\n\
             val_every={}\nhidden={}\ndepth={}\nslope={}\ncorpus_size={}\nval_size={}\n\
             image_size={}\npatch={}\n",
            self.lambda,
            self.epsilon,
            self.sigma,
            self.sigma_uniform,
            self.batch,
            self.iterations,
            self.lr,
            self.beta1,
            self.beta2,
            self.adam_eps,
            self.clip,
            self.lr_drop_at,
            self.power_iters,
            self.seed,
            self.pretrain_iters,
            self.pretrain_sigma_max,
            self.checkpoint_every,
            self.val_every,
            self.hidden,
            self.depth,
            self.slope,
            self.corpus_size,
            self.val_size,
            self.image_size,
            self.patch,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(arg_err!("{name} must be finite and >= 0, got {v}"))
            }
        };
        finite_nonneg("lambda", self.lambda)?;
        finite_nonneg("sigma", self.sigma)?;
        finite_nonneg("clip", self.clip)?;
        finite_nonneg("pretrain_sigma_max", self.pretrain_sigma_max)?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(arg_err!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.batch == 0 {
            return Err(arg_err!("batch must be positive"));
        }
        if !(self.lr > 0.0) || !(self.adam_eps > 0.0) {
            return Err(arg_err!("lr and adam_eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(arg_err!("Adam betas must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.lr_drop_at) {
            return Err(arg_err!("lr_drop_at must lie in [0, 1]"));
        }
        if self.lambda > 0.0 && self.power_iters == 0 {
            return Err(arg_err!("power_iters must be positive when lambda > 0"));
        }
        if self.hidden == 0 || self.depth < 2 {
            return Err(arg_err!("need hidden >= 1 and depth >= 2"));
        }
        if self.corpus_size == 0 || self.image_size < 3 {
            return Err(arg_err!("need a nonempty corpus of images at least 3 pixels wide"));
        }
        if self.patch < 3 || self.patch > self.image_size {
            return Err(arg_err!("patch must lie in 3..=image_size"));
        }
        Ok(())
    }
}
