//! `mpnp`: training, certification and plug-and-play deblurring with
//! firmly nonexpansive denoisers.
//!
//! Exit codes: 0 success (or certified), 1 certification failed, 2 usage
//! or input error, 3 numerical failure.

mod manifest;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use monotone_pnp::certify::{certification_probes, certify};
use monotone_pnp::inverse::{make_blur_problem, recommend_params, BlurProblem};
use monotone_pnp::io::{save_ntf, save_pnm};
use monotone_pnp::metrics::MetricPair;
use monotone_pnp::mmo::{CertReport, Resolvent};
use monotone_pnp::net::checkpoint::{load_network, save_network};
use monotone_pnp::net::{penalty_grad, QMap};
use monotone_pnp::solve::{fb_solve, fb_step, l1_resolvent, tv_resolvent, SolveConfig, SolveStatus};
use monotone_pnp::train::approx::{fit_resolvent, ApproxConfig, ApproxTarget};
use monotone_pnp::train::data::{cartoon, procedural_corpus};
use monotone_pnp::train::{init_network, train_from, TrainConfig, TrainHooks};
use monotone_pnp::{kernels, linear, Error, LinearMap, Rng, Tensor};

use manifest::Manifest;

const CERTIFIED: u8 = 0;
const NOT_CERTIFIED: u8 = 1;
const USAGE: u8 = 2;
const NUMERICAL: u8 = 3;

/// Largest violation of the firm-nonexpansiveness inequality accepted by
/// `demo-approx`.
const DEMO_CERT_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "mpnp", version, about = "Firmly nonexpansive denoisers for plug-and-play restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a residual denoiser on the procedural corpus.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Main-phase iterations.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Estimate ||dQ|| on noisy probes; exit 0 iff every estimate is <= 1.
    Certify {
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        /// Power iterations per probe.
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Noise level of the probes.
        #[arg(long, default_value_t = 0.0075)]
        sigma: f64,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
    /// Write a synthetic blur problem directory.
    MakeProblem {
        #[arg(long)]
        out: PathBuf,
        /// gaussian, motion, square, dirac, or a kernel file.
        #[arg(long, default_value = "gaussian")]
        kernel: String,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep the kernel as given instead of normalizing ||H|| to 1.
        #[arg(long)]
        raw: bool,
    },
    /// Forward-backward deblurring with a trained denoiser or a baseline.
    Deblur {
        problem: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Network checkpoint; required for the pnp baseline.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "pnp", value_parser = ["pnp", "l1", "tv"])]
        baseline: String,
        /// Step size; defaults to 1.99 / mu.
        #[arg(long)]
        gamma: Option<f64>,
        /// Regularization weight of the l1 and tv backward steps; defaults
        /// to the recommended denoising level.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
    },
    /// Fit a residual net to a scalar resolvent and certify it.
    DemoApprox {
        #[arg(long)]
        out: PathBuf,
        /// identity, soft-threshold:TAU or interval:LO:HI.
        #[arg(long, default_value = "soft-threshold:0.5")]
        target: String,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 4000)]
        iters: usize,
        #[arg(long, default_value_t = 1e-2)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the main kernels.
    Bench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl fmt::Display) -> Self {
        Self {
            code: USAGE,
            message: message.to_string(),
        }
    }

    fn numerical(message: impl fmt::Display) -> Self {
        Self {
            code: NUMERICAL,
            message: message.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => Self::numerical(e),
            _ => Self::usage(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::usage(e)
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    let argv: Vec<String> = std::env::args().collect();
    let code = match run(cli.command, &argv) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("mpnp: {}", f.message);
            f.code
        }
    };
    ExitCode::from(code)
}

fn run(command: Command, argv: &[String]) -> Outcome {
    match command {
        Command::Train { config, out, seed, lambda, iters } => cmd_train(&config, &out, seed, lambda, iters, argv),
        Command::Certify { checkpoint, out, probes, iters, seed, sigma, size } => {
            cmd_certify(&checkpoint, &out, probes, iters, seed, sigma, size, argv)
        }
        Command::MakeProblem { out, kernel, noise, size, seed, raw } => {
            cmd_make_problem(&out, &kernel, noise, size, seed, !raw, argv)
        }
        Command::Deblur { problem, out, checkpoint, baseline, gamma, sigma, iters } => {
            cmd_deblur(&problem, &out, checkpoint.as_deref(), &baseline, gamma, sigma, iters, argv)
        }
        Command::DemoApprox { out, target, dim, iters, lambda, seed } => {
            cmd_demo_approx(&out, &target, dim, iters, lambda, seed, argv)
        }
        Command::Bench { out, iters, seed } => cmd_bench(&out, iters, seed, argv),
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn cmd_train(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    lambda: Option<f64>,
    iters: Option<usize>,
    argv: &[String],
) -> Outcome {
    let text = read_input(config_path)?;
    let text = String::from_utf8(text).map_err(|_| Failure::usage("config is not UTF-8"))?;
    let mut config = TrainConfig::from_key_values(&text)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(l) = lambda {
        config.lambda = l;
    }
    if let Some(n) = iters {
        config.iterations = n;
    }
    config.validate()?;
    let mut manifest = Manifest::start("train", argv, out);
    manifest.config(config_path, config.seed);
    manifest.hash_input(text.as_bytes());
    fs::create_dir_all(out)?;
    let corpus = procedural_corpus(config.corpus_size, config.image_size, config.seed);
    let val = procedural_corpus(config.val_size, config.image_size, config.seed ^ 0x5eed);
    let ckpt_dir = out.join("checkpoints");
    if config.checkpoint_every > 0 {
        fs::create_dir_all(&ckpt_dir)?;
    }
    let hooks = TrainHooks {
        validation: &val,
        checkpoint_dir: (config.checkpoint_every > 0).then_some(ckpt_dir.as_path()),
    };
    let net = init_network(&config, 1)?;
    let (net, log) = train_from(net, &corpus, &config, hooks)?;
    save_network(&net, out.join("net.nnc"))?;
    fs::write(out.join("train_log.csv"), log.to_csv(true))?;
    fs::write(out.join("config.txt"), config.to_key_values())?;
    manifest.finish()?;
    println!(
        "trained {} iterations, final loss {:e}",
        log.len(),
        log.loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_certify(
    checkpoint: &Path,
    out: &Path,
    probes: usize,
    iters: usize,
    seed: u64,
    sigma: f64,
    size: usize,
    argv: &[String],
) -> Outcome {
    if probes == 0 {
        return Err(Failure::usage("nothing to certify: --probes must be positive"));
    }
    let bytes = read_input(checkpoint)?;
    let net = load_network(checkpoint)?;
    let mut manifest = Manifest::start("certify", argv, out);
    manifest.seed(seed);
    manifest.hash_input(&bytes);
    fs::create_dir_all(out)?;
    let ys = certification_probes(probes, size, sigma, seed);
    let cert = certify(&net, &ys, iters, seed)?;
    if cert.sigmas.iter().any(|s| !s.is_finite()) {
        return Err(Failure::numerical("non-finite Jacobian norm estimate"));
    }
    fs::write(out.join("certify.csv"), cert.to_csv())?;
    manifest.finish()?;
    let m = cert.max_sigma_sq();
    if cert.passed() {
        println!("certified: max sigma^2 = {m:.6}");
        Ok(CERTIFIED)
    } else {
        println!("not certified: max sigma^2 = {m:.6} > 1");
        Ok(NOT_CERTIFIED)
    }
}

fn pick_kernel(name: &str) -> Result<Tensor, Failure> {
    if name == "dirac" {
        return Ok(kernels::dirac(1)?);
    }
    if let Some((_, k)) = kernels::standard_set().into_iter().find(|(n, _)| *n == name) {
        return Ok(k);
    }
    let path = Path::new(name);
    if path.exists() {
        return Ok(kernels::load_kernel(path)?);
    }
    Err(Failure::usage(format!(
        "unknown kernel '{name}' (gaussian, motion, square, dirac or a file)"
    )))
}

fn cmd_make_problem(
    out: &Path,
    kernel: &str,
    noise: f64,
    size: usize,
    seed: u64,
    normalize: bool,
    argv: &[String],
) -> Outcome {
    let k = pick_kernel(kernel)?;
    let mut manifest = Manifest::start("make-problem", argv, out);
    manifest.seed(seed);
    let mut rng = Rng::new(seed);
    let truth = cartoon(size, &mut rng.split(0));
    let prob = make_blur_problem(&k, &truth, noise, &mut rng, normalize)?;
    prob.save(out)?;
    manifest.finish()?;
    println!("wrote {} (mu = {:.6})", out.display(), prob.mu);
    Ok(0)
}

fn haar_levels(shape: &[usize]) -> usize {
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    (0..=3)
        .rev()
        .find(|&l| h % (1 << l) == 0 && w % (1 << l) == 0)
        .unwrap_or(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_deblur(
    problem: &Path,
    out: &Path,
    checkpoint: Option<&Path>,
    baseline: &str,
    gamma: Option<f64>,
    sigma: Option<f64>,
    iters: usize,
    argv: &[String],
) -> Outcome {
    let prob = BlurProblem::load(problem)?;
    let (gamma_rec, sigma_rec) = recommend_params(&prob)?;
    let gamma = gamma.unwrap_or(gamma_rec);
    let sigma = sigma.unwrap_or(sigma_rec);
    if gamma >= 2.0 / prob.mu {
        return Err(Failure::usage(format!(
            "step size {gamma} violates gamma < 2/mu = {}",
            2.0 / prob.mu
        )));
    }
    let mut manifest = Manifest::start("deblur", argv, out);
    manifest.hash_input(&read_input(&problem.join("observation.ntf"))?);
    manifest.hash_input(&read_input(&problem.join("kernel.ntf"))?);
    let shape = prob.observation.shape().to_vec();
    let j: Resolvent = match baseline {
        "pnp" => {
            let path = checkpoint.ok_or_else(|| Failure::usage("the pnp baseline needs --checkpoint"))?;
            manifest.hash_input(&read_input(path)?);
            load_network(path)?.into_resolvent(&shape)?
        }
        "l1" => {
            let levels = haar_levels(&shape);
            let psi = if levels == 0 {
                LinearMap::identity(&shape)
            } else {
                linear::haar_synthesis(&shape, levels)?
            };
            l1_resolvent(&shape, sigma, psi)?
        }
        "tv" => tv_resolvent(&shape, sigma, 100)?,
        other => return Err(Failure::usage(format!("unknown baseline '{other}'"))),
    };
    fs::create_dir_all(out)?;
    let report = fb_solve(&prob, &j, &SolveConfig::new(gamma, iters), &prob.observation)?;
    fs::write(out.join("solve.csv"), report.to_csv())?;
    save_ntf(&report.solution, out.join("reconstruction.ntf"))?;
    let ext = if shape[0] == 3 { "ppm" } else { "pgm" };
    save_pnm(&report.solution, out.join(format!("reconstruction.{ext}")))?;
    if let Some(truth) = &prob.truth {
        let obs = MetricPair::compute(&prob.observation, truth);
        let rec = MetricPair::compute(&report.solution, truth);
        fs::write(
            out.join("metrics.csv"),
            format!("image,psnr,ssim\nobservation,{obs}\nreconstruction,{rec}\n"),
        )?;
        println!("psnr {} -> {}", obs.psnr, rec.psnr);
    }
    fs::write(
        out.join("params.txt"),
        format!("baseline={baseline}\ngamma={gamma}\nsigma={sigma}\niters={iters}\n"),
    )?;
    manifest.finish()?;
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    match report.status {
        SolveStatus::Diverged => Err(Failure::numerical(format!(
            "iterates diverged after {} iterations",
            report.iterations
        ))),
        SolveStatus::NonFinite => Err(Failure::numerical("non-finite iterate")),
        _ => Ok(0),
    }
}

fn cmd_demo_approx(
    out: &Path,
    target: &str,
    dim: usize,
    iters: usize,
    lambda: f64,
    seed: u64,
    argv: &[String],
) -> Outcome {
    let target = ApproxTarget::parse(target)?;
    let config = ApproxConfig {
        dim,
        iterations: iters,
        lambda,
        seed,
        ..ApproxConfig::default()
    };
    let mut manifest = Manifest::start("demo-approx", argv, out);
    manifest.seed(seed);
    fs::create_dir_all(out)?;
    let outcome = fit_resolvent(&target, &config)?;
    if !outcome.sup_error.is_finite() {
        return Err(Failure::numerical("training diverged"));
    }
    fs::write(out.join("sup_error.csv"), outcome.curve_csv())?;
    let cert = &outcome.certification;
    fs::write(
        out.join("certification.csv"),
        format!("{}\n{}\n", CertReport::CSV_HEADER, cert.csv_row()),
    )?;
    save_network(&outcome.net, out.join("net.nnc"))?;
    manifest.finish()?;
    println!(
        "sup error {:.6}, max violation {:e}",
        outcome.sup_error, cert.max_violation
    );
    Ok(if cert.passed(DEMO_CERT_TOL) { CERTIFIED } else { NOT_CERTIFIED })
}

fn time_ms(reps: usize, mut f: impl FnMut() -> Result<(), Error>) -> Result<f64, Error> {
    let t = Instant::now();
    for _ in 0..reps {
        f()?;
    }
    Ok(t.elapsed().as_secs_f64() * 1e3 / reps as f64)
}

fn cmd_bench(out: &Path, iters: usize, seed: u64, argv: &[String]) -> Outcome {
    if iters == 0 {
        return Err(Failure::usage("--iters must be positive"));
    }
    let mut manifest = Manifest::start("bench", argv, out);
    manifest.seed(seed);
    fs::create_dir_all(out)?;
    let config = TrainConfig { seed, ..TrainConfig::default() };
    let net = init_network(&config, 1)?;
    let mut rng = Rng::new(seed);
    let x = cartoon(32, &mut rng);
    let cot = Tensor::randn(&[1, 32, 32], &mut rng);
    let prob = make_blur_problem(&kernels::standard_set()[0].1, &x, 0.01, &mut rng, true)?;
    let j = net.clone().into_resolvent(&[1, 32, 32])?;
    let rows = [
        ("forward", time_ms(iters, || net.forward(&x).map(drop))?),
        ("vjp", time_ms(iters, || net.vjp(&x, &cot).map(drop))?),
        (
            "penalty_grad_5",
            time_ms(iters, || {
                penalty_grad(&QMap::reflected(&net), &x, 5, &mut rng.split(1)).map(drop)
            })?,
        ),
        ("fb_step", time_ms(iters, || fb_step(&prob, &j, 1.0, &x).map(drop))?),
    ];
    let mut csv = String::from("op,reps,ms_per_call\n");
    for (name, ms) in rows {
        csv.push_str(&format!("{name},{iters},{ms:.4}\n"));
        println!("{name:>16}: {ms:.3} ms");
    }
    fs::write(out.join("bench.csv"), csv)?;
    manifest.finish()?;
    Ok(0)
}
