//! Likelihood-ratio kernels and chain estimators of the ideal-observer statistic.
//!
//! For Gaussian noise the background-known-exactly ratio is
//! `ln L_BKE(g | b, s) = [s^T (g - b) - |s|^2 / 2] / sigma^2`. The estimators
//! average `L_BKE` over a Markov chain whose stationary law is the signal-absent
//! background posterior `p(b | g, H0)`:
//!
//! * conventional: the chain runs over object parameters of an [`ObjectModel`];
//! * latent: the chain runs over `z` with `b = G(z)`.
//!
//! For SKS tasks a fresh `alpha ~ p(alpha)` is drawn at each kept iteration,
//! so the joint chain targets `p(theta | g, H0) p(alpha)` and the `alpha` terms
//! cancel from the acceptance ratio.

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::generator::{generator_forward, generator_vjp, Generator};
use crate::image::{dot, sq_dist, Grid, Image};
use crate::imaging::{log_likelihood_from_residual, GaussianNoise, PsfParams};
use crate::lumpy::{sample_lumpy, LumpyModel, LumpyState};
use crate::mcmc::{run_chain, run_segment, CachedLangevin, ChainConfig, ChainResult, Proposal, RandomWalk, VectorState};
use crate::seed::Stream;
use crate::signal::{measured_signal_ske, measured_signal_sks, sample_signal_params, SkeSignalCfg, SksPrior};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SignalSpec {
    Ske(SkeSignalCfg),
    Sks(SksPrior),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionTask {
    pub signal: SignalSpec,
    pub noise: GaussianNoise,
    pub psf: PsfParams,
    pub grid: Grid,
}

impl DetectionTask {
    pub fn validate(&self) -> Result<()> {
        self.psf.validate()?;
        GaussianNoise::new(self.noise.sigma)?;
        match &self.signal {
            SignalSpec::Ske(cfg) => cfg.validate(),
            SignalSpec::Sks(prior) => prior.validate(self.grid),
        }
    }
}

/// `ln [p(g | b, s, H1) / p(g | b, H0)]` for Gaussian noise.
pub fn log_lambda_bke(g: &Image, b: &Image, s: &Image, noise: &GaussianNoise) -> Result<f64> {
    g.grid().check_same(&b.grid())?;
    g.grid().check_same(&s.grid())?;
    let cross: f64 = s
        .pixels()
        .iter()
        .zip(g.pixels().iter().zip(b.pixels()))
        .map(|(si, (gi, bi))| si * (gi - bi))
        .sum();
    Ok((cross - 0.5 * s.sum_sq()) / noise.variance())
}

/// Evaluates `ln L_BKE(g | b)` (or `ln L_BSKE` with a fresh signal draw) for
/// successive backgrounds of one measured image.
pub struct SignalIntegrand {
    g: Image,
    inv_var: f64,
    kind: IntegrandKind,
}

// One integrand per chain, so the inline stream costs nothing.
#[allow(clippy::large_enum_variant)]
enum IntegrandKind {
    Ske { s: Image, s_dot_g: f64, half_energy: f64 },
    Sks { prior: SksPrior, psf: PsfParams, rng: Stream },
}

impl SignalIntegrand {
    pub fn new(g: &Image, task: &DetectionTask, alpha_rng: Stream) -> Result<Self> {
        task.grid.check_same(&g.grid())?;
        let kind = match task.signal {
            SignalSpec::Ske(cfg) => {
                let s = measured_signal_ske(&cfg, &task.psf, task.grid)?;
                let s_dot_g = s.dot(g)?;
                let half_energy = 0.5 * s.sum_sq();
                IntegrandKind::Ske { s, s_dot_g, half_energy }
            }
            SignalSpec::Sks(prior) => IntegrandKind::Sks {
                prior,
                psf: task.psf,
                rng: alpha_rng,
            },
        };
        Ok(SignalIntegrand {
            g: g.clone(),
            inv_var: 1.0 / task.noise.variance(),
            kind,
        })
    }

    pub fn eval(&mut self, b: &Image) -> Result<f64> {
        match &mut self.kind {
            IntegrandKind::Ske { s, s_dot_g, half_energy } => {
                Ok((*s_dot_g - dot(s.pixels(), b.pixels()) - *half_energy) * self.inv_var)
            }
            IntegrandKind::Sks { prior, psf, rng } => {
                let alpha = sample_signal_params(prior, rng);
                let s = measured_signal_sks(&alpha, prior.amplitude, psf, self.g.grid())?;
                let sp = s.pixels();
                let cross = dot(sp, self.g.pixels()) - dot(sp, b.pixels());
                let energy = dot(sp, sp);
                Ok((cross - 0.5 * energy) * self.inv_var)
            }
        }
    }
}

fn residual_sq(g: &Image, b: &Image) -> f64 {
    sq_dist(g.pixels(), b.pixels())
}

/// An object model whose parameters are sampled by the conventional chain.
pub trait ObjectModel {
    type State: Clone;

    fn grid(&self) -> Grid;

    fn initial_state(&self, rng: &mut Stream) -> Result<Self::State>;

    fn log_prior(&self, state: &Self::State) -> f64;

    /// Noiseless measured background of the state.
    fn background<'a>(&self, state: &'a Self::State) -> &'a Image;

    fn propose(&self, state: &Self::State, rng: &mut Stream) -> Result<Proposal<Self::State>>;

    /// Scale of the local (move) proposal, tuned during warm-up.
    fn proposal_step(&self) -> f64;

    fn with_proposal_step(&self, step: f64) -> Self
    where
        Self: Sized;
}

impl ObjectModel for LumpyModel {
    type State = LumpyState;

    fn grid(&self) -> Grid {
        self.grid
    }

    /// A draw from the prior.
    fn initial_state(&self, rng: &mut Stream) -> Result<LumpyState> {
        Ok(self.state(sample_lumpy(&self.prior, self.grid, rng)))
    }

    fn log_prior(&self, state: &LumpyState) -> f64 {
        crate::lumpy::log_prior(&state.params, &self.prior, self.grid)
    }

    fn background<'a>(&self, state: &'a LumpyState) -> &'a Image {
        state.background()
    }

    fn propose(&self, state: &LumpyState, rng: &mut Stream) -> Result<Proposal<LumpyState>> {
        Ok(self.propose_state(state, rng))
    }

    fn proposal_step(&self) -> f64 {
        self.proposal.move_step
    }

    fn with_proposal_step(&self, step: f64) -> Self {
        let mut m = self.clone();
        m.proposal.move_step = step;
        m
    }
}

/// Conventional MCMC estimate of `ln Lambda(g)`; the chain runs over the
/// model's object parameters with target `ln p(g | b(theta), H0) + ln p(theta)`.
pub fn estimate_log_lr_conventional<M: ObjectModel + Clone>(
    g: &Image,
    task: &DetectionTask,
    model: &M,
    cfg: &ChainConfig,
    rng: &mut Stream,
) -> Result<ChainResult> {
    let init = model.initial_state(rng)?;
    estimate_log_lr_conventional_from(g, task, model, init, cfg, rng)
}

/// As [`estimate_log_lr_conventional`] with an explicit starting state.
pub fn estimate_log_lr_conventional_from<M: ObjectModel + Clone>(
    g: &Image,
    task: &DetectionTask,
    model: &M,
    init: M::State,
    cfg: &ChainConfig,
    rng: &mut Stream,
) -> Result<ChainResult> {
    task.validate()?;
    cfg.validate()?;
    model.grid().check_same(&g.grid())?;
    let mut integrand = SignalIntegrand::new(g, task, Stream::seed_from_u64(rng.random()))?;
    let n_pixels = g.grid().len();
    let noise = task.noise;
    let tempered = |beta: f64, model: &M| {
        let model = model.clone();
        move |s: &M::State| -> Result<f64> {
            let lp = model.log_prior(s);
            if lp == f64::NEG_INFINITY {
                return Ok(lp);
            }
            Ok(beta * log_likelihood_from_residual(residual_sq(g, model.background(s)), n_pixels, &noise) + lp)
        }
    };

    let mut model = model.clone();
    let mut state = init;
    for stage in cfg.warmup.schedule() {
        let target = tempered(stage.beta, &model);
        let kernel = |s: &M::State, rng: &mut Stream| model.propose(s, rng);
        let (next, n_acc) = run_segment(state, &target, &kernel, stage.iterations, rng)?;
        state = next;
        let step = cfg.warmup.adapt(model.proposal_step(), n_acc as f64 / stage.iterations as f64);
        model = model.with_proposal_step(step);
    }

    let target = tempered(1.0, &model);
    let kernel = |s: &M::State, rng: &mut Stream| model.propose(s, rng);
    let mut res = run_chain(state, &target, &kernel, cfg, |s| integrand.eval(model.background(s)), rng)?;
    res.proposal_step = Some(model.proposal_step());
    Ok(res)
}

/// Latent-space chain state with its cached generator output.
#[derive(Clone, Debug)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub image: Image,
    pub log_target: f64,
    grad: Option<Vec<f64>>,
}

impl VectorState for LatentState {
    fn position(&self) -> &[f64] {
        &self.z
    }
}

fn latent_gradient(s: &LatentState) -> Result<&[f64]> {
    s.grad.as_deref().ok_or(Error::GradientUnsupported)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatentKernel {
    RandomWalk { step: f64 },
    Langevin { step: f64 },
}

impl LatentKernel {
    pub fn from_config(cfg: &ChainConfig) -> Self {
        match cfg.mala_step {
            Some(step) => LatentKernel::Langevin { step },
            None => LatentKernel::RandomWalk { step: cfg.rwmh_step },
        }
    }
}

struct LatentPosterior<'a> {
    g: &'a Image,
    gen: &'a dyn Generator,
    noise: GaussianNoise,
    with_gradient: bool,
    /// Likelihood exponent; below 1 only during warm-up.
    beta: f64,
}

impl LatentPosterior<'_> {
    fn state(&self, z: Vec<f64>) -> Result<LatentState> {
        let prior = self.gen.latent_prior();
        let lp = prior.log_density(&z);
        if lp == f64::NEG_INFINITY {
            // Outside the latent support; the generator need not be evaluated.
            return Ok(LatentState {
                image: Image::zeros(self.g.grid()),
                z,
                log_target: f64::NEG_INFINITY,
                grad: self.with_gradient.then(|| vec![0.0; prior.dim]),
            });
        }
        let image = generator_forward(self.gen, &z)?;
        let ll = log_likelihood_from_residual(residual_sq(self.g, &image), image.grid().len(), &self.noise);
        let grad = if self.with_gradient {
            let inv_var = self.beta / self.noise.variance();
            let cot: Vec<f64> = self
                .g
                .pixels()
                .iter()
                .zip(image.pixels())
                .map(|(gi, bi)| (gi - bi) * inv_var)
                .collect();
            let cot = Image::from_pixels(image.grid(), cot)?;
            let mut grad = generator_vjp(self.gen, &z, &cot)?;
            for (a, b) in grad.iter_mut().zip(prior.grad_log_density(&z)) {
                *a += b;
            }
            Some(grad)
        } else {
            None
        };
        Ok(LatentState {
            z,
            image,
            log_target: self.beta * ll + lp,
            grad,
        })
    }
}

/// Latent-space MCMC estimate of `ln Lambda(g)` with `b = G(z)`, target
/// `ln p(g | G(z), H0) + ln p_z(z)`, started at the prior mode.
pub fn estimate_log_lr_gan(
    g: &Image,
    task: &DetectionTask,
    gen: &dyn Generator,
    cfg: &ChainConfig,
    rng: &mut Stream,
) -> Result<ChainResult> {
    let init = gen.latent_prior().origin();
    estimate_log_lr_gan_from(g, task, gen, init, cfg, rng)
}

pub fn estimate_log_lr_gan_from(
    g: &Image,
    task: &DetectionTask,
    gen: &dyn Generator,
    init: Vec<f64>,
    cfg: &ChainConfig,
    rng: &mut Stream,
) -> Result<ChainResult> {
    task.validate()?;
    gen.grid().check_same(&g.grid())?;
    let dim = gen.latent_prior().dim;
    if init.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: init.len() });
    }
    let kernel_kind = LatentKernel::from_config(cfg);
    let with_gradient = matches!(kernel_kind, LatentKernel::Langevin { .. });
    if with_gradient && !gen.has_gradient() {
        return Err(Error::GradientUnsupported);
    }
    cfg.validate()?;
    let posterior = |beta: f64| LatentPosterior {
        g,
        gen,
        noise: task.noise,
        with_gradient,
        beta,
    };
    let mut integrand = SignalIntegrand::new(g, task, Stream::seed_from_u64(rng.random()))?;
    let target = |s: &LatentState| -> Result<f64> { Ok(s.log_target) };
    let (mut step, langevin) = match kernel_kind {
        LatentKernel::RandomWalk { step } => (step, false),
        LatentKernel::Langevin { step } => (step, true),
    };

    let mut z = init;
    for stage in cfg.warmup.schedule() {
        let post = posterior(stage.beta);
        let build = |z: Vec<f64>| post.state(z);
        let start = post.state(z)?;
        let (end, n_acc) = if langevin {
            let kernel = CachedLangevin::new(step, dim, build, latent_gradient)?;
            run_segment(start, &target, &kernel, stage.iterations, rng)?
        } else {
            let kernel = RandomWalk::new(step, dim, build)?;
            run_segment(start, &target, &kernel, stage.iterations, rng)?
        };
        z = end.z;
        step = cfg.warmup.adapt(step, n_acc as f64 / stage.iterations as f64);
    }

    let post = posterior(1.0);
    let start = post.state(z)?;
    let build = |z: Vec<f64>| post.state(z);
    let integrand = |s: &LatentState| integrand.eval(&s.image);
    let mut res = if langevin {
        let kernel = CachedLangevin::new(step, dim, build, latent_gradient)?;
        run_chain(start, &target, &kernel, cfg, integrand, rng)?
    } else {
        let kernel = RandomWalk::new(step, dim, build)?;
        run_chain(start, &target, &kernel, cfg, integrand, rng)?
    };
    res.proposal_step = Some(step);
    Ok(res)
}
